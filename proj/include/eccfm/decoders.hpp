#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "eccfm/backbone.hpp"
#include "eccfm/channel.hpp"
#include "eccfm/diffusion.hpp"
#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"
#include "eccfm/soft_syndrome.hpp"
#include "eccfm/trainer.hpp"

namespace eccfm {

struct TraceRow {
  int e_hard = 0;
  double e_soft = 0.0;
};

struct DecodeOutcome {
  BitVec bits;
  bool converged = false;
  int steps_used = 0;
  std::vector<TraceRow> trace;  // filled only when tracing was requested
};

namespace detail {

inline bool syndrome_clear(const BitVec& bits, const ParityCheckMatrix& h) {
  for (auto b : hard_syndrome(bits, h))
    if (b) return false;
  return true;
}

}  // namespace detail

// Single forward pass conditioned on the scalar noise measure of y. A
// probability of exactly 0.5 (logit 0) decodes as bit 0, matching the
// sign(0) = +1 convention everywhere else.
inline DecodeOutcome decode_one_step(const ModelParams& params,
                                     const std::vector<double>& y,
                                     const ParityCheckMatrix& h, double sigma,
                                     ConditionKind cond = ConditionKind::soft) {
  DecoderInput in = preprocess(y, h);
  in.condition = cond == ConditionKind::hard
                     ? static_cast<double>(syndrome_error_sum(y, h))
                     : soft_syndrome_condition(y, h, sigma);
  ForwardTrace tr;
  auto logits = x0_logits_from_noise(forward_noise(params, in, tr), in.hard_bits);
  DecodeOutcome out;
  out.bits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.bits[i] = logits[i] > 0.0 ? 1 : 0;
  out.converged = detail::syndrome_clear(out.bits, h);
  out.steps_used = 1;
  return out;
}

// Fixed-step refinement: re-modulate the estimate, push it back to the
// renoise_fraction point of the schedule, decode again. One step leaves the
// generator untouched and reduces to decode_one_step.
inline DecodeOutcome decode_multi_step(const ModelParams& params,
                                       const std::vector<double>& y,
                                       const ParityCheckMatrix& h, double sigma,
                                       const DiffusionSchedule& sched,
                                       int n_steps, double renoise_fraction,
                                       RngStream& rng,
                                       ConditionKind cond = ConditionKind::soft) {
  if (n_steps < 1) throw Error("decode_multi_step: n_steps must be >= 1");
  if (!(renoise_fraction >= 0.0) || renoise_fraction > 1.0)
    throw Error("decode_multi_step: renoise_fraction must lie in [0, 1]");
  const double renoise_var =
      sched.cumulative(renoise_fraction * sched.total_steps);
  std::vector<double> x = y;
  double step_sigma = sigma;
  DecodeOutcome out;
  for (int s = 0; s < n_steps; ++s) {
    out = decode_one_step(params, x, h, step_sigma, cond);
    if (s + 1 == n_steps) break;
    x = modulate_bpsk(out.bits);
    if (renoise_var > 0.0) {
      const double sd = std::sqrt(renoise_var);
      for (double& v : x) v += sd * rng.normal();
      step_sigma = sd;
    } else {
      step_sigma = sigma;
    }
  }
  out.steps_used = n_steps;
  out.converged = detail::syndrome_clear(out.bits, h);
  return out;
}

// Iterative denoising scheduled by the hard syndrome error sum e: the step
// index is t = clamp(e, 1, N) and the update contracts x toward the
// predicted clean word,
//   x <- x - [sqrt(bt) * beta / (bt + beta)] * (x - sign(x) * eps_hat),
// with eps_hat = 1 - 2p the bipolar expectation of the predicted noise bits.
// Exits as soon as the hard decision is a codeword.
inline DecodeOutcome decode_ddecc(const ModelParams& params,
                                  const std::vector<double>& y,
                                  const ParityCheckMatrix& h, double sigma,
                                  const DiffusionSchedule& sched,
                                  int max_steps, bool want_trace = false) {
  if (max_steps < 0) throw Error("decode_ddecc: max_steps must be >= 0");
  std::vector<double> x = y;
  DecodeOutcome out;
  ForwardTrace tr;
  int e = syndrome_error_sum(x, h);
  while (true) {
    if (e == 0) {
      out.converged = true;
      break;
    }
    if (out.steps_used >= max_steps) break;
    DecoderInput in = preprocess(x, h);
    in.condition = static_cast<double>(e);
    auto p = sigmoid_vec(forward_noise(params, in, tr));
    int t = e < 1 ? 1 : (e > sched.total_steps ? sched.total_steps : e);
    const double bt = sched.cumulative(static_cast<double>(t));
    const double coef = std::sqrt(bt) * sched.beta_step / (bt + sched.beta_step);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sign = x[i] >= 0.0 ? 1.0 : -1.0;
      const double eps_hat = 1.0 - 2.0 * p[i];
      x[i] -= coef * (x[i] - sign * eps_hat);
    }
    ++out.steps_used;
    e = syndrome_error_sum(x, h);
    if (want_trace)
      out.trace.push_back({e, soft_syndrome_condition(x, h, sigma)});
  }
  out.bits = demodulate_hard(x);
  return out;
}

// Flooding sum-product decoder. Channel LLRs are 2y/sigma^2 (positive means
// bit 0); check-to-variable messages use the tanh product rule with
// leave-one-out prefix/suffix products; all LLRs are clamped to +-30.
inline DecodeOutcome decode_bp(const std::vector<double>& y,
                               const ParityCheckMatrix& h, double sigma,
                               int max_iters) {
  if (!(sigma > 0.0)) throw Error("decode_bp: sigma must be > 0");
  if (max_iters < 0) throw Error("decode_bp: max_iters must be >= 0");
  constexpr double kClamp = 30.0;
  auto clamp = [](double v) {
    return v > kClamp ? kClamp : (v < -kClamp ? -kClamp : v);
  };
  const int n = h.n(), m = h.m();
  std::vector<double> llr(n);
  for (int i = 0; i < n; ++i) llr[i] = clamp(2.0 * y[i] / (sigma * sigma));

  DecodeOutcome out;
  out.bits = demodulate_hard(y);
  if (detail::syndrome_clear(out.bits, h)) {
    out.converged = true;
    return out;
  }

  // messages indexed by (check, position within its support)
  std::vector<std::vector<double>> v2c(m), c2v(m);
  for (int j = 0; j < m; ++j) {
    const auto& sup = h.row_support(j);
    v2c[j].resize(sup.size());
    c2v[j].assign(sup.size(), 0.0);
    for (std::size_t e = 0; e < sup.size(); ++e) v2c[j][e] = llr[sup[e]];
  }

  std::vector<double> posterior(n);
  std::vector<double> tanh_half, prefix, suffix;
  for (int iter = 1; iter <= max_iters; ++iter) {
    for (int j = 0; j < m; ++j) {
      const auto& sup = h.row_support(j);
      const std::size_t w = sup.size();
      tanh_half.resize(w);
      for (std::size_t e = 0; e < w; ++e)
        tanh_half[e] = std::tanh(0.5 * v2c[j][e]);
      prefix.assign(w + 1, 1.0);
      suffix.assign(w + 1, 1.0);
      for (std::size_t e = 0; e < w; ++e) prefix[e + 1] = prefix[e] * tanh_half[e];
      for (std::size_t e = w; e > 0; --e) suffix[e - 1] = suffix[e] * tanh_half[e - 1];
      for (std::size_t e = 0; e < w; ++e) {
        double prod = prefix[e] * suffix[e + 1];
        if (prod > 1.0 - 1e-15) prod = 1.0 - 1e-15;
        if (prod < -1.0 + 1e-15) prod = -1.0 + 1e-15;
        c2v[j][e] = clamp(2.0 * std::atanh(prod));
      }
    }
    for (int i = 0; i < n; ++i) posterior[i] = llr[i];
    for (int j = 0; j < m; ++j) {
      const auto& sup = h.row_support(j);
      for (std::size_t e = 0; e < sup.size(); ++e)
        posterior[sup[e]] += c2v[j][e];
    }
    for (int i = 0; i < n; ++i) posterior[i] = clamp(posterior[i]);
    for (int i = 0; i < n; ++i) out.bits[i] = posterior[i] >= 0.0 ? 0 : 1;
    out.steps_used = iter;
    if (detail::syndrome_clear(out.bits, h)) {
      out.converged = true;
      return out;
    }
    for (int j = 0; j < m; ++j) {
      const auto& sup = h.row_support(j);
      for (std::size_t e = 0; e < sup.size(); ++e)
        v2c[j][e] = clamp(posterior[sup[e]] - c2v[j][e]);
    }
  }
  return out;
}

// Brute-force maximum likelihood: closest modulated codeword in Euclidean
// distance over all 2^k messages. Message index idx encodes bit j of the
// message as (idx >> j) & 1; distance ties keep the smallest index.
inline DecodeOutcome decode_ml_exhaustive(const std::vector<double>& y,
                                          const GeneratorMatrix& g,
                                          const ParityCheckMatrix& h) {
  if (g.k > 16)
    throw Error("decode_ml_exhaustive: k = " + std::to_string(g.k) +
                " exceeds the exhaustive-search guard (16)");
  if (y.size() != static_cast<std::size_t>(g.n))
    throw Error("decode_ml_exhaustive: length mismatch");
  DecodeOutcome out;
  double best = 0.0;
  BitVec msg(g.k);
  for (std::uint32_t idx = 0; idx < (1u << g.k); ++idx) {
    for (int j = 0; j < g.k; ++j) msg[j] = (idx >> j) & 1u;
    BitVec cand = encode(msg, g);
    double dist = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double s = cand[i] ? -1.0 : 1.0;
      double d = y[i] - s;
      dist += d * d;
    }
    if (idx == 0 || dist < best) {
      best = dist;
      out.bits = std::move(cand);
    }
  }
  out.converged = detail::syndrome_clear(out.bits, h);
  out.steps_used = 1;
  return out;
}

}  // namespace eccfm
