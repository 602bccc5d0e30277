#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "eccfm/backbone.hpp"
#include "eccfm/channel.hpp"
#include "eccfm/diffusion.hpp"
#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"
#include "eccfm/soft_syndrome.hpp"

namespace eccfm {

// Probabilities entering a log are clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-12;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> sigmoid_vec(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = sigmoid(logits[i]);
  return p;
}

// Single-bit cross entropy, natural log, clamped.
inline double bce_bit(double p, std::uint8_t bit) {
  double q = p;
  if (q < kProbClamp) q = kProbClamp;
  if (q > 1.0 - kProbClamp) q = 1.0 - kProbClamp;
  return bit ? -std::log(q) : -std::log(1.0 - q);
}

// Per-bit mean cross entropy against binary targets.
inline double bce_mean(const std::vector<double>& probs, const BitVec& bits) {
  if (probs.size() != bits.size()) throw Error("bce_mean: length mismatch");
  if (probs.empty()) throw Error("bce_mean: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0))
      throw Error("bce_mean: probabilities must lie in [0, 1]");
    acc += bce_bit(probs[i], bits[i]);
  }
  return acc / static_cast<double>(probs.size());
}

// Consistency objective: both trajectory points are pulled toward the clean
// bits, which bounds their mutual distance (see prop1_check).
inline double ec_cm_loss(const std::vector<double>& probs_t,
                         const std::vector<double>& probs_r,
                         const BitVec& x0_bits, double weight = 1.0) {
  if (!(weight > 0.0)) throw Error("ec_cm_loss: weight must be > 0");
  return weight * (bce_mean(probs_t, x0_bits) + bce_mean(probs_r, x0_bits));
}

struct TotalLossParts {
  double consistency = 0.0;
  double syn_t = 0.0;
  double syn_r = 0.0;
  double total = 0.0;
};

inline TotalLossParts total_loss(const std::vector<double>& probs_t,
                                 const std::vector<double>& probs_r,
                                 const BitVec& x0_bits,
                                 const ParityCheckMatrix& h, double sigma_t,
                                 double sigma_r, double lambda_syn,
                                 double weight = 1.0) {
  if (lambda_syn < 0.0) throw Error("total_loss: lambda must be >= 0");
  TotalLossParts parts;
  parts.consistency = ec_cm_loss(probs_t, probs_r, x0_bits, weight);
  parts.syn_t = soft_syndrome_loss(probs_t, h, sigma_t);
  parts.syn_r = soft_syndrome_loss(probs_r, h, sigma_r);
  parts.total = parts.consistency + lambda_syn * (parts.syn_t + parts.syn_r);
  return parts;
}

// Distillation-style objective: match the binarized output of a frozen
// target network evaluated at the less-noisy point.
inline double vanilla_cm_loss(const std::vector<double>& probs_t,
                              const BitVec& target_bits) {
  return bce_mean(probs_t, target_bits);
}

// Denoising objective: predict the multiplicative-noise bits directly.
inline double ddecc_loss(const std::vector<double>& noise_probs,
                         const BitVec& target_bits) {
  return bce_mean(noise_probs, target_bits);
}

// Per-bit check of |p - q|^2 <= bce(p, x0) + bce(q, x0). Holds for every
// p, q in [0, 1] and binary x0; returned indicators should be all ones.
inline BitVec prop1_check(const std::vector<double>& probs_t,
                          const std::vector<double>& probs_r,
                          const BitVec& x0_bits) {
  if (probs_t.size() != probs_r.size() || probs_t.size() != x0_bits.size())
    throw Error("prop1_check: length mismatch");
  BitVec ok(x0_bits.size());
  for (std::size_t i = 0; i < x0_bits.size(); ++i) {
    double gap = probs_t[i] - probs_r[i];
    double bound = bce_bit(probs_t[i], x0_bits[i]) + bce_bit(probs_r[i], x0_bits[i]);
    ok[i] = gap * gap <= bound ? 1 : 0;
  }
  return ok;
}

enum class Objective { eccfm, vanilla_cm, ddecc };
enum class ConditionKind { soft, hard };
enum class ConditionSigmaSource { diffusion, channel };

struct TrainConfig {
  Objective objective = Objective::eccfm;
  ConditionKind condition_kind = ConditionKind::soft;
  ConditionSigmaSource condition_sigma = ConditionSigmaSource::diffusion;
  int epochs = 1500;
  int steps_per_epoch = 1000;
  int batch_size = 128;
  double lr_init = 1e-4;
  double lr_final = 5e-7;
  double lambda_syn = 0.01;
  double alpha = 0.8;          // earlier trajectory point at r = alpha * t
  double ema_decay = 0.999;
  double weight_t = 1.0;       // w(t); constant schedule
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool random_codewords = false;        // default trains on the zero codeword
  std::optional<double> guard_ebn0_db;  // lowest Eb/N0 the model must cover

  void validate(const DiffusionSchedule& sched, double rate) const {
    if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1)
      throw ConfigError("train: epochs, steps and batch size must be >= 1");
    if (!(lr_init > 0.0) || !(lr_final > 0.0) || lr_final > lr_init)
      throw ConfigError("train: need 0 < lr_final <= lr_init");
    if (lambda_syn < 0.0) throw ConfigError("train: lambda must be >= 0");
    if (!(alpha >= 0.0) || alpha > 1.0) throw ConfigError("train: alpha in [0, 1]");
    if (!(ema_decay >= 0.0) || ema_decay >= 1.0)
      throw ConfigError("train: ema decay in [0, 1)");
    if (!(weight_t > 0.0)) throw ConfigError("train: weight must be > 0");
    if (guard_ebn0_db) {
      // Training noise must cover the operating point: the largest schedule
      // variance has to reach the channel variance the model will face.
      double sigma = ebn0_to_sigma(*guard_ebn0_db, rate);
      double top = sched.cumulative(static_cast<double>(sched.total_steps));
      if (top < sigma * sigma) {
        std::ostringstream msg;
        msg << "train: schedule covers variance " << top
            << " but Eb/N0 = " << *guard_ebn0_db << " dB needs " << sigma * sigma
            << "; raise beta_step or the step count";
        throw ConfigError(msg.str());
      }
    }
  }
};

// Cosine decay pinned to lr_init at epoch 0 and lr_final at the last epoch.
inline double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (cfg.epochs <= 1) return cfg.lr_init;
  double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr_final +
         0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(progress * 3.141592653589793238462643));
}

struct TrainState {
  ModelParams params;
  TrainStateBlock opt;           // adam moments, ema copy, counters
  RngStream rng{0, 1};
  std::vector<double> grad;      // scratch, param-sized
  ForwardTrace trace_t, trace_r; // reused workspaces
  std::vector<double> loss_ring; // most recent losses, fixed capacity
  std::size_t ring_next = 0;
  std::size_t ring_filled = 0;

  void record_loss(double loss) {
    if (loss_ring.empty()) loss_ring.assign(4096, 0.0);
    loss_ring[ring_next] = loss;
    ring_next = (ring_next + 1) % loss_ring.size();
    if (ring_filled < loss_ring.size()) ++ring_filled;
  }
};

inline TrainState init_train_state(const BackboneConfig& bc,
                                   const TrainConfig& tc) {
  TrainState st;
  st.params = init_params(bc, tc.seed);
  st.opt.adam_m.assign(st.params.values.size(), 0.0);
  st.opt.adam_v.assign(st.params.values.size(), 0.0);
  st.opt.ema = st.params.values;
  st.grad.assign(st.params.values.size(), 0.0);
  st.rng = RngStream(tc.seed, 1);
  return st;
}

// One materialized training example: clean word plus its trajectory pair.
struct SampleDraw {
  BitVec x0_bits;
  std::vector<double> x0_signal;
  TrajectoryPair pair;
};

inline std::vector<SampleDraw> draw_batch(const TrainConfig& cfg,
                                          const ParityCheckMatrix& h,
                                          const GeneratorMatrix& g,
                                          const DiffusionSchedule& sched,
                                          RngStream& rng, int batch_size) {
  std::vector<SampleDraw> batch(batch_size);
  for (auto& s : batch) {
    if (cfg.random_codewords) {
      BitVec msg(g.k);
      for (auto& b : msg) b = rng.bernoulli_half() ? 1 : 0;
      s.x0_bits = encode(msg, g);
    } else {
      s.x0_bits.assign(h.n(), 0);
    }
    s.x0_signal = modulate_bpsk(s.x0_bits);
    s.pair = sample_pair(s.x0_signal, sched, cfg.alpha, rng);
  }
  return batch;
}

namespace detail {

// soft_syndrome needs sigma > 0; alpha = 0 puts the earlier trajectory point
// at variance zero, where the saturated tanh limit is the correct value.
inline double floored_sigma(double variance) {
  double s = std::sqrt(variance);
  return s > 1e-6 ? s : 1e-6;
}

inline double condition_of(const std::vector<double>& x,
                           const ParityCheckMatrix& h, ConditionKind kind,
                           double sigma) {
  if (kind == ConditionKind::hard)
    return static_cast<double>(syndrome_error_sum(x, h));
  return soft_syndrome_condition(x, h, sigma);
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

struct BatchLossResult {
  double loss = 0.0;          // batch mean of the trained objective
  double consistency = 0.0;   // batch mean, eccfm only
  double syn_penalty = 0.0;   // batch mean of the regularizer sum, eccfm only
  double cond_mean = 0.0;     // mean condition value fed to the model
};

// Objective value and (optionally) parameter gradient on a fixed batch.
// Deterministic in (params, batch), which is what the finite-difference
// gradient checks rely on. ema_params supplies the frozen target network
// for the vanilla objective.
inline BatchLossResult batch_loss_grad(const ModelParams& params,
                                       const TrainConfig& cfg,
                                       const ParityCheckMatrix& h,
                                       const DiffusionSchedule& sched,
                                       const std::vector<SampleDraw>& batch,
                                       std::vector<double>* grad,
                                       const ModelParams* ema_params,
                                       ForwardTrace& trace_t,
                                       ForwardTrace& trace_r,
                                       std::string* nonfinite_dump = nullptr) {
  if (batch.empty()) throw Error("batch_loss_grad: empty batch");
  const int n = h.n();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  if (grad) {
    if (grad->size() != params.values.size())
      throw Error("batch_loss_grad: gradient vector has wrong length");
  }
  const double channel_sigma_for_cond =
      cfg.guard_ebn0_db ? ebn0_to_sigma(*cfg.guard_ebn0_db, 1.0 - static_cast<double>(h.m()) / h.n())
                        : 1.0;

  BatchLossResult out;
  std::vector<double> d_raw(n);
  for (const auto& s : batch) {
    const auto& pair = s.pair;
    const double var_t = sched.cumulative(static_cast<double>(pair.t));
    const double var_r = sched.cumulative(pair.r);
    const double sigma_t = detail::floored_sigma(var_t);
    const double sigma_r = detail::floored_sigma(var_r);
    const double cond_sigma_t = cfg.condition_sigma == ConditionSigmaSource::channel
                                    ? channel_sigma_for_cond : sigma_t;
    const double cond_sigma_r = cfg.condition_sigma == ConditionSigmaSource::channel
                                    ? channel_sigma_for_cond : sigma_r;

    double sample_loss = 0.0;
    if (cfg.objective == Objective::ddecc) {
      DecoderInput in_t = preprocess(pair.x_t, h);
      // The iterative decoder schedules on the hard syndrome sum, so that is
      // always the condition this objective trains with.
      in_t.condition = static_cast<double>(syndrome_error_sum(pair.x_t, h));
      out.cond_mean += in_t.condition * inv_b;
      auto raw = forward_noise(params, in_t, trace_t);
      if (!detail::all_finite(raw)) {
        sample_loss = std::numeric_limits<double>::quiet_NaN();
      } else {
        auto p = sigmoid_vec(raw);
        BitVec target = ddecc_target(s.x0_signal, pair.x_t);
        sample_loss = ddecc_loss(p, target);
        if (grad) {
          for (int i = 0; i < n; ++i)
            d_raw[i] = inv_b * (p[i] - target[i]) / n;
          backward_noise(params, in_t, trace_t, d_raw.data(), *grad);
        }
      }
    } else {
      DecoderInput in_t = preprocess(pair.x_t, h);
      DecoderInput in_r = preprocess(pair.x_r, h);
      in_t.condition = detail::condition_of(pair.x_t, h, cfg.condition_kind, cond_sigma_t);
      in_r.condition = detail::condition_of(pair.x_r, h, cfg.condition_kind, cond_sigma_r);
      out.cond_mean += 0.5 * (in_t.condition + in_r.condition) * inv_b;

      auto raw_t = forward_noise(params, in_t, trace_t);

      if (cfg.objective == Objective::vanilla_cm) {
        if (!ema_params)
          throw Error("batch_loss_grad: vanilla objective needs target params");
        auto raw_r = forward_noise(*ema_params, in_r, trace_r);
        if (!detail::all_finite(raw_t) || !detail::all_finite(raw_r)) {
          sample_loss = std::numeric_limits<double>::quiet_NaN();
        } else {
          auto p_t = sigmoid_vec(x0_logits_from_noise(raw_t, in_t.hard_bits));
          auto p_r = sigmoid_vec(x0_logits_from_noise(raw_r, in_r.hard_bits));
          BitVec target(p_r.size());
          for (std::size_t i = 0; i < p_r.size(); ++i)
            target[i] = p_r[i] > 0.5 ? 1 : 0;
          sample_loss = vanilla_cm_loss(p_t, target);
          if (grad) {
            for (int i = 0; i < n; ++i) {
              double dlogit = inv_b * (p_t[i] - target[i]) / n;
              d_raw[i] = in_t.hard_bits[i] ? -dlogit : dlogit;
            }
            backward_noise(params, in_t, trace_t, d_raw.data(), *grad);
          }
        }
      } else {
        auto raw_r = forward_noise(params, in_r, trace_r);
        if (!detail::all_finite(raw_t) || !detail::all_finite(raw_r)) {
          sample_loss = std::numeric_limits<double>::quiet_NaN();
        } else {
          auto p_t = sigmoid_vec(x0_logits_from_noise(raw_t, in_t.hard_bits));
          auto p_r = sigmoid_vec(x0_logits_from_noise(raw_r, in_r.hard_bits));
          auto parts = total_loss(p_t, p_r, s.x0_bits, h, sigma_t, sigma_r,
                                  cfg.lambda_syn, cfg.weight_t);
          sample_loss = parts.total;
          out.consistency += parts.consistency * inv_b;
          out.syn_penalty += (parts.syn_t + parts.syn_r) * inv_b;
          if (grad) {
            auto ss_t = soft_syndrome_loss_grad(p_t, h, sigma_t);
            for (int i = 0; i < n; ++i) {
              double dlogit = cfg.weight_t * (p_t[i] - s.x0_bits[i]) / n +
                              cfg.lambda_syn * ss_t[i] * p_t[i] * (1.0 - p_t[i]);
              dlogit *= inv_b;
              d_raw[i] = in_t.hard_bits[i] ? -dlogit : dlogit;
            }
            backward_noise(params, in_t, trace_t, d_raw.data(), *grad);
            auto ss_r = soft_syndrome_loss_grad(p_r, h, sigma_r);
            for (int i = 0; i < n; ++i) {
              double dlogit = cfg.weight_t * (p_r[i] - s.x0_bits[i]) / n +
                              cfg.lambda_syn * ss_r[i] * p_r[i] * (1.0 - p_r[i]);
              dlogit *= inv_b;
              d_raw[i] = in_r.hard_bits[i] ? -dlogit : dlogit;
            }
            backward_noise(params, in_r, trace_r, d_raw.data(), *grad);
          }
        }
      }
    }
    if (!std::isfinite(sample_loss)) {
      if (nonfinite_dump) {
        std::ostringstream ds;
        ds << "non-finite sample loss: t=" << pair.t << " r=" << pair.r
           << " var_t=" << var_t << " cond=";
        ds << (cfg.objective == Objective::ddecc ? "hard" : "per-config");
        ds << " x_t=[";
        for (double v : pair.x_t) ds << ' ' << v;
        ds << " ]";
        *nonfinite_dump = ds.str();
      }
      out.loss = sample_loss;
      return out;
    }
    out.loss += sample_loss * inv_b;
  }
  return out;
}

struct TrainStepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double consistency = 0.0;
  double syn_penalty = 0.0;
  double cond_mean = 0.0;
};

inline TrainStepRecord train_step(TrainState& st, const TrainConfig& cfg,
                                  const ParityCheckMatrix& h,
                                  const GeneratorMatrix& g,
                                  const DiffusionSchedule& sched, int epoch) {
  auto batch = draw_batch(cfg, h, g, sched, st.rng, cfg.batch_size);
  std::fill(st.grad.begin(), st.grad.end(), 0.0);
  ModelParams ema{st.params.config, st.opt.ema};
  std::string dump;
  auto res = batch_loss_grad(st.params, cfg, h, sched, batch, &st.grad,
                             cfg.objective == Objective::vanilla_cm ? &ema : nullptr,
                             st.trace_t, st.trace_r, &dump);
  if (!std::isfinite(res.loss)) {
    std::ostringstream msg;
    msg << "training aborted: non-finite loss at step " << st.opt.step
        << " epoch " << epoch;
    throw TrainingError(msg.str(), dump);
  }

  const double lr = cosine_lr(epoch, cfg);
  st.opt.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.opt.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.opt.step));
  for (std::size_t i = 0; i < st.params.values.size(); ++i) {
    double gi = st.grad[i];
    st.opt.adam_m[i] = cfg.adam_beta1 * st.opt.adam_m[i] + (1.0 - cfg.adam_beta1) * gi;
    st.opt.adam_v[i] = cfg.adam_beta2 * st.opt.adam_v[i] + (1.0 - cfg.adam_beta2) * gi * gi;
    double mhat = st.opt.adam_m[i] / bc1;
    double vhat = st.opt.adam_v[i] / bc2;
    st.params.values[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
  for (std::size_t i = 0; i < st.params.values.size(); ++i)
    st.opt.ema[i] = cfg.ema_decay * st.opt.ema[i] +
                    (1.0 - cfg.ema_decay) * st.params.values[i];
  st.opt.epoch = epoch;
  st.record_loss(res.loss);

  TrainStepRecord rec;
  rec.step = st.opt.step;
  rec.epoch = epoch;
  rec.lr = lr;
  rec.loss = res.loss;
  rec.consistency = res.consistency;
  rec.syn_penalty = res.syn_penalty;
  rec.cond_mean = res.cond_mean;
  return rec;
}

using StepCallback = std::function<void(const TrainStepRecord&)>;

inline void train_run(TrainState& st, const TrainConfig& cfg,
                      const ParityCheckMatrix& h, const GeneratorMatrix& g,
                      const DiffusionSchedule& sched,
                      const StepCallback& cb = {}) {
  cfg.validate(sched, static_cast<double>(g.k) / g.n);
  validate_params(st.params);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      auto rec = train_step(st, cfg, h, g, sched, epoch);
      if (cb) cb(rec);
    }
  }
}

}  // namespace eccfm
