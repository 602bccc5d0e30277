#pragma once

#include <cmath>
#include <vector>

#include "eccfm/channel.hpp"
#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"

namespace eccfm {

// Floor applied to 1 - s_j before the log so an exactly violated check
// (product saturated at -1) yields a large but finite penalty.
inline constexpr double kSoftSynFloor = 1e-12;

// Number of unsatisfied checks after hard decision; the integer noise
// measure the iterative decoder schedules on.
inline int syndrome_error_sum(const std::vector<double>& y,
                              const ParityCheckMatrix& h) {
  BitVec s = hard_syndrome(demodulate_hard(y), h);
  int sum = 0;
  for (auto b : s) sum += b;
  return sum;
}

// Relaxed per-check violation probability: tanh(x_i / sigma^2) is the
// bipolar expectation of bit i under a Gaussian-channel posterior, and the
// product over a check's support is the expectation of the check parity, so
// s_j = (1 - prod) / 2 lies in [0, 1] with 0 = surely satisfied.
inline std::vector<double> soft_syndrome(const std::vector<double>& x,
                                         const ParityCheckMatrix& h,
                                         double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw Error("soft_syndrome: sigma must be positive and finite");
  if (x.size() != static_cast<std::size_t>(h.n()))
    throw Error("soft_syndrome: word length does not match n");
  const double inv_s2 = 1.0 / (sigma * sigma);
  std::vector<double> s(h.m());
  for (int j = 0; j < h.m(); ++j) {
    double prod = 1.0;
    for (int i : h.row_support(j)) prod *= std::tanh(x[i] * inv_s2);
    s[j] = 0.5 * (1.0 - prod);
  }
  return s;
}

// Averaged log-penalty of the relaxed syndrome: -(1/m) sum_j log(1 - s_j).
// Zero exactly when every check is surely satisfied, grows smoothly as
// reliabilities drop, and is the scalar the model is conditioned on.
inline double soft_syndrome_condition(const std::vector<double>& x,
                                      const ParityCheckMatrix& h,
                                      double sigma) {
  auto s = soft_syndrome(x, h, sigma);
  double acc = 0.0;
  for (double sj : s) {
    double u = 1.0 - sj;
    if (u < kSoftSynFloor) u = kSoftSynFloor;
    acc += std::log(u);
  }
  return -acc / static_cast<double>(h.m());
}

// d/dx of soft_syndrome_condition. Leave-one-out products are formed with
// prefix/suffix passes so a zero tanh factor does not poison the division.
inline std::vector<double> soft_syndrome_condition_grad(
    const std::vector<double>& x, const ParityCheckMatrix& h, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw Error("soft_syndrome_condition_grad: sigma must be positive and finite");
  if (x.size() != static_cast<std::size_t>(h.n()))
    throw Error("soft_syndrome_condition_grad: word length does not match n");
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double inv_m = 1.0 / static_cast<double>(h.m());
  std::vector<double> grad(x.size(), 0.0);
  std::vector<double> tau, prefix, suffix;
  for (int j = 0; j < h.m(); ++j) {
    const auto& sup = h.row_support(j);
    const std::size_t w = sup.size();
    tau.resize(w);
    for (std::size_t e = 0; e < w; ++e) tau[e] = std::tanh(x[sup[e]] * inv_s2);
    prefix.assign(w + 1, 1.0);
    suffix.assign(w + 1, 1.0);
    for (std::size_t e = 0; e < w; ++e) prefix[e + 1] = prefix[e] * tau[e];
    for (std::size_t e = w; e > 0; --e) suffix[e - 1] = suffix[e] * tau[e - 1];
    const double full = prefix[w];
    const double u = 0.5 * (1.0 + full);
    if (u < kSoftSynFloor) continue;  // clamped region: flat, no gradient
    for (std::size_t e = 0; e < w; ++e) {
      const double loo = prefix[e] * suffix[e + 1];
      const double dtau = (1.0 - tau[e] * tau[e]) * inv_s2;
      // d(-log u)/dx = -(1/u) * 0.5 * loo * dtau
      grad[sup[e]] += -inv_m * 0.5 * loo * dtau / u;
    }
  }
  return grad;
}

inline std::vector<double> probs_to_bipolar(const std::vector<double>& probs) {
  std::vector<double> v(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0) || !(probs[i] <= 1.0))
      throw Error("probs_to_bipolar: probabilities must lie in [0, 1]");
    v[i] = 1.0 - 2.0 * probs[i];
  }
  return v;
}

// Regularizer form: identical penalty evaluated on the bipolar expectations
// 1 - 2p of predicted bit probabilities.
inline double soft_syndrome_loss(const std::vector<double>& probs,
                                 const ParityCheckMatrix& h, double sigma) {
  return soft_syndrome_condition(probs_to_bipolar(probs), h, sigma);
}

// d/dprobs of soft_syndrome_loss (chain through v = 1 - 2p).
inline std::vector<double> soft_syndrome_loss_grad(
    const std::vector<double>& probs, const ParityCheckMatrix& h,
    double sigma) {
  auto g = soft_syndrome_condition_grad(probs_to_bipolar(probs), h, sigma);
  for (double& v : g) v *= -2.0;
  return g;
}

}  // namespace eccfm
