#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"

namespace eccfm {

// Linear variance schedule: step t contributes beta_step, so the cumulative
// variance after (real-valued) t steps is just beta_step * t. Real t keeps
// the consistency pair's earlier point r = alpha * t on the same schedule
// without rounding it to a grid index.
struct DiffusionSchedule {
  double beta_step = 0.01;
  int total_steps = 1;

  double cumulative(double t) const {
    if (t < 0.0 || t > static_cast<double>(total_steps) || !std::isfinite(t))
      throw Error("cumulative variance queried outside [0, total_steps]");
    return beta_step * t;
  }
};

// Step count tracks code size: n - k + 5 by default.
inline int default_total_steps(int n, int k) { return n - k + 5; }

inline DiffusionSchedule make_schedule(int n, int k, double beta_step = 0.01,
                                       std::optional<int> steps_override = {}) {
  if (!(beta_step > 0.0)) throw Error("beta_step must be > 0");
  if (n <= 0 || k <= 0 || k >= n) throw Error("schedule needs 0 < k < n");
  DiffusionSchedule s;
  s.beta_step = beta_step;
  s.total_steps = steps_override ? *steps_override : default_total_steps(n, k);
  if (s.total_steps < 1) throw Error("schedule needs at least one step");
  return s;
}

struct TrajectoryPair {
  int t = 1;                  // sampled step index, 1..total_steps
  double r = 0.0;             // earlier point alpha * t on the same schedule
  std::vector<double> x_t;
  std::vector<double> x_r;
  std::vector<double> eps;    // the shared draw, kept for tests/diagnostics
};

// Deterministic core: both trajectory points reuse one epsilon, so
// x_t - x_r = (sqrt(bt) - sqrt(br)) * eps holds exactly.
inline TrajectoryPair make_pair_at(const std::vector<double>& x0_signal,
                                   const DiffusionSchedule& sched, int t,
                                   double alpha, std::vector<double> eps) {
  if (t < 1 || t > sched.total_steps)
    throw Error("trajectory step t must lie in {1, ..., total_steps}");
  if (!(alpha >= 0.0) || alpha > 1.0) throw Error("alpha must lie in [0, 1]");
  if (eps.size() != x0_signal.size())
    throw Error("epsilon length does not match the signal");
  TrajectoryPair p;
  p.t = t;
  p.r = alpha * static_cast<double>(t);
  const double st = std::sqrt(sched.cumulative(static_cast<double>(t)));
  const double sr = std::sqrt(sched.cumulative(p.r));
  p.x_t.resize(x0_signal.size());
  p.x_r.resize(x0_signal.size());
  for (std::size_t i = 0; i < x0_signal.size(); ++i) {
    p.x_t[i] = x0_signal[i] + st * eps[i];
    p.x_r[i] = x0_signal[i] + sr * eps[i];
  }
  p.eps = std::move(eps);
  return p;
}

inline TrajectoryPair sample_pair(const std::vector<double>& x0_signal,
                                  const DiffusionSchedule& sched, double alpha,
                                  RngStream& rng) {
  int t = static_cast<int>(rng.uniform_int(1, sched.total_steps));
  std::vector<double> eps(x0_signal.size());
  for (double& e : eps) e = rng.normal();
  return make_pair_at(x0_signal, sched, t, alpha, std::move(eps));
}

// Multiplicative-noise bits the diffusion objective regresses on: bit i is 1
// where the corrupted sample fell on the other side of the origin from the
// clean symbol. sign(0) counts as +1 on both sides.
inline BitVec ddecc_target(const std::vector<double>& x0_signal,
                           const std::vector<double>& x_t) {
  if (x0_signal.size() != x_t.size())
    throw Error("ddecc_target: length mismatch");
  BitVec out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double s0 = x0_signal[i] >= 0.0 ? 1.0 : -1.0;
    double st = x_t[i] >= 0.0 ? 1.0 : -1.0;
    out[i] = s0 * st >= 0.0 ? 0 : 1;
  }
  return out;
}

}  // namespace eccfm
