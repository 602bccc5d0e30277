#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "eccfm/channel.hpp"
#include "eccfm/decoders.hpp"
#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"

namespace eccfm {

struct StopRule {
  std::int64_t min_frame_errors = 500;
  std::int64_t max_frames = 10'000'000;

  void validate() const {
    if (min_frame_errors < 1) throw ConfigError("stop rule: min_frame_errors >= 1");
    if (max_frames < 1) throw ConfigError("stop rule: max_frames >= 1");
  }
};

// Decoder under test: receives the channel output and the frame's private
// stream (already advanced past the channel draws, so any decoder-side
// randomness stays reproducible).
using DecodeFn =
    std::function<DecodeOutcome(const std::vector<double>& y, RngStream& rng)>;

struct EvalResult {
  std::int64_t frames = 0;
  std::int64_t bit_errors = 0;
  std::int64_t frame_errors = 0;
  std::int64_t converged_frames = 0;
  double ber = 0.0;  // over all n codeword bits
  double fer = 0.0;
  std::optional<double> neg_ln_ber;  // absent when no bit errors were seen
  double mean_steps = 0.0;
  std::uint64_t seed = 0;
  // timing is reported separately from the deterministic counts
  double wall_seconds = 0.0;
  double frames_per_second = 0.0;
};

struct FrameRecord {
  std::int64_t frame = 0;
  int bit_errors = 0;
  bool converged = false;
  int steps_used = 0;
};

namespace detail {

struct FrameOutcome {
  int bit_errors = 0;
  bool frame_error = false;
  bool converged = false;
  int steps_used = 0;
};

// One complete frame: draw a random message, encode, transmit, decode,
// count. Everything is keyed by (seed, frame index), so frame f's outcome
// does not depend on which worker ran it or how many frames ran before it.
inline FrameOutcome run_frame(std::int64_t frame, std::uint64_t seed,
                              const ParityCheckMatrix& h,
                              const GeneratorMatrix& g,
                              const ChannelConfig& channel,
                              const DecodeFn& decode) {
  RngStream rng(seed, static_cast<std::uint64_t>(frame));
  BitVec msg(g.k);
  for (auto& b : msg) b = rng.bernoulli_half() ? 1 : 0;
  BitVec sent = encode(msg, g);
  ChannelDraw draw = transmit(modulate_bpsk(sent), channel, rng);
  DecodeOutcome dec = decode(draw.y, rng);
  if (dec.bits.size() != sent.size())
    throw Error("run_eval: decoder returned a word of the wrong length");
  FrameOutcome out;
  for (std::size_t i = 0; i < sent.size(); ++i)
    if (dec.bits[i] != sent[i]) ++out.bit_errors;
  out.frame_error = out.bit_errors > 0;
  out.converged = dec.converged;
  out.steps_used = dec.steps_used;
  return out;
}

}  // namespace detail

// Monte-Carlo error-rate measurement. Frames are processed in fixed blocks:
// workers fill a block in parallel, then a sequential scan in frame order
// applies the stop rule (min_frame_errors reached, or max_frames). The
// counts are therefore identical for any worker count, and bit-identical
// across runs with the same seed.
inline EvalResult run_eval(const DecodeFn& decode, const ParityCheckMatrix& h,
                           const GeneratorMatrix& g,
                           const ChannelConfig& channel, const StopRule& stop,
                           std::uint64_t seed, int workers = 1,
                           std::vector<FrameRecord>* frame_log = nullptr) {
  stop.validate();
  if (workers < 1) throw ConfigError("run_eval: workers must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  EvalResult res;
  res.seed = seed;
  const std::int64_t block = 1024;
  std::vector<detail::FrameOutcome> outcomes;
  std::int64_t next_frame = 0;
  double steps_acc = 0.0;
  bool done = false;
  while (!done && next_frame < stop.max_frames) {
    const std::int64_t count = std::min(block, stop.max_frames - next_frame);
    outcomes.assign(static_cast<std::size_t>(count), {});
    if (workers == 1) {
      for (std::int64_t i = 0; i < count; ++i)
        outcomes[static_cast<std::size_t>(i)] =
            detail::run_frame(next_frame + i, seed, h, g, channel, decode);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
          for (std::int64_t i = w; i < count; i += workers)
            outcomes[static_cast<std::size_t>(i)] =
                detail::run_frame(next_frame + i, seed, h, g, channel, decode);
        });
      }
      for (auto& th : pool) th.join();
    }
    for (std::int64_t i = 0; i < count; ++i) {
      const auto& oc = outcomes[static_cast<std::size_t>(i)];
      res.frames += 1;
      res.bit_errors += oc.bit_errors;
      res.frame_errors += oc.frame_error ? 1 : 0;
      res.converged_frames += oc.converged ? 1 : 0;
      steps_acc += oc.steps_used;
      if (frame_log)
        frame_log->push_back({next_frame + i, oc.bit_errors, oc.converged,
                              oc.steps_used});
      if (res.frame_errors >= stop.min_frame_errors) {
        done = true;
        break;
      }
    }
    next_frame += count;
  }

  const double denom = static_cast<double>(res.frames) * h.n();
  res.ber = res.frames > 0 ? static_cast<double>(res.bit_errors) / denom : 0.0;
  res.fer = res.frames > 0
                ? static_cast<double>(res.frame_errors) / res.frames : 0.0;
  if (res.bit_errors > 0) res.neg_ln_ber = -std::log(res.ber);
  res.mean_steps = res.frames > 0 ? steps_acc / res.frames : 0.0;
  const auto t1 = std::chrono::steady_clock::now();
  res.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  res.frames_per_second =
      res.wall_seconds > 0.0 ? res.frames / res.wall_seconds : 0.0;
  return res;
}

struct BenchEntry {
  std::string id;
  DecodeFn decode;
};

struct BenchRow {
  std::string id;
  std::int64_t frames = 0;
  double wall_seconds = 0.0;
  double frames_per_second = 0.0;
  double speedup_vs_first = 1.0;
  double mean_steps = 0.0;
};

// Latency comparison on one shared set of received words. Warmup frames run
// untimed; the timed loop covers decoding only (channel generation happens
// up front), so throughput reflects the decoder alone.
inline std::vector<BenchRow> run_benchmark(const std::vector<BenchEntry>& entries,
                                           const ParityCheckMatrix& h,
                                           const GeneratorMatrix& g,
                                           const ChannelConfig& channel,
                                           std::int64_t n_frames,
                                           std::int64_t warmup,
                                           std::uint64_t seed) {
  if (n_frames < 1) throw ConfigError("run_benchmark: n_frames must be >= 1");
  if (warmup < 0) throw ConfigError("run_benchmark: warmup must be >= 0");
  std::vector<std::vector<double>> ys;
  ys.reserve(static_cast<std::size_t>(n_frames));
  for (std::int64_t f = 0; f < n_frames; ++f) {
    RngStream rng(seed, static_cast<std::uint64_t>(f));
    BitVec msg(g.k);
    for (auto& b : msg) b = rng.bernoulli_half() ? 1 : 0;
    ys.push_back(transmit(modulate_bpsk(encode(msg, g)), channel, rng).y);
  }
  std::vector<BenchRow> rows;
  for (const auto& entry : entries) {
    BenchRow row;
    row.id = entry.id;
    row.frames = n_frames;
    const std::int64_t wu = std::min(warmup, n_frames);
    for (std::int64_t f = 0; f < wu; ++f) {
      RngStream rng(seed ^ 0x5eedULL, static_cast<std::uint64_t>(f));
      entry.decode(ys[static_cast<std::size_t>(f)], rng);
    }
    double steps_acc = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t f = 0; f < n_frames; ++f) {
      RngStream rng(seed ^ 0xbe7cULL, static_cast<std::uint64_t>(f));
      steps_acc += entry.decode(ys[static_cast<std::size_t>(f)], rng).steps_used;
    }
    const auto t1 = std::chrono::steady_clock::now();
    row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    row.frames_per_second =
        row.wall_seconds > 0.0 ? n_frames / row.wall_seconds : 0.0;
    row.mean_steps = static_cast<double>(steps_acc) / n_frames;
    rows.push_back(row);
  }
  for (auto& row : rows) {
    if (rows.front().frames_per_second > 0.0)
      row.speedup_vs_first = row.frames_per_second / rows.front().frames_per_second;
  }
  return rows;
}

struct ConvergenceRow {
  double ebn0_db = 0.0;
  std::int64_t frames = 0;
  double mean_steps = 0.0;
  double var_steps = 0.0;  // sample variance
  std::int64_t nonconverged = 0;
};

// Mean/variance of the iterative decoder's step count per SNR point.
// Non-converged frames enter the statistics at the step cap and are
// reported separately.
inline std::vector<ConvergenceRow> run_convergence_stats(
    const ModelParams& params, const ParityCheckMatrix& h,
    const GeneratorMatrix& g, const DiffusionSchedule& sched,
    const std::vector<double>& ebn0_list, std::int64_t frames, int max_steps,
    std::uint64_t seed, ChannelKind kind = ChannelKind::awgn) {
  if (frames < 1) throw ConfigError("run_convergence_stats: frames must be >= 1");
  std::vector<ConvergenceRow> rows;
  const double rate = static_cast<double>(g.k) / g.n;
  for (double ebn0 : ebn0_list) {
    ChannelConfig cc;
    cc.kind = kind;
    cc.ebn0_db = ebn0;
    cc.rate = rate;
    const double sigma = channel_sigma(cc);
    ConvergenceRow row;
    row.ebn0_db = ebn0;
    row.frames = frames;
    double acc = 0.0, acc2 = 0.0;
    for (std::int64_t f = 0; f < frames; ++f) {
      RngStream rng(seed, static_cast<std::uint64_t>(f));
      BitVec msg(g.k);
      for (auto& b : msg) b = rng.bernoulli_half() ? 1 : 0;
      auto draw = transmit(modulate_bpsk(encode(msg, g)), cc, rng);
      auto dec = decode_ddecc(params, draw.y, h, sigma, sched, max_steps);
      if (!dec.converged) ++row.nonconverged;
      acc += dec.steps_used;
      acc2 += static_cast<double>(dec.steps_used) * dec.steps_used;
    }
    row.mean_steps = acc / frames;
    row.var_steps = frames > 1
                        ? (acc2 - acc * acc / frames) / (frames - 1) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

struct TrajectoryRow {
  std::int64_t sample = 0;
  int step = 0;  // 1-based position within the sample's trajectory
  int e_hard = 0;
  double e_soft = 0.0;
};

// Per-step noise-measure series of the iterative decoder on fresh channel
// draws; one row per completed update.
inline std::vector<TrajectoryRow> trace_trajectory(
    const ModelParams& params, const ParityCheckMatrix& h,
    const GeneratorMatrix& g, const ChannelConfig& channel,
    const DiffusionSchedule& sched, std::int64_t samples, int max_steps,
    std::uint64_t seed) {
  if (samples < 1) throw ConfigError("trace_trajectory: samples must be >= 1");
  const double sigma = channel_sigma(channel);
  std::vector<TrajectoryRow> rows;
  for (std::int64_t s = 0; s < samples; ++s) {
    RngStream rng(seed, static_cast<std::uint64_t>(s));
    BitVec msg(g.k);
    for (auto& b : msg) b = rng.bernoulli_half() ? 1 : 0;
    auto draw = transmit(modulate_bpsk(encode(msg, g)), channel, rng);
    auto dec = decode_ddecc(params, draw.y, h, sigma, sched, max_steps,
                            /*want_trace=*/true);
    for (std::size_t i = 0; i < dec.trace.size(); ++i)
      rows.push_back({s, static_cast<int>(i + 1), dec.trace[i].e_hard,
                      dec.trace[i].e_soft});
  }
  return rows;
}

}  // namespace eccfm
