#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"

namespace eccfm {

enum class ChannelKind { awgn, rayleigh };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::awgn;
  double ebn0_db = 4.0;
  double rate = 0.5;                    // k/n of the code in use
  double rayleigh_scale = 1.0;
  std::optional<double> sigma_override; // test hook; 0 means a noiseless pass
};

// Eb/N0 in dB to the per-dimension noise standard deviation for unit-energy
// BPSK: sigma = 1 / sqrt(2 * rate * 10^(ebn0/10)).
inline double ebn0_to_sigma(double ebn0_db, double rate) {
  if (!(rate > 0.0) || rate > 1.0)
    throw Error("ebn0_to_sigma: rate must be in (0, 1]");
  if (!std::isfinite(ebn0_db)) throw Error("ebn0_to_sigma: Eb/N0 must be finite");
  return 1.0 / std::sqrt(2.0 * rate * std::pow(10.0, ebn0_db / 10.0));
}

inline double channel_sigma(const ChannelConfig& cfg) {
  if (cfg.sigma_override) {
    if (*cfg.sigma_override < 0.0)
      throw Error("channel sigma override must be >= 0");
    return *cfg.sigma_override;
  }
  return ebn0_to_sigma(cfg.ebn0_db, cfg.rate);
}

// Bit 0 maps to +1, bit 1 to -1.
inline std::vector<double> modulate_bpsk(const BitVec& bits) {
  std::vector<double> out(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) throw Error("modulate_bpsk: bits must be 0 or 1");
    out[i] = bits[i] ? -1.0 : 1.0;
  }
  return out;
}

// Sign rule mirrors modulation: y >= 0 decides bit 0.
inline BitVec demodulate_hard(const std::vector<double>& y) {
  BitVec out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::isnan(y[i])) throw Error("demodulate_hard: NaN sample");
    out[i] = y[i] >= 0.0 ? 0 : 1;
  }
  return out;
}

struct ChannelDraw {
  std::vector<double> y;
  std::vector<double> fading;  // empty for AWGN; per-symbol gains otherwise
};

inline ChannelDraw transmit(const std::vector<double>& signal,
                            const ChannelConfig& cfg, RngStream& rng) {
  const double sigma = channel_sigma(cfg);
  ChannelDraw draw;
  draw.y.resize(signal.size());
  if (cfg.kind == ChannelKind::rayleigh) {
    if (!(cfg.rayleigh_scale > 0.0))
      throw Error("transmit: rayleigh_scale must be > 0");
    draw.fading.resize(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) {
      draw.fading[i] = rng.rayleigh(cfg.rayleigh_scale);
      draw.y[i] = draw.fading[i] * signal[i] + sigma * rng.normal();
    }
  } else {
    for (std::size_t i = 0; i < signal.size(); ++i)
      draw.y[i] = signal[i] + sigma * rng.normal();
  }
  return draw;
}

}  // namespace eccfm
