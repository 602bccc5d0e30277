#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eccfm/channel.hpp"
#include "eccfm/error.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"
#include "eccfm/version.hpp"

namespace eccfm {

// Model-facing view of a received word: reliabilities, the bipolar syndrome
// of its hard decision, and the scalar noise condition. hard_bits is not a
// network feature; it only steers the sign recombination of the output, so
// the learned function stays a function of the (codeword-independent)
// multiplicative noise.
struct DecoderInput {
  std::vector<double> magnitude;         // |y|, length n
  std::vector<double> syndrome_bipolar;  // +1 satisfied / -1 violated, length m
  BitVec hard_bits;                      // hard decision of y, length n
  double condition = 0.0;                // scalar noise measure, >= 0
};

inline DecoderInput preprocess(const std::vector<double>& y,
                               const ParityCheckMatrix& h) {
  DecoderInput in;
  in.hard_bits = demodulate_hard(y);
  in.magnitude.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw Error("preprocess: non-finite sample");
    in.magnitude[i] = std::fabs(y[i]);
  }
  BitVec s = hard_syndrome(in.hard_bits, h);
  in.syndrome_bipolar.resize(s.size());
  for (std::size_t j = 0; j < s.size(); ++j)
    in.syndrome_bipolar[j] = s[j] ? -1.0 : 1.0;
  return in;
}

enum class BackboneKind { mlp, tiny_cross_attention };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::mlp;
  int n = 0;
  int m = 0;
  int depth = 3;      // residual blocks (mlp) or attention blocks
  int width = 64;     // hidden width (mlp) or token dimension
  int embed_dim = 16; // sinusoidal condition feature count, even

  void validate() const {
    if (n <= 0 || m <= 0 || m >= n) throw ConfigError("backbone needs 0 < m < n");
    if (depth < 1) throw ConfigError("backbone depth must be >= 1");
    if (width < 1) throw ConfigError("backbone width must be >= 1");
    if (embed_dim < 2 || embed_dim % 2 != 0)
      throw ConfigError("embed_dim must be even and >= 2");
  }
};

struct ModelParams {
  BackboneConfig config;
  std::vector<double> values;
};

namespace detail {

// Parameter tensors live in one flat vector; these views carve it up. The
// same code path defines offsets for reading parameters, writing gradients,
// and counting, so the layout cannot drift between them.
template <class T>
struct TensorView {
  T* data = nullptr;
  std::size_t count = 0;
  T& operator[](std::size_t i) const { return data[i]; }
};

template <class T>
struct Carver {
  T* base;
  std::size_t used = 0;
  TensorView<T> take(std::size_t count) {
    TensorView<T> v{base ? base + used : nullptr, count};
    used += count;
    return v;
  }
};

template <class T>
struct MlpView {
  TensorView<T> cond_w1, cond_b1, cond_w2, cond_b2;
  TensorView<T> in_w, in_b;
  struct Block {
    TensorView<T> w1, b1, w2, b2;
  };
  std::vector<Block> blocks;
  TensorView<T> out_w, out_b;
  std::size_t total = 0;
};

template <class T>
MlpView<T> mlp_view(const BackboneConfig& c, T* base) {
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  const std::size_t W = static_cast<std::size_t>(c.width);
  const std::size_t in_dim = static_cast<std::size_t>(c.n + c.m) + F;
  Carver<T> cv{base};
  MlpView<T> v;
  v.cond_w1 = cv.take(F * F);
  v.cond_b1 = cv.take(F);
  v.cond_w2 = cv.take(F * F);
  v.cond_b2 = cv.take(F);
  v.in_w = cv.take(W * in_dim);
  v.in_b = cv.take(W);
  v.blocks.resize(c.depth);
  for (auto& b : v.blocks) {
    b.w1 = cv.take(W * W);
    b.b1 = cv.take(W);
    b.w2 = cv.take(W * W);
    b.b2 = cv.take(W);
  }
  v.out_w = cv.take(static_cast<std::size_t>(c.n) * W);
  v.out_b = cv.take(static_cast<std::size_t>(c.n));
  v.total = cv.used;
  return v;
}

template <class T>
struct XAttnView {
  TensorView<T> mag_val, mag_pos, syn_val, syn_pos;
  TensorView<T> cond_w1, cond_b1, cond_w2, cond_b2;
  struct Block {
    TensorView<T> wq, wk, wv, wo;
    TensorView<T> ff_w1, ff_b1, ff_w2, ff_b2;
  };
  std::vector<Block> blocks;
  TensorView<T> head_w, head_b;
  std::size_t total = 0;
};

template <class T>
XAttnView<T> xattn_view(const BackboneConfig& c, T* base) {
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  const std::size_t d = static_cast<std::size_t>(c.width);
  const std::size_t dff = 2 * d;
  const std::size_t n = static_cast<std::size_t>(c.n);
  const std::size_t m = static_cast<std::size_t>(c.m);
  Carver<T> cv{base};
  XAttnView<T> v;
  v.mag_val = cv.take(n * d);
  v.mag_pos = cv.take(n * d);
  v.syn_val = cv.take(m * d);
  v.syn_pos = cv.take(m * d);
  v.cond_w1 = cv.take(d * F);
  v.cond_b1 = cv.take(d);
  v.cond_w2 = cv.take(d * d);
  v.cond_b2 = cv.take(d);
  v.blocks.resize(c.depth);
  for (auto& b : v.blocks) {
    b.wq = cv.take(d * d);
    b.wk = cv.take(d * d);
    b.wv = cv.take(d * d);
    b.wo = cv.take(d * d);
    b.ff_w1 = cv.take(dff * d);
    b.ff_b1 = cv.take(dff);
    b.ff_w2 = cv.take(d * dff);
    b.ff_b2 = cv.take(d);
  }
  v.head_w = cv.take(n * d);
  v.head_b = cv.take(n);
  v.total = cv.used;
  return v;
}

// y = W x with W stored row-major (rows x cols).
template <class T>
inline void matvec(const TensorView<T>& w, std::size_t rows, std::size_t cols,
                   const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const T* row = w.data + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// x_grad += W^T y_grad
template <class T>
inline void matvec_t_acc(const TensorView<T>& w, std::size_t rows,
                         std::size_t cols, const double* y_grad,
                         double* x_grad) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = w.data + r * cols;
    const double g = y_grad[r];
    for (std::size_t c = 0; c < cols; ++c) x_grad[c] += row[c] * g;
  }
}

// W_grad += y_grad outer x
inline void outer_acc(const TensorView<double>& w_grad, std::size_t rows,
                      std::size_t cols, const double* y_grad, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = w_grad.data + r * cols;
    const double g = y_grad[r];
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

inline void add_acc(const TensorView<double>& b_grad, const double* y_grad,
                    std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) b_grad.data[i] += y_grad[i];
}

// Geometric frequency ladder for the sinusoidal condition features.
inline double cond_frequency(int h, int half) {
  constexpr double kMax = 50.0;
  if (half <= 1) return 1.0;
  return std::exp(std::log(kMax) * static_cast<double>(h) /
                  static_cast<double>(half - 1));
}

inline void cond_features(double e, int embed_dim, double* phi) {
  const int half = embed_dim / 2;
  for (int h = 0; h < half; ++h) {
    const double w = cond_frequency(h, half);
    phi[2 * h] = std::sin(w * e);
    phi[2 * h + 1] = std::cos(w * e);
  }
}

inline void cond_features_grad(double e, int embed_dim, double* dphi) {
  const int half = embed_dim / 2;
  for (int h = 0; h < half; ++h) {
    const double w = cond_frequency(h, half);
    dphi[2 * h] = w * std::cos(w * e);
    dphi[2 * h + 1] = -w * std::sin(w * e);
  }
}

}  // namespace detail

inline std::size_t param_count(const BackboneConfig& c) {
  c.validate();
  if (c.kind == BackboneKind::mlp)
    return detail::mlp_view<const double>(c, nullptr).total;
  return detail::xattn_view<const double>(c, nullptr).total;
}

// Named slices of the flat parameter vector, in storage order.
struct ParamSlice {
  std::string name;
  std::size_t offset;
  std::size_t count;
};

inline std::vector<ParamSlice> param_layout(const BackboneConfig& c) {
  std::vector<ParamSlice> out;
  std::size_t off = 0;
  auto push = [&](const std::string& name, std::size_t count) {
    out.push_back({name, off, count});
    off += count;
  };
  if (c.kind == BackboneKind::mlp) {
    auto v = detail::mlp_view<const double>(c, nullptr);
    push("cond.w1", v.cond_w1.count);
    push("cond.b1", v.cond_b1.count);
    push("cond.w2", v.cond_w2.count);
    push("cond.b2", v.cond_b2.count);
    push("in.w", v.in_w.count);
    push("in.b", v.in_b.count);
    for (int l = 0; l < c.depth; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      push(p + "w1", v.blocks[l].w1.count);
      push(p + "b1", v.blocks[l].b1.count);
      push(p + "w2", v.blocks[l].w2.count);
      push(p + "b2", v.blocks[l].b2.count);
    }
    push("out.w", v.out_w.count);
    push("out.b", v.out_b.count);
  } else {
    auto v = detail::xattn_view<const double>(c, nullptr);
    push("mag.val", v.mag_val.count);
    push("mag.pos", v.mag_pos.count);
    push("syn.val", v.syn_val.count);
    push("syn.pos", v.syn_pos.count);
    push("cond.w1", v.cond_w1.count);
    push("cond.b1", v.cond_b1.count);
    push("cond.w2", v.cond_w2.count);
    push("cond.b2", v.cond_b2.count);
    for (int l = 0; l < c.depth; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      push(p + "wq", v.blocks[l].wq.count);
      push(p + "wk", v.blocks[l].wk.count);
      push(p + "wv", v.blocks[l].wv.count);
      push(p + "wo", v.blocks[l].wo.count);
      push(p + "ff.w1", v.blocks[l].ff_w1.count);
      push(p + "ff.b1", v.blocks[l].ff_b1.count);
      push(p + "ff.w2", v.blocks[l].ff_w2.count);
      push(p + "ff.b2", v.blocks[l].ff_b2.count);
    }
    push("head.w", v.head_w.count);
    push("head.b", v.head_b.count);
  }
  return out;
}

// Uniform +-1/sqrt(fan_in) on weight matrices, zero biases, +-1/sqrt(width)
// on the token embeddings.
inline ModelParams init_params(const BackboneConfig& c, std::uint64_t seed) {
  c.validate();
  ModelParams p;
  p.config = c;
  p.values.assign(param_count(c), 0.0);
  RngStream rng(seed, /*stream_id=*/0);
  auto fill = [&](detail::TensorView<double> t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.count; ++i)
      t[i] = bound * (2.0 * rng.uniform01() - 1.0);
  };
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  const std::size_t W = static_cast<std::size_t>(c.width);
  if (c.kind == BackboneKind::mlp) {
    auto v = detail::mlp_view<double>(c, p.values.data());
    fill(v.cond_w1, F);
    fill(v.cond_w2, F);
    fill(v.in_w, static_cast<std::size_t>(c.n + c.m) + F);
    for (auto& b : v.blocks) {
      fill(b.w1, W);
      fill(b.w2, W);
    }
    fill(v.out_w, W);
  } else {
    auto v = detail::xattn_view<double>(c, p.values.data());
    fill(v.mag_val, W);
    fill(v.mag_pos, W);
    fill(v.syn_val, W);
    fill(v.syn_pos, W);
    fill(v.cond_w1, F);
    fill(v.cond_w2, W);
    for (auto& b : v.blocks) {
      fill(b.wq, W);
      fill(b.wk, W);
      fill(b.wv, W);
      fill(b.wo, W);
      fill(b.ff_w1, W);
      fill(b.ff_w2, 2 * W);
    }
    fill(v.head_w, W);
  }
  return p;
}

inline void validate_params(const ModelParams& p) {
  p.config.validate();
  if (p.values.size() != param_count(p.config))
    throw Error("model parameter vector has wrong length");
  for (double v : p.values)
    if (!std::isfinite(v)) throw Error("model parameters contain NaN/Inf");
}

// Learned condition embedding: two-layer tanh map over sinusoidal features.
inline std::vector<double> embed_condition(const ModelParams& p, double e) {
  if (!(e >= 0.0) || !std::isfinite(e))
    throw Error("embed_condition: condition must be finite and >= 0");
  const auto& c = p.config;
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  std::vector<double> phi(F);
  detail::cond_features(e, c.embed_dim, phi.data());
  const std::size_t out_dim =
      c.kind == BackboneKind::mlp ? F : static_cast<std::size_t>(c.width);
  std::vector<double> a1(out_dim), h1(out_dim), out(out_dim);
  if (c.kind == BackboneKind::mlp) {
    auto v = detail::mlp_view<const double>(c, p.values.data());
    detail::matvec(v.cond_w1, F, F, phi.data(), a1.data());
    for (std::size_t i = 0; i < F; ++i) h1[i] = std::tanh(a1[i] + v.cond_b1[i]);
    detail::matvec(v.cond_w2, F, F, h1.data(), out.data());
    for (std::size_t i = 0; i < F; ++i) out[i] += v.cond_b2[i];
  } else {
    auto v = detail::xattn_view<const double>(c, p.values.data());
    const std::size_t d = out_dim;
    detail::matvec(v.cond_w1, d, F, phi.data(), a1.data());
    for (std::size_t i = 0; i < d; ++i) h1[i] = std::tanh(a1[i] + v.cond_b1[i]);
    detail::matvec(v.cond_w2, d, d, h1.data(), out.data());
    for (std::size_t i = 0; i < d; ++i) out[i] += v.cond_b2[i];
  }
  return out;
}

// Analytic d(embed_condition)/de; used to sanity-check the feature ladder.
inline std::vector<double> embed_condition_grad(const ModelParams& p, double e) {
  const auto& c = p.config;
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  std::vector<double> phi(F), dphi(F);
  detail::cond_features(e, c.embed_dim, phi.data());
  detail::cond_features_grad(e, c.embed_dim, dphi.data());
  const std::size_t out_dim =
      c.kind == BackboneKind::mlp ? F : static_cast<std::size_t>(c.width);
  std::vector<double> a1(out_dim), da1(out_dim), out(out_dim);
  auto run = [&](const auto& w1, const auto& b1, const auto& w2,
                 std::size_t hidden) {
    detail::matvec(w1, hidden, F, phi.data(), a1.data());
    detail::matvec(w1, hidden, F, dphi.data(), da1.data());
    std::vector<double> dh1(hidden);
    for (std::size_t i = 0; i < hidden; ++i) {
      double t = std::tanh(a1[i] + b1[i]);
      dh1[i] = (1.0 - t * t) * da1[i];
    }
    detail::matvec(w2, out_dim, hidden, dh1.data(), out.data());
  };
  if (c.kind == BackboneKind::mlp) {
    auto v = detail::mlp_view<const double>(c, p.values.data());
    run(v.cond_w1, v.cond_b1, v.cond_w2, F);
  } else {
    auto v = detail::xattn_view<const double>(c, p.values.data());
    run(v.cond_w1, v.cond_b1, v.cond_w2, out_dim);
  }
  return out;
}

// Everything backward needs, laid out by the forward pass. Reused across
// calls to keep the training loop allocation-free.
struct ForwardTrace {
  // shared
  std::vector<double> phi, cond_a1h, cond_out;  // features, tanh layer, embed
  // mlp
  std::vector<double> u;                   // trunk input
  std::vector<double> h0;                  // after input layer tanh
  std::vector<std::vector<double>> blk_z;  // tanh(w1 h + b1) per block
  std::vector<std::vector<double>> blk_h;  // block outputs h_1..h_D
  // cross-attention (token matrices stored row-major, token x dim)
  std::vector<double> m0, s0;                       // embedded tokens
  std::vector<std::vector<double>> att_in;          // block input M
  std::vector<std::vector<double>> att_q, att_k, att_v;
  std::vector<std::vector<double>> att_a;           // softmax rows, n x m
  std::vector<std::vector<double>> att_o;           // A V, n x d
  std::vector<std::vector<double>> att_mid;         // after attention residual
  std::vector<std::vector<double>> att_f1;          // FFN tanh activations
  std::vector<double> m_final;
};

namespace detail {

inline void check_input(const BackboneConfig& c, const DecoderInput& in) {
  if (in.magnitude.size() != static_cast<std::size_t>(c.n))
    throw Error("forward: magnitude length does not match n");
  if (in.syndrome_bipolar.size() != static_cast<std::size_t>(c.m))
    throw Error("forward: syndrome length does not match m");
  if (in.hard_bits.size() != static_cast<std::size_t>(c.n))
    throw Error("forward: hard_bits length does not match n");
  for (double v : in.magnitude)
    if (!std::isfinite(v) || v < 0.0)
      throw Error("forward: magnitudes must be finite and >= 0");
  for (double v : in.syndrome_bipolar)
    if (v != 1.0 && v != -1.0)
      throw Error("forward: syndrome entries must be +1 or -1");
  for (auto b : in.hard_bits)
    if (b > 1) throw Error("forward: hard_bits must be 0 or 1");
  if (!std::isfinite(in.condition) || in.condition < 0.0)
    throw Error("forward: condition must be finite and >= 0");
}

inline void cond_embed_forward(const BackboneConfig& c,
                               const TensorView<const double>& w1,
                               const TensorView<const double>& b1,
                               const TensorView<const double>& w2,
                               const TensorView<const double>& b2,
                               std::size_t out_dim, double e,
                               ForwardTrace& tr) {
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  tr.phi.resize(F);
  cond_features(e, c.embed_dim, tr.phi.data());
  tr.cond_a1h.resize(out_dim);
  tr.cond_out.resize(out_dim);
  matvec(w1, out_dim, F, tr.phi.data(), tr.cond_a1h.data());
  for (std::size_t i = 0; i < out_dim; ++i)
    tr.cond_a1h[i] = std::tanh(tr.cond_a1h[i] + b1[i]);
  matvec(w2, out_dim, out_dim, tr.cond_a1h.data(), tr.cond_out.data());
  for (std::size_t i = 0; i < out_dim; ++i) tr.cond_out[i] += b2[i];
}

inline void cond_embed_backward(const BackboneConfig& c,
                                const TensorView<const double>& w2,
                                const TensorView<double>& gw1,
                                const TensorView<double>& gb1,
                                const TensorView<double>& gw2,
                                const TensorView<double>& gb2,
                                std::size_t out_dim, const ForwardTrace& tr,
                                const double* d_cond) {
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  add_acc(gb2, d_cond, out_dim);
  outer_acc(gw2, out_dim, out_dim, d_cond, tr.cond_a1h.data());
  std::vector<double> dh1(out_dim, 0.0);
  matvec_t_acc(w2, out_dim, out_dim, d_cond, dh1.data());
  for (std::size_t i = 0; i < out_dim; ++i)
    dh1[i] *= 1.0 - tr.cond_a1h[i] * tr.cond_a1h[i];
  add_acc(gb1, dh1.data(), out_dim);
  outer_acc(gw1, out_dim, F, dh1.data(), tr.phi.data());
}

inline std::vector<double> mlp_forward(const ModelParams& p,
                                       const DecoderInput& in,
                                       ForwardTrace& tr) {
  const auto& c = p.config;
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  const std::size_t W = static_cast<std::size_t>(c.width);
  const std::size_t n = static_cast<std::size_t>(c.n);
  const std::size_t m = static_cast<std::size_t>(c.m);
  const std::size_t in_dim = n + m + F;
  auto v = mlp_view<const double>(c, p.values.data());

  cond_embed_forward(c, v.cond_w1, v.cond_b1, v.cond_w2, v.cond_b2, F,
                     in.condition, tr);
  tr.u.resize(in_dim);
  std::copy(in.magnitude.begin(), in.magnitude.end(), tr.u.begin());
  std::copy(in.syndrome_bipolar.begin(), in.syndrome_bipolar.end(),
            tr.u.begin() + n);
  std::copy(tr.cond_out.begin(), tr.cond_out.end(), tr.u.begin() + n + m);

  tr.h0.resize(W);
  matvec(v.in_w, W, in_dim, tr.u.data(), tr.h0.data());
  for (std::size_t i = 0; i < W; ++i)
    tr.h0[i] = std::tanh(tr.h0[i] + v.in_b[i]);

  tr.blk_z.resize(c.depth);
  tr.blk_h.resize(c.depth);
  const std::vector<double>* h = &tr.h0;
  for (int l = 0; l < c.depth; ++l) {
    auto& blk = v.blocks[l];
    auto& z = tr.blk_z[l];
    auto& hn = tr.blk_h[l];
    z.resize(W);
    hn.resize(W);
    matvec(blk.w1, W, W, h->data(), z.data());
    for (std::size_t i = 0; i < W; ++i) z[i] = std::tanh(z[i] + blk.b1[i]);
    matvec(blk.w2, W, W, z.data(), hn.data());
    for (std::size_t i = 0; i < W; ++i) hn[i] += (*h)[i] + blk.b2[i];
    h = &hn;
  }

  std::vector<double> raw(n);
  matvec(v.out_w, n, W, h->data(), raw.data());
  for (std::size_t i = 0; i < n; ++i) raw[i] += v.out_b[i];
  return raw;
}

inline void mlp_backward(const ModelParams& p, const DecoderInput& in,
                         const ForwardTrace& tr, const double* d_raw,
                         std::vector<double>& grad) {
  const auto& c = p.config;
  const std::size_t F = static_cast<std::size_t>(c.embed_dim);
  const std::size_t W = static_cast<std::size_t>(c.width);
  const std::size_t n = static_cast<std::size_t>(c.n);
  const std::size_t m = static_cast<std::size_t>(c.m);
  const std::size_t in_dim = n + m + F;
  auto v = mlp_view<const double>(c, p.values.data());
  auto g = mlp_view<double>(c, grad.data());

  const std::vector<double>& h_final =
      c.depth > 0 ? tr.blk_h.back() : tr.h0;
  add_acc(g.out_b, d_raw, n);
  outer_acc(g.out_w, n, W, d_raw, h_final.data());
  std::vector<double> dh(W, 0.0);
  matvec_t_acc(v.out_w, n, W, d_raw, dh.data());

  std::vector<double> dz(W);
  for (int l = c.depth - 1; l >= 0; --l) {
    auto& blk = v.blocks[l];
    auto& gblk = g.blocks[l];
    const std::vector<double>& h_in = l > 0 ? tr.blk_h[l - 1] : tr.h0;
    const std::vector<double>& z = tr.blk_z[l];
    add_acc(gblk.b2, dh.data(), W);
    outer_acc(gblk.w2, W, W, dh.data(), z.data());
    std::fill(dz.begin(), dz.end(), 0.0);
    matvec_t_acc(blk.w2, W, W, dh.data(), dz.data());
    for (std::size_t i = 0; i < W; ++i) dz[i] *= 1.0 - z[i] * z[i];
    add_acc(gblk.b1, dz.data(), W);
    outer_acc(gblk.w1, W, W, dz.data(), h_in.data());
    // residual: dh flows through unchanged, plus the branch
    matvec_t_acc(blk.w1, W, W, dz.data(), dh.data());
  }

  for (std::size_t i = 0; i < W; ++i) dh[i] *= 1.0 - tr.h0[i] * tr.h0[i];
  add_acc(g.in_b, dh.data(), W);
  outer_acc(g.in_w, W, in_dim, dh.data(), tr.u.data());
  std::vector<double> du(in_dim, 0.0);
  matvec_t_acc(v.in_w, W, in_dim, dh.data(), du.data());
  cond_embed_backward(c, v.cond_w2, g.cond_w1, g.cond_b1, g.cond_w2, g.cond_b2,
                      F, tr, du.data() + n + m);
}

inline std::vector<double> xattn_forward(const ModelParams& p,
                                         const DecoderInput& in,
                                         ForwardTrace& tr) {
  const auto& c = p.config;
  const std::size_t d = static_cast<std::size_t>(c.width);
  const std::size_t dff = 2 * d;
  const std::size_t n = static_cast<std::size_t>(c.n);
  const std::size_t m = static_cast<std::size_t>(c.m);
  auto v = xattn_view<const double>(c, p.values.data());
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  cond_embed_forward(c, v.cond_w1, v.cond_b1, v.cond_w2, v.cond_b2, d,
                     in.condition, tr);

  // value * per-position embedding + positional embedding + condition
  tr.m0.resize(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t x = 0; x < d; ++x)
      tr.m0[i * d + x] = v.mag_val[i * d + x] * in.magnitude[i] +
                         v.mag_pos[i * d + x] + tr.cond_out[x];
  tr.s0.resize(m * d);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t x = 0; x < d; ++x)
      tr.s0[j * d + x] = v.syn_val[j * d + x] * in.syndrome_bipolar[j] +
                         v.syn_pos[j * d + x] + tr.cond_out[x];

  tr.att_in.resize(c.depth);
  tr.att_q.resize(c.depth);
  tr.att_k.resize(c.depth);
  tr.att_v.resize(c.depth);
  tr.att_a.resize(c.depth);
  tr.att_o.resize(c.depth);
  tr.att_mid.resize(c.depth);
  tr.att_f1.resize(c.depth);

  std::vector<double> cur = tr.m0;
  for (int l = 0; l < c.depth; ++l) {
    auto& blk = v.blocks[l];
    tr.att_in[l] = cur;
    auto& Q = tr.att_q[l];
    auto& K = tr.att_k[l];
    auto& V = tr.att_v[l];
    auto& A = tr.att_a[l];
    auto& O = tr.att_o[l];
    Q.resize(n * d);
    K.resize(m * d);
    V.resize(m * d);
    A.resize(n * m);
    O.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
      matvec(blk.wq, d, d, cur.data() + i * d, Q.data() + i * d);
    for (std::size_t j = 0; j < m; ++j) {
      matvec(blk.wk, d, d, tr.s0.data() + j * d, K.data() + j * d);
      matvec(blk.wv, d, d, tr.s0.data() + j * d, V.data() + j * d);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < m; ++j) {
        double z = 0.0;
        for (std::size_t x = 0; x < d; ++x) z += Q[i * d + x] * K[j * d + x];
        A[i * m + j] = z * inv_sqrt_d;
        mx = std::max(mx, A[i * m + j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        A[i * m + j] = std::exp(A[i * m + j] - mx);
        sum += A[i * m + j];
      }
      for (std::size_t j = 0; j < m; ++j) A[i * m + j] /= sum;
      for (std::size_t x = 0; x < d; ++x) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j)
          acc += A[i * m + j] * V[j * d + x];
        O[i * d + x] = acc;
      }
    }
    auto& mid = tr.att_mid[l];
    mid.resize(n * d);
    std::vector<double> proj(d);
    for (std::size_t i = 0; i < n; ++i) {
      matvec(blk.wo, d, d, O.data() + i * d, proj.data());
      for (std::size_t x = 0; x < d; ++x)
        mid[i * d + x] = cur[i * d + x] + proj[x];
    }
    auto& f1 = tr.att_f1[l];
    f1.resize(n * dff);
    std::vector<double> f2(d);
    for (std::size_t i = 0; i < n; ++i) {
      matvec(blk.ff_w1, dff, d, mid.data() + i * d, f1.data() + i * dff);
      for (std::size_t x = 0; x < dff; ++x)
        f1[i * dff + x] = std::tanh(f1[i * dff + x] + blk.ff_b1[x]);
      matvec(blk.ff_w2, d, dff, f1.data() + i * dff, f2.data());
      for (std::size_t x = 0; x < d; ++x)
        cur[i * d + x] = mid[i * d + x] + f2[x] + blk.ff_b2[x];
    }
  }
  tr.m_final = cur;

  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = v.head_b[i];
    for (std::size_t x = 0; x < d; ++x)
      acc += v.head_w[i * d + x] * cur[i * d + x];
    raw[i] = acc;
  }
  return raw;
}

inline void xattn_backward(const ModelParams& p, const DecoderInput& in,
                           const ForwardTrace& tr, const double* d_raw,
                           std::vector<double>& grad) {
  const auto& c = p.config;
  const std::size_t d = static_cast<std::size_t>(c.width);
  const std::size_t dff = 2 * d;
  const std::size_t n = static_cast<std::size_t>(c.n);
  const std::size_t m = static_cast<std::size_t>(c.m);
  auto v = xattn_view<const double>(c, p.values.data());
  auto g = xattn_view<double>(c, grad.data());
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> dM(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g.head_b[i] += d_raw[i];
    for (std::size_t x = 0; x < d; ++x) {
      g.head_w[i * d + x] += d_raw[i] * tr.m_final[i * d + x];
      dM[i * d + x] = d_raw[i] * v.head_w[i * d + x];
    }
  }

  std::vector<double> dS(m * d, 0.0);
  std::vector<double> dmid(n * d), dO(n * d), dA(n * m), dZ(n * m);
  std::vector<double> dQ(n * d), dK(m * d), dV(m * d), tmp(dff);

  for (int l = c.depth - 1; l >= 0; --l) {
    auto& blk = v.blocks[l];
    auto& gblk = g.blocks[l];
    const auto& mid = tr.att_mid[l];
    const auto& f1 = tr.att_f1[l];
    const auto& Min = tr.att_in[l];
    const auto& Q = tr.att_q[l];
    const auto& K = tr.att_k[l];
    const auto& V = tr.att_v[l];
    const auto& A = tr.att_a[l];
    const auto& O = tr.att_o[l];

    // FFN: cur = mid + W2 tanh(W1 mid + b1) + b2
    std::fill(dmid.begin(), dmid.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* dout = dM.data() + i * d;
      add_acc(gblk.ff_b2, dout, d);
      outer_acc(gblk.ff_w2, d, dff, dout, f1.data() + i * dff);
      std::fill(tmp.begin(), tmp.end(), 0.0);
      matvec_t_acc(blk.ff_w2, d, dff, dout, tmp.data());
      for (std::size_t x = 0; x < dff; ++x)
        tmp[x] *= 1.0 - f1[i * dff + x] * f1[i * dff + x];
      add_acc(gblk.ff_b1, tmp.data(), dff);
      outer_acc(gblk.ff_w1, dff, d, tmp.data(), mid.data() + i * d);
      double* dm = dmid.data() + i * d;
      for (std::size_t x = 0; x < d; ++x) dm[x] += dout[x];
      matvec_t_acc(blk.ff_w1, dff, d, tmp.data(), dm);
    }

    // attention: mid = Min + Wo (A V)
    std::fill(dO.begin(), dO.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* dm = dmid.data() + i * d;
      outer_acc(gblk.wo, d, d, dm, O.data() + i * d);
      matvec_t_acc(blk.wo, d, d, dm, dO.data() + i * d);
    }
    std::fill(dV.begin(), dV.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t x = 0; x < d; ++x)
          acc += dO[i * d + x] * V[j * d + x];
        dA[i * m + j] = acc;
        for (std::size_t x = 0; x < d; ++x)
          dV[j * d + x] += A[i * m + j] * dO[i * d + x];
      }
      // softmax rows: dz = A o (dA - <dA, A>)
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        dot += dA[i * m + j] * A[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        dZ[i * m + j] = A[i * m + j] * (dA[i * m + j] - dot);
    }
    std::fill(dQ.begin(), dQ.end(), 0.0);
    std::fill(dK.begin(), dK.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double z = dZ[i * m + j] * inv_sqrt_d;
        for (std::size_t x = 0; x < d; ++x) {
          dQ[i * d + x] += z * K[j * d + x];
          dK[j * d + x] += z * Q[i * d + x];
        }
      }
    // dM (block input) = dmid (residual) + Wq^T dQ
    std::copy(dmid.begin(), dmid.end(), dM.begin());
    for (std::size_t i = 0; i < n; ++i) {
      outer_acc(gblk.wq, d, d, dQ.data() + i * d, Min.data() + i * d);
      matvec_t_acc(blk.wq, d, d, dQ.data() + i * d, dM.data() + i * d);
    }
    for (std::size_t j = 0; j < m; ++j) {
      outer_acc(gblk.wk, d, d, dK.data() + j * d, tr.s0.data() + j * d);
      matvec_t_acc(blk.wk, d, d, dK.data() + j * d, dS.data() + j * d);
      outer_acc(gblk.wv, d, d, dV.data() + j * d, tr.s0.data() + j * d);
      matvec_t_acc(blk.wv, d, d, dV.data() + j * d, dS.data() + j * d);
    }
  }

  // token embeddings; the condition embedding feeds every token of both sets
  std::vector<double> dcond(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t x = 0; x < d; ++x) {
      g.mag_val[i * d + x] += dM[i * d + x] * in.magnitude[i];
      g.mag_pos[i * d + x] += dM[i * d + x];
      dcond[x] += dM[i * d + x];
    }
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t x = 0; x < d; ++x) {
      g.syn_val[j * d + x] += dS[j * d + x] * in.syndrome_bipolar[j];
      g.syn_pos[j * d + x] += dS[j * d + x];
      dcond[x] += dS[j * d + x];
    }
  cond_embed_backward(c, v.cond_w2, g.cond_w1, g.cond_b1, g.cond_w2, g.cond_b2,
                      d, tr, dcond.data());
}

}  // namespace detail

// Raw network output: logits of the multiplicative-noise bits (bit flipped
// by the channel relative to the hard decision).
inline std::vector<double> forward_noise(const ModelParams& p,
                                         const DecoderInput& in,
                                         ForwardTrace& tr) {
  detail::check_input(p.config, in);
  if (p.values.size() != param_count(p.config))
    throw Error("forward: parameter vector has wrong length");
  if (p.config.kind == BackboneKind::mlp) return detail::mlp_forward(p, in, tr);
  return detail::xattn_forward(p, in, tr);
}

inline std::vector<double> x0_logits_from_noise(
    const std::vector<double>& raw, const BitVec& hard_bits) {
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = hard_bits[i] ? -raw[i] : raw[i];
  return out;
}

// Published forward pass: logits of P(x0 bit = 1). The raw noise logit is
// flipped wherever the received hard decision is already 1.
inline std::vector<double> forward(const ModelParams& p,
                                   const DecoderInput& in) {
  ForwardTrace tr;
  return x0_logits_from_noise(forward_noise(p, in, tr), in.hard_bits);
}

inline std::vector<std::vector<double>> forward_batch(
    const ModelParams& p, const std::vector<DecoderInput>& batch) {
  std::vector<std::vector<double>> out;
  out.reserve(batch.size());
  for (const auto& in : batch) out.push_back(forward(p, in));
  return out;
}

// Accumulates d(loss)/d(params) into grad given the cotangent on the raw
// noise logits. Callers holding a cotangent on x0 logits flip its signs at
// hard_bits == 1 first (the recombination is its own inverse).
inline void backward_noise(const ModelParams& p, const DecoderInput& in,
                           const ForwardTrace& tr, const double* d_raw,
                           std::vector<double>& grad) {
  if (grad.size() != p.values.size())
    throw Error("backward: gradient vector has wrong length");
  if (p.config.kind == BackboneKind::mlp)
    detail::mlp_backward(p, in, tr, d_raw, grad);
  else
    detail::xattn_backward(p, in, tr, d_raw, grad);
}

// ---- checkpoint serialization (explicit little-endian) ----

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw Error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  return std::bit_cast<double>(get_u64(is));
}

}  // namespace detail

// Optimizer/EMA state carried inside checkpoints so training can resume.
struct TrainStateBlock {
  std::vector<double> adam_m, adam_v, ema;
  std::int64_t step = 0;
  std::int32_t epoch = 0;
};

inline constexpr std::uint32_t kCheckpointMagic = 0x4d464345;  // "ECFM"
inline constexpr std::uint32_t kCheckpointFormat = 1;

inline void serialize_checkpoint(std::ostream& os, const ModelParams& p,
                                 const TrainStateBlock* state = nullptr) {
  detail::put_u32(os, kCheckpointMagic);
  detail::put_u32(os, kCheckpointFormat);
  std::string ver = kVersion;
  detail::put_u32(os, static_cast<std::uint32_t>(ver.size()));
  os.write(ver.data(), static_cast<std::streamsize>(ver.size()));
  detail::put_u32(os, p.config.kind == BackboneKind::mlp ? 0u : 1u);
  detail::put_u32(os, static_cast<std::uint32_t>(p.config.n));
  detail::put_u32(os, static_cast<std::uint32_t>(p.config.m));
  detail::put_u32(os, static_cast<std::uint32_t>(p.config.depth));
  detail::put_u32(os, static_cast<std::uint32_t>(p.config.width));
  detail::put_u32(os, static_cast<std::uint32_t>(p.config.embed_dim));
  detail::put_u64(os, p.values.size());
  for (double v : p.values) detail::put_f64(os, v);
  if (state) {
    if (state->adam_m.size() != p.values.size() ||
        state->adam_v.size() != p.values.size() ||
        state->ema.size() != p.values.size())
      throw Error("checkpoint: training-state vectors must match param count");
    os.put(1);
    for (double v : state->adam_m) detail::put_f64(os, v);
    for (double v : state->adam_v) detail::put_f64(os, v);
    for (double v : state->ema) detail::put_f64(os, v);
    detail::put_u64(os, static_cast<std::uint64_t>(state->step));
    detail::put_u32(os, static_cast<std::uint32_t>(state->epoch));
  } else {
    os.put(0);
  }
  if (!os) throw Error("checkpoint: write failed");
}

struct Checkpoint {
  ModelParams params;
  std::optional<TrainStateBlock> state;
};

inline Checkpoint parse_checkpoint(std::istream& is) {
  if (detail::get_u32(is) != kCheckpointMagic)
    throw Error("checkpoint: bad magic");
  std::uint32_t fmt = detail::get_u32(is);
  if (fmt != kCheckpointFormat)
    throw Error("checkpoint: unsupported format version " + std::to_string(fmt));
  std::uint32_t ver_len = detail::get_u32(is);
  if (ver_len > 64) throw Error("checkpoint: implausible version length");
  std::string ver(ver_len, '\0');
  if (!is.read(ver.data(), ver_len)) throw Error("checkpoint truncated");
  Checkpoint ck;
  std::uint32_t kind = detail::get_u32(is);
  if (kind > 1) throw Error("checkpoint: unknown backbone kind");
  ck.params.config.kind =
      kind == 0 ? BackboneKind::mlp : BackboneKind::tiny_cross_attention;
  ck.params.config.n = static_cast<int>(detail::get_u32(is));
  ck.params.config.m = static_cast<int>(detail::get_u32(is));
  ck.params.config.depth = static_cast<int>(detail::get_u32(is));
  ck.params.config.width = static_cast<int>(detail::get_u32(is));
  ck.params.config.embed_dim = static_cast<int>(detail::get_u32(is));
  ck.params.config.validate();
  std::uint64_t count = detail::get_u64(is);
  if (count != param_count(ck.params.config))
    throw Error("checkpoint: parameter count does not match config");
  ck.params.values.resize(count);
  for (auto& v : ck.params.values) v = detail::get_f64(is);
  int flag = is.get();
  if (flag == 1) {
    TrainStateBlock st;
    st.adam_m.resize(count);
    st.adam_v.resize(count);
    st.ema.resize(count);
    for (auto& v : st.adam_m) v = detail::get_f64(is);
    for (auto& v : st.adam_v) v = detail::get_f64(is);
    for (auto& v : st.ema) v = detail::get_f64(is);
    st.step = static_cast<std::int64_t>(detail::get_u64(is));
    st.epoch = static_cast<std::int32_t>(detail::get_u32(is));
    ck.state = std::move(st);
  } else if (flag != 0) {
    throw Error("checkpoint truncated");
  }
  validate_params(ck.params);
  return ck;
}

}  // namespace eccfm
