#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "eccfm/backbone.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"

using namespace eccfm;

namespace {

BackboneConfig small_config(BackboneKind kind) {
  BackboneConfig c;
  c.kind = kind;
  c.n = 7;
  c.m = 3;
  c.depth = 2;
  c.width = kind == BackboneKind::mlp ? 24 : 12;
  c.embed_dim = 8;
  return c;
}

DecoderInput sample_input(std::uint64_t seed) {
  RngStream rng(seed, 0);
  DecoderInput in;
  in.magnitude.resize(7);
  in.hard_bits.resize(7);
  for (int i = 0; i < 7; ++i) {
    in.magnitude[i] = std::fabs(1.0 + 0.7 * rng.normal());
    in.hard_bits[i] = rng.bernoulli_half() ? 1 : 0;
  }
  in.syndrome_bipolar.resize(3);
  for (int j = 0; j < 3; ++j)
    in.syndrome_bipolar[j] = rng.bernoulli_half() ? -1.0 : 1.0;
  in.condition = 0.8 + rng.uniform01();
  return in;
}

// Scalar probe L = sum_i c_i * raw_i with a fixed random cotangent c.
double probe_loss(const ModelParams& p, const DecoderInput& in,
                  const std::vector<double>& cot) {
  ForwardTrace tr;
  auto raw = forward_noise(p, in, tr);
  double acc = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) acc += cot[i] * raw[i];
  return acc;
}

double rel_err(double a, double b) {
  double denom = std::max({1e-8, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

}  // namespace

TEST_CASE("preprocess splits magnitude, syndrome and hard decision") {
  auto h = hamming74();
  std::vector<double> y = {0.9, -0.8, 1.2, -0.1, 0.6, 1.4, -2.0};
  auto in = preprocess(y, h);
  REQUIRE(in.magnitude.size() == 7);
  REQUIRE(in.syndrome_bipolar.size() == 3);
  for (int i = 0; i < 7; ++i)
    CHECK(in.magnitude[i] == Catch::Approx(std::fabs(y[i])).margin(1e-15));
  CHECK(in.hard_bits == BitVec{0, 1, 0, 1, 0, 0, 1});
  auto synd = hard_syndrome(in.hard_bits, h);
  for (int j = 0; j < 3; ++j)
    CHECK(in.syndrome_bipolar[j] == (synd[j] ? -1.0 : 1.0));
  // feature dimensionality: n magnitudes + (n - k) syndrome entries
  CHECK(in.magnitude.size() + in.syndrome_bipolar.size() == 2u * 7 - 4);
  CHECK_THROWS_AS(preprocess({1.0, std::nan("")}, repetition(2)), Error);
}

TEST_CASE("parameter count matches the layout slices") {
  for (auto kind : {BackboneKind::mlp, BackboneKind::tiny_cross_attention}) {
    auto c = small_config(kind);
    auto layout = param_layout(c);
    std::size_t total = 0;
    for (const auto& s : layout) {
      CHECK(s.offset == total);
      total += s.count;
    }
    CHECK(total == param_count(c));
  }
}

TEST_CASE("init is deterministic in the seed") {
  auto c = small_config(BackboneKind::mlp);
  auto a = init_params(c, 11);
  auto b = init_params(c, 11);
  auto d = init_params(c, 12);
  CHECK(a.values == b.values);
  CHECK(a.values != d.values);
  validate_params(a);
}

TEST_CASE("forward output is deterministic and finite") {
  for (auto kind : {BackboneKind::mlp, BackboneKind::tiny_cross_attention}) {
    auto c = small_config(kind);
    auto p = init_params(c, 3);
    auto in = sample_input(4);
    auto l1 = forward(p, in);
    auto l2 = forward(p, in);
    REQUIRE(l1.size() == 7);
    CHECK(l1 == l2);
    for (double v : l1) CHECK(std::isfinite(v));
  }
}

TEST_CASE("batched forward equals per-sample forward") {
  auto c = small_config(BackboneKind::mlp);
  auto p = init_params(c, 5);
  std::vector<DecoderInput> batch;
  for (int b = 0; b < 4; ++b) batch.push_back(sample_input(100 + b));
  auto rows = forward_batch(p, batch);
  REQUIRE(rows.size() == 4);
  for (int b = 0; b < 4; ++b) CHECK(rows[b] == forward(p, batch[b]));
}

TEST_CASE("hard-decision signs steer the published logits") {
  auto c = small_config(BackboneKind::mlp);
  auto p = init_params(c, 6);
  auto in = sample_input(7);
  ForwardTrace tr;
  auto raw = forward_noise(p, in, tr);
  auto logits = forward(p, in);
  for (int i = 0; i < 7; ++i)
    CHECK(logits[i] == (in.hard_bits[i] ? -raw[i] : raw[i]));
}

TEST_CASE("forward rejects malformed inputs") {
  auto c = small_config(BackboneKind::mlp);
  auto p = init_params(c, 8);
  auto good = sample_input(9);
  ForwardTrace tr;

  auto bad = good;
  bad.magnitude[2] = -0.5;
  CHECK_THROWS_AS(forward_noise(p, bad, tr), Error);
  bad = good;
  bad.magnitude[0] = std::nan("");
  CHECK_THROWS_AS(forward_noise(p, bad, tr), Error);
  bad = good;
  bad.syndrome_bipolar[1] = 0.5;
  CHECK_THROWS_AS(forward_noise(p, bad, tr), Error);
  bad = good;
  bad.condition = -1.0;
  CHECK_THROWS_AS(forward_noise(p, bad, tr), Error);
  bad = good;
  bad.magnitude.pop_back();
  CHECK_THROWS_AS(forward_noise(p, bad, tr), Error);

  auto broken = p;
  broken.values[10] = std::nan("");
  CHECK_THROWS_AS(validate_params(broken), Error);
}

TEST_CASE("backward matches finite differences on both kinds") {
  for (auto kind : {BackboneKind::mlp, BackboneKind::tiny_cross_attention}) {
    auto c = small_config(kind);
    auto p = init_params(c, 21);
    auto in = sample_input(22);
    RngStream rng(23, 0);
    std::vector<double> cot(7);
    for (auto& v : cot) v = rng.normal();

    std::vector<double> grad(p.values.size(), 0.0);
    ForwardTrace tr;
    forward_noise(p, in, tr);
    backward_noise(p, in, tr, cot.data(), grad);

    const double step = 1e-5;
    const std::size_t stride = std::max<std::size_t>(1, p.values.size() / 160);
    for (std::size_t i = 0; i < p.values.size(); i += stride) {
      auto pp = p, pm = p;
      pp.values[i] += step;
      pm.values[i] -= step;
      double fd = (probe_loss(pp, in, cot) - probe_loss(pm, in, cot)) /
                  (2.0 * step);
      INFO("kind " << (kind == BackboneKind::mlp ? "mlp" : "xattn")
                   << " coordinate " << i);
      CHECK(rel_err(grad[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("gradients accumulate across calls") {
  auto c = small_config(BackboneKind::mlp);
  auto p = init_params(c, 31);
  auto in1 = sample_input(32);
  auto in2 = sample_input(33);
  std::vector<double> cot(7, 0.25);

  std::vector<double> g1(p.values.size(), 0.0), g2(p.values.size(), 0.0),
      gsum(p.values.size(), 0.0);
  ForwardTrace tr;
  forward_noise(p, in1, tr);
  backward_noise(p, in1, tr, cot.data(), g1);
  forward_noise(p, in2, tr);
  backward_noise(p, in2, tr, cot.data(), g2);
  forward_noise(p, in1, tr);
  backward_noise(p, in1, tr, cot.data(), gsum);
  forward_noise(p, in2, tr);
  backward_noise(p, in2, tr, cot.data(), gsum);
  for (std::size_t i = 0; i < gsum.size(); i += 17)
    CHECK(gsum[i] == Catch::Approx(g1[i] + g2[i]).margin(1e-12));
}

TEST_CASE("condition embedding derivative matches finite differences") {
  for (auto kind : {BackboneKind::mlp, BackboneKind::tiny_cross_attention}) {
    auto c = small_config(kind);
    auto p = init_params(c, 41);
    for (double e : {0.05, 0.7, 2.3}) {
      auto grad = embed_condition_grad(p, e);
      const double step = 1e-6;
      auto up = embed_condition(p, e + step);
      auto dn = embed_condition(p, e - step);
      REQUIRE(grad.size() == up.size());
      for (std::size_t i = 0; i < grad.size(); ++i) {
        double fd = (up[i] - dn[i]) / (2.0 * step);
        CHECK(rel_err(grad[i], fd) < 1e-5);
      }
    }
  }
  auto p = init_params(small_config(BackboneKind::mlp), 42);
  CHECK_THROWS_AS(embed_condition(p, -0.1), Error);
  CHECK_THROWS_AS(embed_condition(p, std::nan("")), Error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  for (auto kind : {BackboneKind::mlp, BackboneKind::tiny_cross_attention}) {
    auto c = small_config(kind);
    auto p = init_params(c, 51);

    SECTION(kind == BackboneKind::mlp ? "mlp params only" : "xattn params only") {
      std::stringstream ss;
      serialize_checkpoint(ss, p);
      auto ck = parse_checkpoint(ss);
      CHECK(ck.params.values == p.values);
      CHECK(ck.params.config.kind == c.kind);
      CHECK_FALSE(ck.state.has_value());
    }

    SECTION(kind == BackboneKind::mlp ? "mlp with state" : "xattn with state") {
      TrainStateBlock st;
      RngStream rng(52, 0);
      st.adam_m.resize(p.values.size());
      st.adam_v.resize(p.values.size());
      st.ema.resize(p.values.size());
      for (auto& v : st.adam_m) v = rng.normal();
      for (auto& v : st.adam_v) v = std::fabs(rng.normal());
      for (auto& v : st.ema) v = rng.normal();
      st.step = 12345;
      st.epoch = 17;
      std::stringstream ss;
      serialize_checkpoint(ss, p, &st);
      auto ck = parse_checkpoint(ss);
      REQUIRE(ck.state.has_value());
      CHECK(ck.params.values == p.values);
      CHECK(ck.state->adam_m == st.adam_m);
      CHECK(ck.state->adam_v == st.adam_v);
      CHECK(ck.state->ema == st.ema);
      CHECK(ck.state->step == 12345);
      CHECK(ck.state->epoch == 17);
    }
  }
}

TEST_CASE("checkpoint parsing rejects corrupt data") {
  auto p = init_params(small_config(BackboneKind::mlp), 61);
  std::stringstream ss;
  serialize_checkpoint(ss, p);
  std::string blob = ss.str();

  {
    std::stringstream bad(std::string("XXXX") + blob.substr(4));
    CHECK_THROWS_AS(parse_checkpoint(bad), Error);
  }
  {
    std::stringstream bad(blob.substr(0, blob.size() / 2));
    CHECK_THROWS_AS(parse_checkpoint(bad), Error);
  }
}
