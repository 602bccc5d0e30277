#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eccfm/channel.hpp"
#include "eccfm/decoders.hpp"
#include "eccfm/gf2.hpp"
#include "eccfm/rng.hpp"

using namespace eccfm;

namespace {

// All-zero parameters make the network output identically zero, so the
// predicted noise probabilities are exactly 0.5 everywhere. Several decoder
// invariants become exact oracles under this model.
ModelParams zero_model(int n, int m) {
  BackboneConfig bc;
  bc.kind = BackboneKind::mlp;
  bc.n = n;
  bc.m = m;
  bc.depth = 1;
  bc.width = 8;
  bc.embed_dim = 4;
  return ModelParams{bc, std::vector<double>(param_count(bc), 0.0)};
}

std::vector<BitVec> all_hamming_codewords(const GeneratorMatrix& g) {
  std::vector<BitVec> words;
  for (unsigned idx = 0; idx < 16; ++idx) {
    BitVec msg(4);
    for (int j = 0; j < 4; ++j) msg[j] = (idx >> j) & 1u;
    words.push_back(encode(msg, g));
  }
  return words;
}

}  // namespace

TEST_CASE("one-step decode resolves ties toward bit zero") {
  auto h = hamming74();
  auto zero = zero_model(7, 3);
  std::vector<double> y = {0.3, -0.9, 1.2, -0.4, 0.8, -1.1, 0.2};
  for (auto cond : {ConditionKind::soft, ConditionKind::hard}) {
    auto out = decode_one_step(zero, y, h, 0.6, cond);
    CHECK(out.bits == BitVec(7, 0));
    CHECK(out.converged);
    CHECK(out.steps_used == 1);
  }
}

TEST_CASE("one-step decode is deterministic") {
  auto h = hamming74();
  auto params = init_params(BackboneConfig{BackboneKind::mlp, 7, 3, 2, 16, 8}, 5);
  RngStream rng(9, 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> y(7);
    for (auto& v : y) v = 1.0 + 0.8 * rng.normal();
    auto a = decode_one_step(params, y, h, 0.6);
    auto b = decode_one_step(params, y, h, 0.6);
    CHECK(a.bits == b.bits);
    CHECK(a.converged == (hard_syndrome(a.bits, h) == BitVec(3, 0)));
  }
}

TEST_CASE("multi-step decode counts its steps and validates arguments") {
  auto h = hamming74();
  auto zero = zero_model(7, 3);
  auto sched = make_schedule(7, 4, 0.01);
  std::vector<double> y = {0.3, -0.9, 1.2, -0.4, 0.8, -1.1, 0.2};

  RngStream r1(1, 0), r2(2, 0);
  auto a = decode_multi_step(zero, y, h, 0.6, sched, 4, 0.0, r1);
  auto b = decode_multi_step(zero, y, h, 0.6, sched, 4, 0.0, r2);
  CHECK(a.steps_used == 4);
  CHECK(a.bits == b.bits);  // fraction 0 never touches the generator
  CHECK(a.bits == BitVec(7, 0));
  CHECK(a.converged);

  auto c = decode_multi_step(zero, y, h, 0.6, sched, 1, 0.0, r1);
  auto d = decode_one_step(zero, y, h, 0.6);
  CHECK(c.bits == d.bits);

  auto e = decode_multi_step(zero, y, h, 0.6, sched, 3, 0.5, r1);
  CHECK(e.steps_used == 3);
  CHECK(e.bits == BitVec(7, 0));

  CHECK_THROWS_AS(decode_multi_step(zero, y, h, 0.6, sched, 0, 0.0, r1), Error);
  CHECK_THROWS_AS(decode_multi_step(zero, y, h, 0.6, sched, 2, 1.5, r1), Error);
}

TEST_CASE("iterative decode exits immediately on a valid word") {
  auto h = hamming74();
  auto zero = zero_model(7, 3);
  auto sched = make_schedule(7, 4, 0.01);
  std::vector<double> y(7, 1.0);
  auto out = decode_ddecc(zero, y, h, 0.6, sched, 50, true);
  CHECK(out.converged);
  CHECK(out.steps_used == 0);
  CHECK(out.bits == BitVec(7, 0));
  CHECK(out.trace.empty());

  // zero step budget reports the input's hard decision unconverged
  std::vector<double> bad = {-1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  auto stopped = decode_ddecc(zero, bad, h, 0.6, sched, 0);
  CHECK_FALSE(stopped.converged);
  CHECK(stopped.steps_used == 0);
}

TEST_CASE("iterative update contracts by the scheduled coefficient") {
  // Under the zero model eps_hat = 0, so one update is x *= 1 - coef with
  // coef = sqrt(bt) * beta / (bt + beta). Five failing checks of the length-6
  // repetition code pin t = 5 on the default beta = 0.01 schedule.
  auto rep = repetition(6);
  auto zero = zero_model(6, 5);
  auto sched = make_schedule(6, 1, 0.01);
  REQUIRE(sched.total_steps == 10);
  const double bt = sched.cumulative(5.0);
  const double coef = std::sqrt(bt) * 0.01 / (bt + 0.01);
  CHECK(coef == Catch::Approx(0.037267799624996496).margin(1e-18));

  std::vector<double> y = {1.0, -1.0, -1.0, -1.0, -1.0, -1.0};
  auto out = decode_ddecc(zero, y, rep, 0.7, sched, 3, true);
  CHECK_FALSE(out.converged);
  CHECK(out.steps_used == 3);
  CHECK(out.bits == BitVec{0, 1, 1, 1, 1, 1});
  REQUIRE(out.trace.size() == 3);

  std::vector<double> x = y;
  for (int s = 0; s < 3; ++s) {
    CHECK(out.trace[s].e_hard == 5);
    for (auto& v : x) v -= coef * v;
    CHECK(out.trace[s].e_soft ==
          Catch::Approx(soft_syndrome_condition(x, rep, 0.7)).margin(1e-12));
  }

  CHECK_THROWS_AS(decode_ddecc(zero, y, rep, 0.7, sched, -1), Error);
}

TEST_CASE("belief propagation accepts valid words without iterating") {
  auto h = hamming74();
  auto g = derive_generator(h);
  for (const auto& cw : all_hamming_codewords(g)) {
    auto out = decode_bp(modulate_bpsk(cw), h, 0.6, 20);
    CHECK(out.converged);
    CHECK(out.steps_used == 0);
    CHECK(out.bits == cw);
  }
}

TEST_CASE("belief propagation on clean single flips") {
  auto h = hamming74();
  auto g = derive_generator(h);
  int wrong = 0;
  for (const auto& cw : all_hamming_codewords(g)) {
    auto x = modulate_bpsk(cw);
    for (int flip = 0; flip < 7; ++flip) {
      auto y = x;
      y[flip] = -y[flip];
      auto out = decode_bp(y, h, 0.59, 20);
      // short cycles keep a few of these from landing on the sent word, but
      // the output always settles on some codeword quickly
      CHECK(out.converged);
      CHECK(out.steps_used <= 3);
      CHECK(hard_syndrome(out.bits, h) == BitVec(3, 0));
      wrong += out.bits != cw;
    }
  }
  CHECK(wrong < 28);  // 16 of 112 on this code; allow libm wiggle
}

TEST_CASE("belief propagation survives extreme inputs") {
  auto h = hamming74();
  std::vector<double> huge = {1e9, -1e9, 1e9, 1e9, -1e9, 1e9, 1e9};
  auto out = decode_bp(huge, h, 0.5, 20);
  CHECK(out.bits.size() == 7);
  CHECK(out.steps_used <= 20);

  std::vector<double> tiny(7, 1e-12);
  auto out2 = decode_bp(tiny, h, 0.5, 20);
  CHECK(out2.converged);  // positive values demodulate to the zero word

  CHECK_THROWS_AS(decode_bp(huge, h, 0.0, 20), Error);
  CHECK_THROWS_AS(decode_bp(huge, h, 0.5, -1), Error);
}

TEST_CASE("exhaustive search recovers codewords and corrects single flips") {
  auto h = hamming74();
  auto g = derive_generator(h);
  for (const auto& cw : all_hamming_codewords(g)) {
    auto x = modulate_bpsk(cw);
    auto clean = decode_ml_exhaustive(x, g, h);
    CHECK(clean.bits == cw);
    CHECK(clean.converged);
    for (int flip = 0; flip < 7; ++flip) {
      auto y = x;
      y[flip] = -y[flip];
      CHECK(decode_ml_exhaustive(y, g, h).bits == cw);
    }
  }
}

TEST_CASE("exhaustive search breaks ties toward the smallest message index") {
  auto h = hamming74();
  auto g = derive_generator(h);
  auto words = all_hamming_codewords(g);

  // every codeword is equidistant from the origin
  std::vector<double> origin(7, 0.0);
  CHECK(decode_ml_exhaustive(origin, g, h).bits == words[0]);

  // midpoint between the message-0 and message-1 codewords
  auto a = modulate_bpsk(words[0]);
  auto b = modulate_bpsk(words[1]);
  std::vector<double> mid(7);
  for (int i = 0; i < 7; ++i) mid[i] = 0.5 * (a[i] + b[i]);
  double da = 0.0, db = 0.0;
  for (int i = 0; i < 7; ++i) {
    da += (mid[i] - a[i]) * (mid[i] - a[i]);
    db += (mid[i] - b[i]) * (mid[i] - b[i]);
  }
  REQUIRE(da == Catch::Approx(db).margin(1e-15));
  CHECK(decode_ml_exhaustive(mid, g, h).bits == words[0]);
}

TEST_CASE("exhaustive search refuses oversized message spaces") {
  // two disjoint weight-10 checks over 20 bits leave k = 18
  std::string grid;
  for (int i = 0; i < 20; ++i) grid += i < 10 ? "1 " : "0 ";
  grid += "\n";
  for (int i = 0; i < 20; ++i) grid += i < 10 ? "0 " : "1 ";
  grid += "\n";
  auto h = parse_dense(grid);
  auto g = derive_generator(h);
  REQUIRE(g.k == 18);
  std::vector<double> y(20, 1.0);
  CHECK_THROWS_WITH(decode_ml_exhaustive(y, g, h),
                    Catch::Matchers::ContainsSubstring("guard"));
}

TEST_CASE("majority vote emerges from exhaustive search on repetition codes") {
  auto h = repetition(5);
  auto g = derive_generator(h);
  std::vector<double> y = {0.9, 0.8, -1.1, -0.7, -1.3};
  CHECK(decode_ml_exhaustive(y, g, h).bits == BitVec(5, 1));
  std::vector<double> z = {0.9, 0.8, -1.1, 0.7, -1.3};
  CHECK(decode_ml_exhaustive(z, g, h).bits == BitVec(5, 0));
}

TEST_CASE("sum-product stays close to exhaustive search at 4 dB") {
  auto h = hamming74();
  auto g = derive_generator(h);
  ChannelConfig ch;
  ch.ebn0_db = 4.0;
  ch.rate = 4.0 / 7.0;
  const double sigma = channel_sigma(ch);

  long bp_bits = 0, ml_bits = 0, unc_bits = 0;
  const long frames = 20000;
  for (long f = 0; f < frames; ++f) {
    RngStream rng(4242, static_cast<std::uint64_t>(f));
    BitVec msg(4);
    for (auto& m : msg) m = rng.bernoulli_half() ? 1 : 0;
    auto cw = encode(msg, g);
    auto x = modulate_bpsk(cw);
    std::vector<double> y(7);
    for (int i = 0; i < 7; ++i) y[i] = x[i] + sigma * rng.normal();

    auto bp = decode_bp(y, h, sigma, 20);
    auto ml = decode_ml_exhaustive(y, g, h);
    auto un = demodulate_hard(y);
    for (int i = 0; i < 7; ++i) {
      bp_bits += bp.bits[i] != cw[i];
      ml_bits += ml.bits[i] != cw[i];
      unc_bits += un[i] != cw[i];
    }
  }
  REQUIRE(ml_bits > 0);
  CHECK(ml_bits <= bp_bits);
  CHECK(bp_bits < unc_bits / 2);
  CHECK(static_cast<double>(bp_bits) < 1.35 * static_cast<double>(ml_bits));
}
