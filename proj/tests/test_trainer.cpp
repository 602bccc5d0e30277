#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eccfm/gf2.hpp"
#include "eccfm/trainer.hpp"

using namespace eccfm;

namespace {

BackboneConfig tiny_config(BackboneKind kind = BackboneKind::mlp) {
  BackboneConfig c;
  c.kind = kind;
  c.n = 7;
  c.m = 3;
  c.depth = 1;
  c.width = 16;
  c.embed_dim = 8;
  return c;
}

TrainConfig quick_train_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.steps_per_epoch = 8;
  cfg.batch_size = 16;
  cfg.lr_init = 3e-3;
  cfg.lr_final = 1e-3;
  cfg.seed = 7;
  return cfg;
}

double rel_err(double a, double b) {
  double denom = std::max({1e-7, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

}  // namespace

TEST_CASE("bce oracle values") {
  // -ln(0.5) per bit, two branches -> 2 ln 2 on uniform predictions
  std::vector<double> half(7, 0.5);
  BitVec zeros(7, 0);
  CHECK(ec_cm_loss(half, half, zeros) ==
        Catch::Approx(1.3862943611198906).margin(1e-12));
  CHECK(bce_mean(half, zeros) ==
        Catch::Approx(0.6931471805599453).margin(1e-12));

  // perfect predictions cost (numerically) nothing
  std::vector<double> sure = {1e-15, 1e-15, 1e-15};
  BitVec z3(3, 0);
  CHECK(bce_mean(sure, z3) < 1e-10);

  // clamping keeps confidently-wrong predictions finite
  std::vector<double> wrong = {1.0, 1.0, 1.0};
  double clamped = bce_mean(wrong, z3);
  CHECK(std::isfinite(clamped));
  CHECK(clamped == Catch::Approx(-std::log(1.0 - (1.0 - 1e-12))).margin(1e-12));

  CHECK_THROWS_AS(bce_mean({0.5}, BitVec{0, 1}), Error);
  CHECK_THROWS_AS(bce_mean({1.5}, BitVec{0}), Error);
}

TEST_CASE("loss weight scales the consistency term only") {
  std::vector<double> half(7, 0.5);
  BitVec zeros(7, 0);
  double base = ec_cm_loss(half, half, zeros, 1.0);
  CHECK(ec_cm_loss(half, half, zeros, 2.5) ==
        Catch::Approx(2.5 * base).margin(1e-12));
}

TEST_CASE("total loss assembles consistency and syndrome parts") {
  auto h = hamming74();
  std::vector<double> p_t(7), p_r(7);
  for (int i = 0; i < 7; ++i) {
    p_t[i] = 0.2 + 0.07 * i;
    p_r[i] = 0.65 - 0.05 * i;
  }
  BitVec x0(7, 0);
  double lambda = 0.01;
  auto parts = total_loss(p_t, p_r, x0, h, 1.0, 0.9, lambda);
  double syn = soft_syndrome_loss(p_t, h, 1.0) + soft_syndrome_loss(p_r, h, 0.9);
  CHECK(parts.consistency ==
        Catch::Approx(ec_cm_loss(p_t, p_r, x0)).margin(1e-12));
  CHECK(parts.syn_t + parts.syn_r == Catch::Approx(syn).margin(1e-12));
  CHECK(parts.total ==
        Catch::Approx(parts.consistency + lambda * syn).margin(1e-12));
}

TEST_CASE("squared prediction gap is bounded by the summed bce") {
  // analytic grid first
  for (double p : {0.01, 0.2, 0.5, 0.8, 0.99}) {
    for (double q : {0.05, 0.35, 0.65, 0.95}) {
      for (int bit : {0, 1}) {
        double target = bit;
        double gap = (p - q) * (p - q);
        double b = -(target * std::log(std::max(p, 1e-12)) +
                     (1 - target) * std::log(std::max(1 - p, 1e-12)));
        b += -(target * std::log(std::max(q, 1e-12)) +
               (1 - target) * std::log(std::max(1 - q, 1e-12)));
        CHECK(gap <= b + 1e-12);
      }
    }
  }

  // randomized property check through the library entry point
  RngStream rng(99, 0);
  int trials = 2000;
  for (int tcase = 0; tcase < trials; ++tcase) {
    std::vector<double> p(5), q(5);
    BitVec x0(5);
    for (int i = 0; i < 5; ++i) {
      p[i] = rng.uniform01();
      q[i] = rng.uniform01();
      x0[i] = rng.bernoulli_half() ? 1 : 0;
    }
    auto ok = prop1_check(p, q, x0);
    for (auto v : ok) CHECK(v == 1);
  }
}

TEST_CASE("cosine learning rate hits both endpoints") {
  TrainConfig cfg;
  cfg.lr_init = 1e-4;
  cfg.lr_final = 5e-7;
  cfg.epochs = 120;
  CHECK(cosine_lr(0, cfg) == Catch::Approx(1e-4).margin(1e-18));
  CHECK(cosine_lr(119, cfg) == Catch::Approx(5e-7).margin(1e-18));
  double mid = cosine_lr(119 / 2, cfg);
  CHECK(mid < 1e-4);
  CHECK(mid > 5e-7);
  // monotone decay
  double prev = cosine_lr(0, cfg);
  for (int e = 1; e < 120; ++e) {
    double cur = cosine_lr(e, cfg);
    CHECK(cur <= prev + 1e-18);
    prev = cur;
  }
}

TEST_CASE("train config validation") {
  auto sched = make_schedule(7, 4, 0.01);
  TrainConfig cfg;
  cfg.validate(sched, 4.0 / 7.0);

  auto bad = cfg;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(sched, 4.0 / 7.0), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(sched, 4.0 / 7.0), ConfigError);
  bad = cfg;
  bad.lr_init = -1.0;
  CHECK_THROWS_AS(bad.validate(sched, 4.0 / 7.0), ConfigError);
  bad = cfg;
  bad.ema_decay = 1.0;
  CHECK_THROWS_AS(bad.validate(sched, 4.0 / 7.0), ConfigError);

  // coverage guard: cumulative noise must reach the channel variance
  bad = cfg;
  bad.guard_ebn0_db = 4.0;
  // sigma(4 dB, 4/7)^2 ~= 0.3483; schedule tops out at 8 * 0.01 = 0.08
  CHECK_THROWS_WITH(bad.validate(sched, 4.0 / 7.0),
                    Catch::Matchers::ContainsSubstring("beta_step"));
  auto wide = make_schedule(7, 4, 0.05);
  bad.validate(wide, 4.0 / 7.0);  // 8 * 0.05 = 0.40 >= 0.3483
}

TEST_CASE("batch gradient matches finite differences for every objective") {
  auto h = hamming74();
  auto sched = make_schedule(7, 4, 0.05);

  for (auto obj : {Objective::eccfm, Objective::vanilla_cm, Objective::ddecc}) {
    auto bc = tiny_config();
    auto params = init_params(bc, 17);
    TrainConfig cfg = quick_train_config();
    cfg.objective = obj;
    cfg.batch_size = 6;

    // frozen batch so the loss is a pure function of the parameters
    RngStream rng(55, 3);
    GeneratorMatrix g = derive_generator(h);
    auto batch = draw_batch(cfg, h, g, sched, rng, 6);

    ModelParams ema{params.config, params.values};
    std::vector<double> grad(params.values.size(), 0.0);
    ForwardTrace tt, tr;
    auto base =
        batch_loss_grad(params, cfg, h, sched, batch, &grad, &ema, tt, tr,
                        nullptr);
    REQUIRE(std::isfinite(base.loss));

    const double step = 1e-6;
    const std::size_t stride =
        std::max<std::size_t>(1, params.values.size() / 60);
    for (std::size_t i = 0; i < params.values.size(); i += stride) {
      auto pp = params, pm = params;
      pp.values[i] += step;
      pm.values[i] -= step;
      auto lp = batch_loss_grad(pp, cfg, h, sched, batch, nullptr, &ema, tt,
                                tr, nullptr);
      auto lm = batch_loss_grad(pm, cfg, h, sched, batch, nullptr, &ema, tt,
                                tr, nullptr);
      double fd = (lp.loss - lm.loss) / (2.0 * step);
      INFO("objective " << static_cast<int>(obj) << " coordinate " << i);
      CHECK(rel_err(grad[i], fd) < 2e-4);
    }
  }
}

TEST_CASE("short training run lowers the loss and stays finite") {
  auto h = hamming74();
  auto g = derive_generator(h);
  auto sched = make_schedule(7, 4, 0.05);
  auto bc = tiny_config();
  TrainConfig cfg = quick_train_config();
  cfg.epochs = 6;
  cfg.steps_per_epoch = 20;

  auto st = init_train_state(bc, cfg);
  std::vector<double> losses;
  train_run(st, cfg, h, g, sched, [&](const TrainStepRecord& r) {
    losses.push_back(r.loss);
  });
  REQUIRE(losses.size() == 6u * 20u);
  for (double l : losses) CHECK(std::isfinite(l));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) head += losses[i];
  for (int i = 0; i < 20; ++i) tail += losses[losses.size() - 1 - i];
  CHECK(tail < head);

  // optimizer state advanced and EMA tracks near the live weights
  CHECK(st.opt.step == 120);
  REQUIRE(st.opt.ema.size() == st.params.values.size());
  double gap = 0.0;
  for (std::size_t i = 0; i < st.opt.ema.size(); ++i)
    gap = std::max(gap, std::fabs(st.opt.ema[i] - st.params.values[i]));
  CHECK(gap < 1.0);
  CHECK(gap > 0.0);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  auto h = hamming74();
  auto g = derive_generator(h);
  auto sched = make_schedule(7, 4, 0.05);
  auto bc = tiny_config();
  TrainConfig cfg = quick_train_config();

  auto run = [&] {
    auto st = init_train_state(bc, cfg);
    std::vector<double> losses;
    train_run(st, cfg, h, g, sched, [&](const TrainStepRecord& r) {
      losses.push_back(r.loss);
    });
    return std::make_pair(std::move(st.params.values), std::move(losses));
  };
  auto [pa, la] = run();
  auto [pb, lb] = run();
  CHECK(pa == pb);
  CHECK(la == lb);
}

TEST_CASE("random codeword batches are valid codewords") {
  auto h = hamming74();
  auto g = derive_generator(h);
  auto sched = make_schedule(7, 4, 0.05);
  TrainConfig cfg = quick_train_config();
  cfg.random_codewords = true;
  RngStream rng(31, 0);
  auto batch = draw_batch(cfg, h, g, sched, rng, 32);
  REQUIRE(batch.size() == 32);
  bool saw_nonzero = false;
  for (const auto& s : batch) {
    auto synd = hard_syndrome(s.x0_bits, h);
    for (auto v : synd) CHECK(v == 0);
    for (auto b : s.x0_bits) saw_nonzero |= b != 0;
    for (int i = 0; i < 7; ++i)
      CHECK(s.x0_signal[i] == (s.x0_bits[i] ? -1.0 : 1.0));
  }
  CHECK(saw_nonzero);

  cfg.random_codewords = false;
  auto zero_batch = draw_batch(cfg, h, g, sched, rng, 4);
  for (const auto& s : zero_batch)
    for (auto b : s.x0_bits) CHECK(b == 0);
}

TEST_CASE("non-finite loss raises a diagnostic error") {
  auto h = hamming74();
  auto g = derive_generator(h);
  auto sched = make_schedule(7, 4, 0.05);
  auto bc = tiny_config();
  TrainConfig cfg = quick_train_config();
  auto st = init_train_state(bc, cfg);
  st.params.values[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train_run(st, cfg, h, g, sched), Error);

  // the dump path itself, bypassing the up-front parameter validation
  auto params = init_params(bc, 1);
  params.values[0] = std::nan("");
  RngStream rng(2, 0);
  auto batch = draw_batch(cfg, h, g, sched, rng, 2);
  std::string dump;
  ForwardTrace tt, tr;
  auto res = batch_loss_grad(params, cfg, h, sched, batch, nullptr, nullptr,
                             tt, tr, &dump);
  CHECK_FALSE(std::isfinite(res.loss));
  CHECK_FALSE(dump.empty());
}
