#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eccfm/channel.hpp"
#include "eccfm/rng.hpp"
#include "eccfm/soft_syndrome.hpp"

using namespace eccfm;

TEST_CASE("hard syndrome error sum counts unsatisfied checks") {
  auto h = hamming74();
  std::vector<double> clean(7, 1.0);
  CHECK(syndrome_error_sum(clean, h) == 0);
  // flip coordinate 6 (present in every check)
  std::vector<double> flipped = clean;
  flipped[6] = -1.0;
  CHECK(syndrome_error_sum(flipped, h) == 3);
  // flip coordinate 0 (present only in the last check)
  flipped = clean;
  flipped[0] = -0.2;
  CHECK(syndrome_error_sum(flipped, h) == 1);
}

TEST_CASE("soft syndrome of the all-plus-one word at unit sigma") {
  auto h = hamming74();
  std::vector<double> x(7, 1.0);
  auto s = soft_syndrome(x, h, 1.0);
  REQUIRE(s.size() == 3);
  // every check has weight 4: (1 - tanh(1)^4) / 2
  for (double sj : s) CHECK(sj == Catch::Approx(0.33178511780695874).margin(1e-12));
  CHECK(soft_syndrome_condition(x, h, 1.0) ==
        Catch::Approx(0.4031454772436845).margin(1e-10));
}

TEST_CASE("a zero coordinate drives its checks to half") {
  auto h = hamming74();
  std::vector<double> x(7, 1.0);
  x[6] = 0.0;  // participates in every check
  auto s = soft_syndrome(x, h, 1.0);
  for (double sj : s) CHECK(sj == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("soft syndrome saturates to zero on a confident valid word") {
  auto h = hamming74();
  std::vector<double> x(7, 1.0);
  CHECK(soft_syndrome_condition(x, h, 0.3) < 1e-6);
  // single fully violated check at tiny sigma approaches s = 1, and the
  // floor keeps the penalty finite
  auto rep = repetition(2);
  std::vector<double> bad = {5.0, -5.0};
  double e = soft_syndrome_condition(bad, rep, 0.05);
  CHECK(std::isfinite(e));
  CHECK(e > 1.0);
}

TEST_CASE("single-check code at a completely uninformative point") {
  auto rep = repetition(2);
  std::vector<double> x = {0.0, 1.0};
  auto s = soft_syndrome(x, rep, 1.0);
  CHECK(s[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(soft_syndrome_condition(x, rep, 1.0) ==
        Catch::Approx(0.6931471805599453).margin(1e-12));
}

TEST_CASE("soft syndrome rejects bad sigma and length") {
  auto h = hamming74();
  std::vector<double> x(7, 1.0);
  CHECK_THROWS_AS(soft_syndrome(x, h, 0.0), Error);
  CHECK_THROWS_AS(soft_syndrome(x, h, -1.0), Error);
  CHECK_THROWS_AS(soft_syndrome({1.0, 1.0}, h, 1.0), Error);
}

TEST_CASE("condition gradient matches central differences") {
  auto h = hamming74();
  RngStream rng(31, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(7);
    for (auto& v : x) v = 1.5 * rng.normal();
    const double sigma = 0.6 + 0.5 * rng.uniform01();
    auto grad = soft_syndrome_condition_grad(x, h, sigma);
    const double step = 1e-6;
    for (int i = 0; i < 7; ++i) {
      auto xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      double fd = (soft_syndrome_condition(xp, h, sigma) -
                   soft_syndrome_condition(xm, h, sigma)) /
                  (2.0 * step);
      CHECK(grad[i] == Catch::Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("probability-space loss agrees with the bipolar map") {
  auto h = hamming74();
  std::vector<double> probs = {0.1, 0.9, 0.5, 0.2, 0.8, 0.3, 0.05};
  std::vector<double> bipolar(7);
  for (int i = 0; i < 7; ++i) bipolar[i] = 1.0 - 2.0 * probs[i];
  CHECK(soft_syndrome_loss(probs, h, 0.8) ==
        Catch::Approx(soft_syndrome_condition(bipolar, h, 0.8)).margin(1e-15));
  CHECK_THROWS_AS(soft_syndrome_loss({0.1, -0.2, 0.5, 0.5, 0.5, 0.5, 0.5}, h, 1.0),
                  Error);
}

TEST_CASE("probability-space gradient matches central differences") {
  auto h = hamming74();
  RngStream rng(77, 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> p(7);
    for (auto& v : p) v = 0.05 + 0.9 * rng.uniform01();
    const double sigma = 0.7;
    auto grad = soft_syndrome_loss_grad(p, h, sigma);
    const double step = 1e-7;
    for (int i = 0; i < 7; ++i) {
      auto pp = p, pm = p;
      pp[i] += step;
      pm[i] -= step;
      double fd = (soft_syndrome_loss(pp, h, sigma) -
                   soft_syndrome_loss(pm, h, sigma)) /
                  (2.0 * step);
      CHECK(grad[i] == Catch::Approx(fd).margin(1e-5));
    }
  }
}

TEST_CASE("soft measure falls smoothly as reliability grows") {
  auto h = hamming74();
  // sweep one coordinate of a valid word from violated to satisfied
  double prev = -1.0;
  bool monotone = true;
  for (double v = -2.0; v <= 2.0; v += 0.05) {
    std::vector<double> x(7, 1.0);
    x[3] = v;
    double e = soft_syndrome_condition(x, h, 1.0);
    if (prev >= 0.0 && e > prev + 1e-12) monotone = false;
    prev = e;
  }
  CHECK(monotone);
}
