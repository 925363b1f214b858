#include <cmath>

#include "doctest.h"
#include "emdiff/errors.hpp"
#include "emdiff/numkit.hpp"
#include "emdiff/schedule.hpp"

using namespace emdiff;

TEST_CASE("linear schedule endpoints") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.beta[0] == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(s.beta[999] == doctest::Approx(0.02).epsilon(1e-14));
  CHECK(s.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-14));
  double prod = 1.0;
  for (std::size_t t = 0; t < 1000; ++t) {
    prod *= 1.0 - s.beta[t];
    CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-13));
    CHECK(s.sigma[t] == doctest::Approx(std::sqrt(1.0 - prod)).epsilon(1e-13));
    if (t > 0) {
      CHECK(s.beta[t] >= s.beta[t - 1]);
      CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      CHECK(s.sigma[t] > s.sigma[t - 1]);
    }
  }
}

TEST_CASE("single step schedule") {
  const auto s = make_linear_schedule(1, 0.3, 0.3);
  REQUIRE(s.steps() == 1);
  CHECK(s.alpha_bar[0] == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("schedule monotone for random valid inputs") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const double lo = 1e-5 + 0.1 * rng.uniform();
    const double hi = lo + (0.99 - lo) * rng.uniform();
    const auto s = make_linear_schedule(1 + rng.uniform_index(200), lo, hi);
    for (std::size_t t = 1; t < s.steps(); ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  }
}

TEST_CASE("schedule rejects bad bounds") {
  CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), InvalidArgument);
}

TEST_CASE("perturb near the no-noise limit") {
  const auto s = make_linear_schedule(10, 1e-12, 1e-12);
  Rng rng(1);
  const Tensor x0 = Tensor::vector({1.0, -2.0, 0.5});
  const auto p = perturb(x0, 0, rng, s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.x_t[i] == doctest::Approx(x0[i]).epsilon(1e-5));
}

TEST_CASE("perturb of zero signal is pure scaled noise") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  const auto p = perturb(Tensor({8}), 999, rng, s);
  const double k = std::sqrt(1.0 - s.alpha_bar[999]);
  for (std::size_t i = 0; i < 8; ++i) CHECK(p.x_t[i] == k * p.eps[i]);
}

TEST_CASE("perturb variance matches 1 - alpha_bar") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Rng rng(9);
  const std::size_t t = 300;
  const Tensor x0({100000}, 0.8);
  const auto p = perturb(x0, t, rng, s);
  const double a = std::sqrt(s.alpha_bar[t]);
  double m = 0.0, v = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) m += p.x_t[i] - a * x0[i];
  m /= 1e5;
  for (std::size_t i = 0; i < x0.size(); ++i) v += std::pow(p.x_t[i] - a * x0[i] - m, 2);
  v /= 1e5;
  CHECK(std::abs(v / (1.0 - s.alpha_bar[t]) - 1.0) < 0.02);
}

TEST_CASE("perturb rejects out of range step") {
  const auto s = make_linear_schedule(5, 1e-4, 0.02);
  Rng rng(1);
  CHECK_THROWS_AS(perturb(Tensor({2}), 5, rng, s), IndexError);
  CHECK_THROWS_AS(true_score_target(Tensor({2}), Tensor({2}), 7, s), IndexError);
}

TEST_CASE("true score target") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  Rng rng(2);
  const Tensor x0 = gaussian_sample(rng, {32}, 0.0, 1.0);
  const std::size_t t = 500;
  const auto p = perturb(x0, t, rng, s);
  const Tensor target = true_score_target(p.x_t, x0, t, s);
  const double k = std::sqrt(1.0 - s.alpha_bar[t]);
  for (std::size_t i = 0; i < 32; ++i) CHECK(target[i] == doctest::Approx(-p.eps[i] / k).epsilon(1e-12));

  Tensor at_mean = scale(x0, std::sqrt(s.alpha_bar[t]));
  const Tensor at_mean_target = true_score_target(at_mean, x0, t, s);
  for (double v : at_mean_target.span()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("true score target hand case") {
  // single-step schedule with alpha_bar = 0.75
  const auto s = make_linear_schedule(1, 0.25, 0.25);
  const Tensor v = true_score_target(Tensor::vector({2.0}), Tensor::vector({2.0}), 0, s);
  CHECK(v[0] == doctest::Approx(-(2.0 - std::sqrt(0.75) * 2.0) / 0.25).epsilon(1e-14));
  CHECK(v[0] == doctest::Approx(-1.0718).epsilon(1e-4));
}

TEST_CASE("score target needs some noise") {
  // beta so small that 1 - beta rounds to one
  const auto s = make_linear_schedule(1, 1e-300, 1e-300);
  CHECK_THROWS_AS(true_score_target(Tensor({2}), Tensor({2}), 0, s), NumericalError);
}
