#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "emdiff/errors.hpp"
#include "emdiff/numkit.hpp"
#include "emdiff/oracles.hpp"
#include "emdiff/samplers.hpp"

using namespace emdiff;

namespace {

// Noised score of N(mu, I): -(x - mu) / (1 + sigma^2).
FunctionScoreField gaussian_field(std::vector<double> mu) {
  const std::size_t d = mu.size();
  return FunctionScoreField(d, [mu](const Tensor& x, double sigma) {
    Tensor out(x.shape());
    const std::size_t d = mu.size();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -(x[i] - mu[i % d]) / (1.0 + sigma * sigma);
    return out;
  });
}

std::vector<double> column_means(const Tensor& x) {
  std::vector<double> m(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += x.at(i, j);
  for (auto& v : m) v /= static_cast<double>(x.rows());
  return m;
}

double column_variance(const Tensor& x, std::size_t j) {
  const double m = column_means(x)[j];
  double v = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) v += (x.at(i, j) - m) * (x.at(i, j) - m);
  return v / static_cast<double>(x.rows());
}

// Two-sample Kolmogorov-Smirnov p-value from the asymptotic distribution.
double ks_p_value(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double n = std::sqrt(static_cast<double>(a.size() * b.size()) / static_cast<double>(a.size() + b.size()));
  const double lambda = (n + 0.12 + 0.11 / n) * d;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) q += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

PmcConfig conjugate_config() {
  // one level whose sigma^2 equals the step size: then the chain's stationary law is the posterior
  PmcConfig cfg;
  cfg.gamma = 0.02;
  cfg.ladder = SigmaLadder{std::sqrt(0.02), std::sqrt(0.02), 1, 500};
  return cfg;
}

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
  return s;
}

}  // namespace

TEST_CASE("sigma ladder") {
  const SigmaLadder l{0.5, 0.01, 10, 30};
  const auto s = l.sigmas();
  REQUIRE(s.size() == 10);
  CHECK(s.front() == doctest::Approx(0.5));
  CHECK(s.back() == doctest::Approx(0.01));
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] / s[i - 1] == doctest::Approx(s[1] / s[0]));
  CHECK(l.total_steps() == 300);
  CHECK(SigmaLadder{0.5, 0.2, 1, 5}.sigmas() == std::vector<double>{0.2});
}

TEST_CASE("config validation") {
  PmcConfig p;
  p.alpha = 0.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p = PmcConfig{};
  p.ladder.sigma_min = 0.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p = PmcConfig{};
  p.gamma = -1.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  CHECK_THROWS_AS(DpsConfig{-0.1}.validate(), InvalidArgument);
}

TEST_CASE("unconditional sampling from exact gaussian scores") {
  Rng rng(1);
  const Tensor x = sample_unconditional(gaussian_field({0.0, 0.0}), schedule(), 10000, rng);
  const auto m = column_means(x);
  CHECK(std::abs(m[0]) < 0.05);
  CHECK(std::abs(m[1]) < 0.05);
  CHECK(std::abs(column_variance(x, 0) - 1.0) < 0.05);
  CHECK(std::abs(column_variance(x, 1) - 1.0) < 0.05);
  double cov = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) cov += (x.at(i, 0) - m[0]) * (x.at(i, 1) - m[1]);
  CHECK(std::abs(cov / 10000.0) < 0.05);

  Rng rng2(2);
  const Tensor shifted = sample_unconditional(gaussian_field({3.0, 3.0}), schedule(), 2000, rng2);
  for (double v : column_means(shifted)) CHECK(std::abs(v - 3.0) < 0.1);

  const Tensor none = sample_unconditional(gaussian_field({0.0, 0.0}), schedule(), 0, rng);
  CHECK(none.shape() == Shape{0, 2});
}

TEST_CASE("samplers report divergence with a step index") {
  const FunctionScoreField broken(1, [](const Tensor& x, double sigma) {
    return Tensor(x.shape(), sigma < 0.3 ? std::numeric_limits<double>::quiet_NaN() : 0.0);
  });
  Rng rng(3);
  try {
    sample_unconditional(broken, schedule(), 4, rng);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() > 0);
  }
  PmcConfig cfg;
  cfg.ladder = SigmaLadder{0.5, 0.1, 4, 3};
  try {
    sample_pmc(broken, MeasurementOperator::awgn({1}, 1.0), Tensor({1}, 0.0), cfg, rng);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    // second level: 0.5 * 0.2^(1/3) = 0.29 < 0.3, reached after 3 steps
    CHECK(e.step() == 3);
  }
}

TEST_CASE("zero guidance reproduces the unconditional sampler") {
  Rng a(4), b(4);
  const auto field = gaussian_field({0.5, -0.5});
  const Tensor u = sample_unconditional(field, schedule(), 50, a);
  const Tensor g = sample_dps(field, schedule(), MeasurementOperator::awgn({2}, 0.3), Tensor({2}, {4.0, 4.0}),
                              DpsConfig{0.0}, b, 50);
  CHECK(u == g);
}

TEST_CASE("dps on a linear gaussian problem") {
  // prior N(0, I), y = x + N(0, I): posterior mean y / 2
  const Tensor y({2}, {2.0, -1.0});
  const auto exact = oracles::gaussian_posterior(oracles::GaussianPrior::isotropic(Tensor({2}), 1.0),
                                                 Tensor::matrix(2, 2, {1, 0, 0, 1}), y, 1.0);
  Rng rng(5);
  const Tensor x = sample_dps(gaussian_field({0.0, 0.0}), schedule(), MeasurementOperator::awgn({2}, 1.0), y,
                              DpsConfig{9e-4}, rng, 5000);
  const auto m = column_means(x);
  CHECK(std::abs(m[0] - exact.mean[0]) < 0.1 * std::abs(exact.mean[0]));
  CHECK(std::abs(m[1] - exact.mean[1]) < 0.1 * std::abs(exact.mean[1]));
}

TEST_CASE("dps with a sharp likelihood lands on the measurement") {
  const double noise = 0.01;
  const Tensor y({2}, {1.5, -0.5});
  Rng rng(6);
  const Tensor x = sample_dps(gaussian_field({0.0, 0.0}), schedule(), MeasurementOperator::awgn({2}, noise), y,
                              DpsConfig{0.4}, rng, 500);
  const auto m = column_means(x);
  CHECK(std::abs(m[0] - y[0]) < 3 * noise);
  CHECK(std::abs(m[1] - y[1]) < 3 * noise);
}

TEST_CASE("pmc recovers the conjugate posterior") {
  const std::vector<Measurement> ms{{0, Tensor({1}, 2.0), MeasurementOperator::awgn({1}, 1.0)}};
  const auto out = posterior_batch(gaussian_field({0.0}), ms, conjugate_config(), Rng(7), 10000);
  REQUIRE(out.size() == 1);
  const Tensor& x = out[0];
  CHECK(std::abs(column_means(x)[0] - 1.0) < 0.05);
  CHECK(std::abs(column_variance(x, 0) - 0.5) < 0.05);
}

TEST_CASE("pmc recovers a 2-D conjugate posterior with a mask") {
  // second coordinate unobserved, so its posterior is the prior
  const auto op = MeasurementOperator::inpaint(Tensor({2}, {1.0, 0.0}), 1.0);
  const std::vector<Measurement> ms{{3, Tensor({2}, {2.0, 0.0}), op}};
  const auto x = posterior_batch(gaussian_field({0.0, 0.0}), ms, conjugate_config(), Rng(8), 10000)[0];
  const auto m = column_means(x);
  CHECK(std::abs(m[0] - 1.0) < 0.05);
  CHECK(std::abs(m[1]) < 0.05);
  CHECK(std::abs(column_variance(x, 0) - 0.5) < 0.05);
  CHECK(std::abs(column_variance(x, 1) - 1.0) < 0.1);
}

TEST_CASE("pmc without noise or data term follows the score to its fixed point") {
  PmcConfig cfg;
  cfg.gamma = 0.0;
  cfg.tau = 0.0;
  cfg.ladder = SigmaLadder{0.5, 0.5, 1, 400};
  const auto field = gaussian_field({1.0, -2.0});
  Rng a(9), b(10);
  const auto op = MeasurementOperator::awgn({2}, 1.0);
  const Tensor start({2}, {4.0, 4.0});
  const Tensor x1 = sample_pmc(field, op, Tensor({2}), cfg, a, start);
  const Tensor x2 = sample_pmc(field, op, Tensor({2}), cfg, b, start);
  CHECK(x1 == x2);
  const Tensor s = field.noised_score(x1.reshaped({1, 2}), 0.5);
  CHECK(std::sqrt(squared_norm(s)) < 1e-6);
}

TEST_CASE("pmc covers both modes of a symmetric mixture") {
  oracles::GmmPrior prior;
  prior.weights = {0.5, 0.5};
  prior.components = {oracles::GaussianPrior::isotropic(Tensor({2}, {2.0, 0.0}), 0.25),
                      oracles::GaussianPrior::isotropic(Tensor({2}, {-2.0, 0.0}), 0.25)};
  PmcConfig cfg;
  cfg.gamma = 0.01;
  cfg.ladder = SigmaLadder{1.0, 0.1, 10, 30};
  const std::vector<Measurement> ms{{0, Tensor({2}), MeasurementOperator::awgn({2}, 2.0)}};
  const auto x = posterior_batch(oracles::GmmScoreField(prior), ms, cfg, Rng(11), 10000)[0];
  std::size_t right = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) right += x.at(i, 0) > 0.0;
  CHECK(std::abs(static_cast<double>(right) / 10000.0 - 0.5) < 0.05);
}

TEST_CASE("batch of one matches a single chain") {
  const auto field = gaussian_field({0.3, 0.1});
  const auto op = MeasurementOperator::awgn({2}, 0.5);
  PmcConfig cfg;
  cfg.gamma = 0.01;
  cfg.ladder = SigmaLadder{0.5, 0.1, 3, 10};
  const Rng base(12);
  const Measurement m{42, Tensor({2}, {1.0, 2.0}), op};
  const auto batch = posterior_batch(field, std::span(&m, 1), cfg, base, 1);
  Rng r = chain_rng(base, 42, 0);
  const Tensor single = sample_pmc(field, op, m.y, cfg, r);
  CHECK(batch[0].values() == single.values());
}

TEST_CASE("permuting measurements permutes outputs") {
  const auto field = gaussian_field({0.0, 0.0});
  PmcConfig cfg;
  cfg.gamma = 0.01;
  cfg.ladder = SigmaLadder{0.5, 0.1, 3, 10};
  std::vector<Measurement> ms;
  for (std::uint64_t i = 0; i < 5; ++i) {
    ms.push_back({i, Tensor({2}, {static_cast<double>(i), -1.0}), MeasurementOperator::awgn({2}, 0.5)});
  }
  const Rng base(13);
  const auto a = posterior_batch(field, ms, cfg, base, 3);
  std::vector<Measurement> rev(ms.rbegin(), ms.rend());
  const auto b = posterior_batch(field, rev, cfg, base, 3);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == b[4 - i]);
  CHECK(a == posterior_batch(field, ms, cfg, base, 3));
}

TEST_CASE("chains across identical measurements are exchangeable") {
  const auto field = gaussian_field({0.0});
  const auto op = MeasurementOperator::awgn({1}, 1.0);
  std::vector<Measurement> many;
  for (std::uint64_t i = 0; i < 500; ++i) many.push_back({i, Tensor({1}, 2.0), op});
  const auto across = posterior_batch(field, many, conjugate_config(), Rng(14), 1);
  const Measurement one{1000, Tensor({1}, 2.0), op};
  const auto within = posterior_batch(field, std::span(&one, 1), conjugate_config(), Rng(14), 500)[0];
  std::vector<double> a, b(within.values().begin(), within.values().end());
  for (const auto& t : across) a.push_back(t[0]);
  CHECK(ks_p_value(a, b) > 0.01);
}

TEST_CASE("posterior batch errors name the measurement") {
  const FunctionScoreField field(1, [](const Tensor& x, double) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 50.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return out;
  });
  const auto op = MeasurementOperator::awgn({1}, 1.0);
  const std::vector<Measurement> ms{{7, Tensor({1}, 0.0), op}, {8, Tensor({1}, 100.0), op}};
  PmcConfig cfg;
  cfg.ladder = SigmaLadder{0.5, 0.1, 2, 2};
  try {
    posterior_batch(field, ms, cfg, Rng(15), 1);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("measurement 8") != std::string::npos);
    CHECK(e.step() == 0);
  }
  CHECK_THROWS_AS(posterior_batch(field, std::span<const Measurement>(), cfg, Rng(1), 1), InvalidArgument);
}

TEST_CASE("pmc initial states") {
  const Tensor y({4}, {1.0, 2.0, 3.0, 4.0});
  CHECK(pmc_initial_state(MeasurementOperator::awgn({4}, 0.1), y, 0.0) == y);
  const auto masked = pmc_initial_state(MeasurementOperator::inpaint(Tensor({4}, {1.0, 0.0, 1.0, 0.0})), y, 0.5);
  CHECK(masked.values() == std::vector<double>{1.0, 0.5, 3.0, 0.5});
}

TEST_CASE("pmc trace") {
  PmcConfig cfg;
  cfg.ladder = SigmaLadder{0.5, 0.1, 2, 3};
  std::vector<PmcTraceRow> trace;
  Rng rng(16);
  const auto op = MeasurementOperator::awgn({2}, 1.0);
  const Tensor x = sample_pmc(gaussian_field({0.0, 0.0}), op, Tensor({2}, {1.0, 1.0}), cfg, rng, std::nullopt, &trace);
  REQUIRE(trace.size() == 6);
  CHECK(trace.back().step == 5);
  CHECK(trace.back().log_likelihood == doctest::Approx(log_likelihood(op, x, Tensor({2}, {1.0, 1.0}))));
  CHECK(trace.back().state_norm == doctest::Approx(std::sqrt(squared_norm(x))));
}
