#include "emdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "emdiff/errors.hpp"
#include "emdiff/numkit.hpp"

namespace emdiff {

NoiseSchedule make_linear_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 1) throw InvalidArgument("schedule: T must be at least 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw InvalidArgument("schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  s.sigma.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    s.beta[t] = beta_min + frac * (beta_max - beta_min);
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
    s.sigma[t] = std::sqrt(1.0 - prod);
  }
  return s;
}

namespace {
void check_step(std::size_t t, const NoiseSchedule& sched) {
  if (t >= sched.steps()) {
    throw IndexError("step " + std::to_string(t) + " outside schedule of " + std::to_string(sched.steps()));
  }
}
}  // namespace

Perturbed perturb(const Tensor& x0, std::size_t t, Rng& rng, const NoiseSchedule& sched) {
  check_step(t, sched);
  Perturbed p{Tensor(x0.shape()), gaussian_sample(rng, x0.shape(), 0.0, 1.0)};
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double s = std::sqrt(1.0 - sched.alpha_bar[t]);
  for (std::size_t i = 0; i < x0.size(); ++i) p.x_t[i] = a * x0[i] + s * p.eps[i];
  return p;
}

Tensor true_score_target(const Tensor& x_t, const Tensor& x0, std::size_t t, const NoiseSchedule& sched) {
  check_step(t, sched);
  require_same_shape(x_t, x0, "true_score_target");
  const double var = 1.0 - sched.alpha_bar[t];
  if (!(var > 0.0)) throw NumericalError("true_score_target: alpha_bar == 1 leaves no noise to score");
  const double a = std::sqrt(sched.alpha_bar[t]);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -(x_t[i] - a * x0[i]) / var;
  return out;
}

}  // namespace emdiff
