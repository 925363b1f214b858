#pragma once

#include <cstddef>
#include <vector>

#include "emdiff/rng.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

/// Discrete variance-preserving schedule: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  /// Conditioning noise strength sqrt(1 - alpha_bar[t]).
  std::vector<double> sigma;

  std::size_t steps() const noexcept { return beta.size(); }
};

NoiseSchedule make_linear_schedule(std::size_t steps, double beta_min, double beta_max);

struct Perturbed {
  Tensor x_t;
  Tensor eps;
};

/// Forward-noises x0 to step t. Any shape; eps has the same shape.
Perturbed perturb(const Tensor& x0, std::size_t t, Rng& rng, const NoiseSchedule& sched);

/// Score of the Gaussian perturbation kernel p(x_t | x0).
Tensor true_score_target(const Tensor& x_t, const Tensor& x0, std::size_t t, const NoiseSchedule& sched);

}  // namespace emdiff
