#pragma once

#include <cstddef>
#include <array>
#include <functional>
#include <span>
#include <vector>

#include "emdiff/operators.hpp"
#include "emdiff/rng.hpp"
#include "emdiff/score_field.hpp"
#include "emdiff/tensor.hpp"

// Closed-form and brute-force ground truths plus the evaluation metrics.
namespace emdiff::oracles {

struct GaussianPrior {
  Tensor mean;  // [d]
  Tensor cov;   // [d x d], symmetric positive definite

  std::size_t dim() const noexcept { return mean.size(); }
  void validate() const;
  static GaussianPrior isotropic(Tensor mean, double variance);
};

struct GmmPrior {
  std::vector<double> weights;
  std::vector<GaussianPrior> components;

  std::size_t dim() const;
  void validate() const;
};

/// Conjugate posterior for y = A x + n, n ~ N(0, noise_std^2 I); A is [m x d].
GaussianPrior gaussian_posterior(const GaussianPrior& prior, const Tensor& A, const Tensor& y, double noise_std);

/// grad log (p * N(0, sigma^2 I)) for a mixture p, rows of x are points.
Tensor gmm_score_sigma(const GmmPrior& prior, const Tensor& x, double sigma);
double gmm_log_density(const GmmPrior& prior, std::span<const double> x, double sigma);
Tensor gmm_sample(const GmmPrior& prior, std::size_t n, Rng& rng);

/// The analytic mixture score as a sampler prior.
class GmmScoreField final : public ScoreField {
 public:
  explicit GmmScoreField(GmmPrior prior);
  std::size_t dim() const override { return prior_.dim(); }
  Tensor noised_score(const Tensor& x, double sigma) const override;
  const GmmPrior& prior() const noexcept { return prior_; }

 private:
  GmmPrior prior_;
};

struct GridSpec {
  double x_min = -6.0, x_max = 6.0;
  double y_min = -6.0, y_max = 6.0;
  std::size_t nx = 241, ny = 241;

  double cell_x() const { return (x_max - x_min) / static_cast<double>(nx); }
  double cell_y() const { return (y_max - y_min) / static_cast<double>(ny); }
};

/// Normalised posterior mass on the cell centres of a 2-D lattice.
class GridPosterior {
 public:
  GridPosterior(GridSpec spec, std::vector<double> probs);

  const GridSpec& spec() const noexcept { return spec_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  std::array<double, 2> cell_centre(std::size_t index) const;

  Tensor mean() const;        // [2]
  Tensor covariance() const;  // [2 x 2]
  /// Draws cells by mass, then a uniform position inside the cell.
  Tensor sample(std::size_t n, Rng& rng) const;

 private:
  GridSpec spec_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

using LogDensity2d = std::function<double(double, double)>;

/// prior(x) * p(y | x) on the lattice, accumulated in the log domain.
GridPosterior grid_posterior(const LogDensity2d& log_prior, const MeasurementOperator& op, const Tensor& y,
                             const GridSpec& grid);

/// 10 log10(peak^2 / mse); +infinity when the inputs are identical.
double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0);

/// 2-Wasserstein distance between two 1-D empirical distributions.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

/// Mean 1-D 2-Wasserstein distance over n_proj random unit directions. Rows are points.
double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t n_proj, Rng& rng);

}  // namespace emdiff::oracles
