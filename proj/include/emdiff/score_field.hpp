#pragma once

#include <functional>

#include "emdiff/scorenet.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

/// Source of prior scores for the samplers: either a trained network or an
/// analytic density standing in for one.
///
/// Two views of the same prior p are exposed. The noised view is the score of
/// p convolved with N(0, sigma^2 I), the quantity in Tweedie's formula. The
/// diffusion view is the score of the variance-preserving marginal
/// sqrt(abar) x0 + sqrt(1 - abar) eps. They are related exactly by
///   diffusion(x, abar) = noised(x / sqrt(abar), sqrt((1 - abar) / abar)) / sqrt(abar).
class ScoreField {
 public:
  virtual ~ScoreField() = default;

  virtual std::size_t dim() const = 0;
  /// Rows of x are points.
  virtual Tensor noised_score(const Tensor& x, double sigma) const = 0;
  virtual Tensor diffusion_score(const Tensor& x, double alpha_bar) const;
};

/// Adapts a ScoreModel. The network is trained on diffusion marginals, so the
/// noised view is recovered through the rescaling above:
///   noised(x, sigma) = -eps(sqrt(abar) x, sigma / sqrt(1 + sigma^2)) / sigma,  abar = 1 / (1 + sigma^2).
class ModelScoreField final : public ScoreField {
 public:
  explicit ModelScoreField(const ScoreModel& model) : model_(&model) {}

  std::size_t dim() const override { return model_->data_dim(); }
  Tensor noised_score(const Tensor& x, double sigma) const override;
  Tensor diffusion_score(const Tensor& x, double alpha_bar) const override;

 private:
  const ScoreModel* model_;
};

/// Wraps an arbitrary callable as the noised view (tests inject analytic scores this way).
class FunctionScoreField final : public ScoreField {
 public:
  using Fn = std::function<Tensor(const Tensor&, double)>;
  FunctionScoreField(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

  std::size_t dim() const override { return dim_; }
  Tensor noised_score(const Tensor& x, double sigma) const override { return fn_(x, sigma); }

 private:
  std::size_t dim_;
  Fn fn_;
};

/// MMSE denoiser D_sigma(x) = x + sigma^2 * noised_score(x, sigma).
Tensor tweedie_denoise(const ScoreField& field, const Tensor& x, double sigma);
Tensor tweedie_denoise(const ScoreModel& model, const Tensor& x, double sigma);

/// Posterior mean E[x0 | x_t] under the diffusion marginal: (x + (1 - abar) s) / sqrt(abar).
Tensor diffusion_posterior_mean(const ScoreField& field, const Tensor& x_t, double alpha_bar);

}  // namespace emdiff
