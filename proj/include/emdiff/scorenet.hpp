#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "emdiff/rng.hpp"
#include "emdiff/schedule.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

struct ModelConfig {
  std::vector<std::size_t> hidden{128, 128};
  std::size_t embed_dim = 16;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fully-connected noise predictor eps(x, sigma) on concat(x, embed(sigma)),
/// SiLU hidden activations, linear output. The score it represents is
/// -eps / sigma for the diffusion marginal at noise strength sigma.
///
/// Parameters are stored as [W0, b0, W1, b1, ...] with W_l of shape
/// [in_l x out_l] so a batch forward pass is X * W + b.
class ScoreModel {
 public:
  ScoreModel() = default;
  /// Builds a model from explicit layer widths and parameters (checkpoint path).
  ScoreModel(std::vector<std::size_t> layer_dims, std::vector<Tensor> params);

  /// He-initialised hidden layers, zero output layer, so a fresh model is the N(0, I) prior.
  static ScoreModel create(std::size_t data_dim, const ModelConfig& cfg, Rng& rng);

  std::size_t data_dim() const noexcept { return dims_.empty() ? 0 : dims_.back(); }
  std::size_t embed_dim() const noexcept { return dims_.empty() ? 0 : dims_.front() - dims_.back(); }
  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  std::size_t layer_count() const noexcept { return dims_.empty() ? 0 : dims_.size() - 1; }

  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::vector<Tensor>& params() noexcept { return params_; }
  std::size_t parameter_count() const noexcept;
  bool params_finite() const noexcept;

  std::vector<double> embedding(double sigma) const;

  /// Noise prediction for x [n x d]. `sigmas` holds one value (shared) or one per row.
  Tensor predict_noise(const Tensor& x, std::span<const double> sigmas) const;
  Tensor predict_noise(const Tensor& x, double sigma) const { return predict_noise(x, std::span(&sigma, 1)); }

  /// Diffusion-marginal score -eps(x, sigma) / sigma.
  Tensor score(const Tensor& x, double sigma) const;

  friend bool operator==(const ScoreModel&, const ScoreModel&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<Tensor> params_;
};

/// Noise levels below this are clamped before embedding and division.
inline constexpr double kMinSigma = 1e-4;

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 128;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  double lr_final_frac = 0.05;  // cosine decay from lr to lr * lr_final_frac

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // same layout as ScoreModel::params()
};

/// Denoising score matching with weight (1 - abar_t), i.e. mean over the batch
/// of ||eps_hat(x_t, sigma_t) - eps||^2, for explicitly given steps and noise.
LossAndGrad dsm_loss_and_grad_at(const ScoreModel& model, const Tensor& x0, std::span<const std::size_t> steps,
                                 const Tensor& eps, const NoiseSchedule& sched);

/// Draws t uniformly per row and eps ~ N(0, I), then evaluates the loss and its gradient.
LossAndGrad dsm_loss_and_grad(const ScoreModel& model, const Tensor& x0, const NoiseSchedule& sched, Rng& rng);

struct TrainResult {
  ScoreModel model;
  std::vector<double> losses;
};

/// Adam on mini-batches drawn with replacement from `data` [n x d].
TrainResult train(ScoreModel model, const Tensor& data, const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng);

}  // namespace emdiff
