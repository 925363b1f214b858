#include "emdiff/score_field.hpp"

#include <algorithm>
#include <cmath>

#include "emdiff/errors.hpp"

namespace emdiff {

Tensor ScoreField::diffusion_score(const Tensor& x, double alpha_bar) const {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw InvalidArgument("diffusion_score: alpha_bar must lie in (0, 1]");
  const double root = std::sqrt(alpha_bar);
  Tensor scaled = x;
  for (auto& v : scaled.span()) v /= root;
  Tensor s = noised_score(scaled, std::sqrt((1.0 - alpha_bar) / alpha_bar));
  for (auto& v : s.span()) v /= root;
  return s;
}

Tensor ModelScoreField::noised_score(const Tensor& x, double sigma) const {
  if (!(sigma >= 0.0)) throw InvalidArgument("noised_score: sigma must be non-negative");
  const double abar = 1.0 / (1.0 + sigma * sigma);
  const double root = std::sqrt(abar);
  Tensor scaled = x;
  for (auto& v : scaled.span()) v *= root;
  Tensor eps = model_->predict_noise(scaled, sigma * root);
  const double s = std::max(sigma, kMinSigma);
  for (auto& v : eps.span()) v = -v / s;
  return eps;
}

Tensor ModelScoreField::diffusion_score(const Tensor& x, double alpha_bar) const {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw InvalidArgument("diffusion_score: alpha_bar must lie in (0, 1]");
  return model_->score(x, std::sqrt(1.0 - alpha_bar));
}

Tensor tweedie_denoise(const ScoreField& field, const Tensor& x, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("tweedie_denoise: sigma must be non-negative");
  if (sigma == 0.0) return x;
  Tensor s = field.noised_score(x, sigma);
  Tensor out = x;
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s2 * s[i];
  return out;
}

Tensor tweedie_denoise(const ScoreModel& model, const Tensor& x, double sigma) {
  return tweedie_denoise(ModelScoreField(model), x, sigma);
}

Tensor diffusion_posterior_mean(const ScoreField& field, const Tensor& x_t, double alpha_bar) {
  Tensor s = field.diffusion_score(x_t, alpha_bar);
  const double root = std::sqrt(alpha_bar);
  Tensor out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] + (1.0 - alpha_bar) * s[i]) / root;
  return out;
}

}  // namespace emdiff
