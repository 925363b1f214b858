#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "emdiff/rng.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

enum class OperatorKind { awgn, inpaint, blur };

std::string to_string(OperatorKind kind);
OperatorKind operator_kind_from_string(const std::string& name);

/// Noise floor applied to masking so its likelihood gradient stays finite.
inline constexpr double kInpaintNoiseFloor = 0.01;

/// Linear forward model y = A x + n with n ~ N(0, noise_std^2 I). A is the
/// identity, a binary mask, or a symmetric zero-padded blur, so A = A^T in
/// every case.
class MeasurementOperator {
 public:
  static MeasurementOperator awgn(Shape geometry, double noise_std);
  static MeasurementOperator inpaint(Tensor mask, double noise_std = kInpaintNoiseFloor);
  static MeasurementOperator blur(Shape geometry, Tensor kernel, double noise_std);

  OperatorKind kind() const noexcept { return kind_; }
  double noise_std() const noexcept { return noise_std_; }
  const Shape& geometry() const noexcept { return geometry_; }
  std::size_t size() const noexcept { return shape_size(geometry_); }
  const std::optional<Tensor>& mask() const noexcept { return mask_; }
  const std::optional<Tensor>& kernel() const noexcept { return kernel_; }

  /// out = A in, over flat item buffers of length size().
  void forward(std::span<const double> in, std::span<double> out) const;

  friend bool operator==(const MeasurementOperator&, const MeasurementOperator&) = default;

 private:
  MeasurementOperator(OperatorKind kind, Shape geometry, double noise_std)
      : kind_(kind), geometry_(std::move(geometry)), noise_std_(noise_std) {}

  OperatorKind kind_;
  Shape geometry_;
  double noise_std_;
  std::optional<Tensor> mask_;
  std::optional<Tensor> kernel_;
};

/// y = A x + n. x may be any shape holding exactly op.size() values; y takes x's shape.
Tensor apply(const MeasurementOperator& op, const Tensor& x, Rng& rng);

/// A x without noise.
Tensor apply_linear(const MeasurementOperator& op, const Tensor& x);

/// grad_x log p(y | x) = A^T (y - A x) / noise_std^2.
Tensor likelihood_grad(const MeasurementOperator& op, const Tensor& x, const Tensor& y);
void likelihood_grad(const MeasurementOperator& op, std::span<const double> x, std::span<const double> y,
                     std::span<double> out);

/// log p(y | x) up to the normalising constant: -||y - A x||^2 / (2 noise_std^2).
double log_likelihood(const MeasurementOperator& op, const Tensor& x, const Tensor& y);
double log_likelihood(const MeasurementOperator& op, std::span<const double> x, std::span<const double> y);

/// Normalised isotropic Gaussian on a k x k grid centred on the middle cell.
Tensor make_gaussian_kernel(std::size_t k, double std);

/// Exactly round(keep_fraction * count) ones, placed uniformly at random.
Tensor make_random_mask(const Shape& shape, double keep_fraction, Rng& rng);

}  // namespace emdiff
