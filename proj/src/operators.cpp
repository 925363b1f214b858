#include "emdiff/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "emdiff/errors.hpp"
#include "emdiff/kernels.hpp"
#include "emdiff/numkit.hpp"

namespace emdiff {

std::string to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::awgn: return "awgn";
    case OperatorKind::inpaint: return "inpaint";
    case OperatorKind::blur: return "blur";
  }
  return "unknown";
}

OperatorKind operator_kind_from_string(const std::string& name) {
  if (name == "awgn" || name == "identity") return OperatorKind::awgn;
  if (name == "inpaint") return OperatorKind::inpaint;
  if (name == "blur") return OperatorKind::blur;
  throw InvalidArgument("unknown operator kind '" + name + "'");
}

namespace {

void check_noise(double noise_std) {
  if (!(noise_std > 0.0) || !std::isfinite(noise_std)) throw InvalidArgument("operator: noise_std must be positive");
}

void check_size(const MeasurementOperator& op, std::size_t n, const char* what) {
  if (n != op.size()) {
    throw ShapeError(std::string(what) + ": operator geometry " + shape_string(op.geometry()) + " vs " +
                     std::to_string(n) + " values");
  }
}

}  // namespace

MeasurementOperator MeasurementOperator::awgn(Shape geometry, double noise_std) {
  check_noise(noise_std);
  if (shape_size(geometry) == 0) throw ShapeError("operator: empty geometry");
  return MeasurementOperator(OperatorKind::awgn, std::move(geometry), noise_std);
}

MeasurementOperator MeasurementOperator::inpaint(Tensor mask, double noise_std) {
  check_noise(noise_std);
  if (mask.empty()) throw ShapeError("operator: empty mask");
  for (double v : mask.span()) {
    if (v != 0.0 && v != 1.0) throw InvalidArgument("operator: mask entries must be 0 or 1");
  }
  MeasurementOperator op(OperatorKind::inpaint, mask.shape(), noise_std);
  op.mask_ = std::move(mask);
  return op;
}

MeasurementOperator MeasurementOperator::blur(Shape geometry, Tensor kernel, double noise_std) {
  check_noise(noise_std);
  if (geometry.size() != 2) throw ShapeError("blur operator needs a 2-D image geometry");
  if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1)) throw ShapeError("blur kernel must be square");
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) throw InvalidArgument("blur kernel side must be odd");
  double sum = 0.0;
  for (double v : kernel.span()) sum += v;
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("blur kernel must sum to 1");
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      if (std::abs(kernel.at(r, c) - kernel.at(k - 1 - r, k - 1 - c)) > 1e-12) {
        throw InvalidArgument("blur kernel must be point-symmetric so the operator is self-adjoint");
      }
    }
  }
  MeasurementOperator op(OperatorKind::blur, std::move(geometry), noise_std);
  op.kernel_ = std::move(kernel);
  return op;
}

void MeasurementOperator::forward(std::span<const double> in, std::span<double> out) const {
  check_size(*this, in.size(), "operator");
  check_size(*this, out.size(), "operator");
  switch (kind_) {
    case OperatorKind::awgn:
      std::copy(in.begin(), in.end(), out.begin());
      break;
    case OperatorKind::inpaint:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = (*mask_)[i] * in[i];
      break;
    case OperatorKind::blur:
      kernels::conv2d_same(in, kernel_->span(), out, geometry_[0], geometry_[1], kernel_->dim(0));
      break;
  }
}

Tensor apply_linear(const MeasurementOperator& op, const Tensor& x) {
  Tensor out(x.shape());
  op.forward(x.span(), out.span());
  return out;
}

Tensor apply(const MeasurementOperator& op, const Tensor& x, Rng& rng) {
  Tensor y = apply_linear(op, x);
  for (auto& v : y.span()) v += op.noise_std() * rng.normal();
  return y;
}

void likelihood_grad(const MeasurementOperator& op, std::span<const double> x, std::span<const double> y,
                     std::span<double> out) {
  check_size(op, x.size(), "likelihood_grad");
  check_size(op, y.size(), "likelihood_grad");
  check_size(op, out.size(), "likelihood_grad");
  const double inv_var = 1.0 / (op.noise_std() * op.noise_std());
  std::vector<double> resid(x.size());
  op.forward(x, resid);
  for (std::size_t i = 0; i < resid.size(); ++i) resid[i] = (y[i] - resid[i]) * inv_var;
  op.forward(resid, out);  // self-adjoint
}

Tensor likelihood_grad(const MeasurementOperator& op, const Tensor& x, const Tensor& y) {
  if (x.size() != y.size()) throw ShapeError("likelihood_grad: x and y differ in size");
  Tensor out(x.shape());
  likelihood_grad(op, x.span(), y.span(), out.span());
  return out;
}

double log_likelihood(const MeasurementOperator& op, std::span<const double> x, std::span<const double> y) {
  check_size(op, x.size(), "log_likelihood");
  check_size(op, y.size(), "log_likelihood");
  std::vector<double> ax(x.size());
  op.forward(x, ax);
  double s = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) s += (y[i] - ax[i]) * (y[i] - ax[i]);
  return -0.5 * s / (op.noise_std() * op.noise_std());
}

double log_likelihood(const MeasurementOperator& op, const Tensor& x, const Tensor& y) {
  return log_likelihood(op, x.span(), y.span());
}

Tensor make_gaussian_kernel(std::size_t k, double std) {
  if (k % 2 == 0) throw InvalidArgument("gaussian kernel: side must be odd");
  if (!(std > 0.0)) throw InvalidArgument("gaussian kernel: std must be positive");
  Tensor out({k, k});
  const double c = static_cast<double>(k / 2);
  double z = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t col = 0; col < k; ++col) {
      const double dr = static_cast<double>(r) - c;
      const double dc = static_cast<double>(col) - c;
      out.at(r, col) = std::exp(-(dr * dr + dc * dc) / (2.0 * std * std));
      z += out.at(r, col);
    }
  }
  for (auto& v : out.span()) v /= z;
  return out;
}

Tensor make_random_mask(const Shape& shape, double keep_fraction, Rng& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw InvalidArgument("mask: keep_fraction must lie in (0, 1]");
  const std::size_t n = shape_size(shape);
  const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // partial Fisher-Yates: the first `keep` slots are a uniform subset
  for (std::size_t i = 0; i < keep && i + 1 < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(idx[i], idx[j]);
  }
  Tensor mask(shape);
  for (std::size_t i = 0; i < keep; ++i) mask[idx[i]] = 1.0;
  return mask;
}

}  // namespace emdiff
