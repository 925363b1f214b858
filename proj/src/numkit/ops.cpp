#include <cmath>

#include "emdiff/kernels.hpp"
#include "emdiff/numkit.hpp"

namespace emdiff {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tensor gaussian_sample(Rng& rng, const Shape& shape, double mean, double std) {
  if (!(std >= 0.0)) throw InvalidArgument("gaussian_sample: std must be non-negative");
  Tensor out(shape, mean);
  if (std == 0.0) return out;
  for (auto& v : out.span()) v = mean + std * rng.normal();
  return out;
}

Tensor conv2d_same(const Tensor& image, const Tensor& kernel) {
  if (image.rank() != 2 || kernel.rank() != 2) throw ShapeError("conv2d_same: expects rank-2 image and kernel");
  const auto ks = kernel.dim(0);
  if (kernel.dim(1) != ks) throw ShapeError("conv2d_same: kernel must be square");
  if (ks % 2 == 0) throw InvalidArgument("conv2d_same: kernel side must be odd");
  if (image.dim(0) == 0 || image.dim(1) == 0) throw ShapeError("conv2d_same: empty image");
  Tensor out(image.shape());
  kernels::conv2d_same(image.span(), kernel.span(), out.span(), image.dim(0), image.dim(1), ks);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (auto& v : out.span()) v *= s;
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) throw ShapeError("mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double squared_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.span()) s += v * v;
  return s;
}

void axpy(double s, const Tensor& b, Tensor& a) {
  require_same_shape(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

}  // namespace emdiff
