#pragma once

#include "emdiff/errors.hpp"
#include "emdiff/rng.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

/// I.i.d. N(mean, std^2) draws; std == 0 yields a constant tensor.
Tensor gaussian_sample(Rng& rng, const Shape& shape, double mean, double std);

/// Same-size correlation with zero padding. `kernel` must be square with odd side.
Tensor conv2d_same(const Tensor& image, const Tensor& kernel);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);

/// a += s * b
void axpy(double s, const Tensor& b, Tensor& a);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace emdiff
