#pragma once

#include <cstddef>
#include <span>

// Dense inner loops shared by the score network, the operators and the
// samplers. The top-level functions are OpenMP-parallel; `reference` holds
// plain serial loops that the tests and the benchmark compare against.
//
// Every output element is accumulated by exactly one thread in a fixed
// order, so the parallel kernels give the same bits for any thread count and
// a row's result never depends on which other rows share the batch.

namespace emdiff::kernels {

/// y[n x m] = x[n x k] * w[k x m] + bias[m]   (bias may be empty)
void affine(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
            std::span<double> y, std::size_t n, std::size_t k, std::size_t m);

/// out[k x m] = x[n x k]^T * d[n x m]
void gemm_tn(std::span<const double> x, std::span<const double> d, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);

/// out[n x k] = d[n x m] * w[k x m]^T
void gemm_nt(std::span<const double> d, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);

/// Zero-padded 2-D correlation of an [h x w] image with an odd [ks x ks] kernel.
void conv2d_same(std::span<const double> image, std::span<const double> kernel,
                 std::span<double> out, std::size_t h, std::size_t w, std::size_t ks);

/// Applies fn(i) for i in [0, n), in parallel when n is large enough to pay off.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#pragma omp parallel for schedule(static) if (n > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    fn(static_cast<std::size_t>(i));
  }
}

int max_threads() noexcept;

namespace reference {

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
            std::span<double> y, std::size_t n, std::size_t k, std::size_t m);
void gemm_tn(std::span<const double> x, std::span<const double> d, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_nt(std::span<const double> d, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m);
void conv2d_same(std::span<const double> image, std::span<const double> kernel,
                 std::span<double> out, std::size_t h, std::size_t w, std::size_t ks);

}  // namespace reference

}  // namespace emdiff::kernels
