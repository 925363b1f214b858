#include "emdiff/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace emdiff::kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 14;

using V4 = double __attribute__((vector_size(32)));

inline V4 load4(const double* p) {
  V4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, V4 v) { std::memcpy(p, &v, sizeof v); }

// Four rows of x against columns [j0, j0 + 4 * NV) of w, NV in {1, 3}.
template <std::size_t NV>
[[gnu::always_inline]] inline void affine_tile(const double* x, const double* w, const double* bias, double* y,
                                               std::size_t k, std::size_t m, std::size_t j0) {
  V4 acc[4][NV];
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t v = 0; v < NV; ++v) acc[r][v] = bias ? load4(bias + j0 + 4 * v) : V4{};
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* wr = w + kk * m + j0;
    if constexpr (NV == 3) {
      const V4 w0 = load4(wr), w1 = load4(wr + 4), w2 = load4(wr + 8);
      for (std::size_t r = 0; r < 4; ++r) {
        const double a = x[r * k + kk];
        acc[r][0] += a * w0;
        acc[r][1] += a * w1;
        acc[r][2] += a * w2;
      }
    } else {
      const V4 w0 = load4(wr);
      for (std::size_t r = 0; r < 4; ++r) acc[r][0] += x[r * k + kk] * w0;
    }
  }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t v = 0; v < NV; ++v) store4(y + r * m + j0 + 4 * v, acc[r][v]);
}

}  // namespace

int max_threads() noexcept {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
            std::span<double> y, std::size_t n, std::size_t k, std::size_t m) {
  const double* xp = x.data();
  const double* wp = w.data();
  const double* bp = bias.empty() ? nullptr : bias.data();
  double* yp = y.data();
  // 4-row tiles of 12 (then 4) columns accumulate in registers across the
  // whole k loop. Each output still starts from its bias and adds x * w in
  // kk order, so the tiling does not change any bits.
  constexpr std::size_t R = 4;
  const std::size_t blocks = (n + R - 1) / R;
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t bb = 0; bb < static_cast<std::ptrdiff_t>(blocks); ++bb) {
    const std::size_t i0 = static_cast<std::size_t>(bb) * R;
    const std::size_t rows = std::min(R, n - i0);
    std::size_t j0 = 0;
    if (rows == R) {
      for (; j0 + 12 <= m; j0 += 12) affine_tile<3>(xp + i0 * k, wp, bp, yp + i0 * m, k, m, j0);
      for (; j0 + 4 <= m; j0 += 4) affine_tile<1>(xp + i0 * k, wp, bp, yp + i0 * m, k, m, j0);
    }
    // ragged edges
    for (std::size_t r = 0; r < rows; ++r) {
      double* out = yp + (i0 + r) * m;
      for (std::size_t j = j0; j < m; ++j) out[j] = bp ? bp[j] : 0.0;
      const double* xi = xp + (i0 + r) * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double a = xi[kk];
        const double* wr = wp + kk * m;
        for (std::size_t j = j0; j < m; ++j) out[j] += a * wr[j];
      }
    }
  }
}

// Both products below run through the tiled affine kernel on a transposed
// operand. affine sums its inner dimension in order from zero, exactly like
// the serial loops, so the results match them bit for bit.

void gemm_tn(std::span<const double> x, std::span<const double> d, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
  std::vector<double> xt(k * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) xt[kk * n + i] = x[i * k + kk];
  affine(xt, d, {}, out, k, n, m);
}

void gemm_nt(std::span<const double> d, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
  std::vector<double> wt(m * k);
  for (std::size_t kk = 0; kk < k; ++kk)
    for (std::size_t j = 0; j < m; ++j) wt[j * k + kk] = w[kk * m + j];
  affine(d, wt, {}, out, n, m, k);
}

void conv2d_same(std::span<const double> image, std::span<const double> kernel,
                 std::span<double> out, std::size_t h, std::size_t w, std::size_t ks) {
  const auto half = static_cast<std::ptrdiff_t>(ks / 2);
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
#pragma omp parallel for schedule(static) if (h * w * ks * ks > kParallelWork)
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      double s = 0.0;
      const std::ptrdiff_t a0 = std::max<std::ptrdiff_t>(0, half - r);
      const std::ptrdiff_t a1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ks), H - r + half);
      const std::ptrdiff_t b0 = std::max<std::ptrdiff_t>(0, half - c);
      const std::ptrdiff_t b1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ks), W - c + half);
      for (std::ptrdiff_t a = a0; a < a1; ++a) {
        const double* krow = kernel.data() + a * static_cast<std::ptrdiff_t>(ks);
        const double* irow = image.data() + (r + a - half) * W + (c - half);
        for (std::ptrdiff_t b = b0; b < b1; ++b) s += krow[b] * irow[b];
      }
      out[static_cast<std::size_t>(r * W + c)] = s;
    }
  }
}

namespace reference {

void affine(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
            std::span<double> y, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = bias.empty() ? 0.0 : bias[j];
      for (std::size_t kk = 0; kk < k; ++kk) s += x[i * k + kk] * w[kk * m + j];
      y[i * m + j] = s;
    }
  }
}

void gemm_tn(std::span<const double> x, std::span<const double> d, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x[i * k + kk] * d[i * m + j];
      out[kk * m + j] = s;
    }
  }
}

void gemm_nt(std::span<const double> d, std::span<const double> w, std::span<double> out,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += d[i * m + j] * w[kk * m + j];
      out[i * k + kk] = s;
    }
  }
}

void conv2d_same(std::span<const double> image, std::span<const double> kernel,
                 std::span<double> out, std::size_t h, std::size_t w, std::size_t ks) {
  const auto half = static_cast<long>(ks / 2);
  for (long r = 0; r < static_cast<long>(h); ++r) {
    for (long c = 0; c < static_cast<long>(w); ++c) {
      double s = 0.0;
      for (long a = 0; a < static_cast<long>(ks); ++a) {
        for (long b = 0; b < static_cast<long>(ks); ++b) {
          const long rr = r + a - half;
          const long cc = c + b - half;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
          s += kernel[static_cast<std::size_t>(a * static_cast<long>(ks) + b)] *
               image[static_cast<std::size_t>(rr * static_cast<long>(w) + cc)];
        }
      }
      out[static_cast<std::size_t>(r * static_cast<long>(w) + c)] = s;
    }
  }
}

}  // namespace reference

}  // namespace emdiff::kernels
