#include "emdiff/exp/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "emdiff/errors.hpp"

namespace emdiff::exp {

namespace {

constexpr std::uint64_t kItemsStream = 1;
constexpr std::uint64_t kPoolStream = 2;
constexpr std::uint64_t kReferenceStream = 3;

double quantise(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

oracles::GmmPrior gmm_prior(const GmmSpec& spec) {
  oracles::GmmPrior p;
  p.weights = spec.weights;
  for (const auto& m : spec.means) {
    p.components.push_back(oracles::GaussianPrior::isotropic(Tensor({2}, {m[0], m[1]}), spec.std * spec.std));
  }
  p.validate();
  return p;
}

Tensor toy_image(const ImageSpec& spec, Rng& rng) {
  const std::size_t s = spec.size;
  const double sz = static_cast<double>(s);
  Tensor img({s, s}, 0.0);
  const std::size_t shapes = 1 + rng.uniform_index(spec.max_shapes);
  for (std::size_t k = 0; k < shapes; ++k) {
    const double level = 0.5 + 0.5 * rng.uniform();
    if (rng.uniform() < 0.5) {
      // disc
      const double r = sz * (0.12 + 0.18 * rng.uniform());
      const double cx = r + (sz - 2 * r) * rng.uniform();
      const double cy = r + (sz - 2 * r) * rng.uniform();
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          const double dy = static_cast<double>(i) + 0.5 - cy, dx = static_cast<double>(j) + 0.5 - cx;
          if (dx * dx + dy * dy <= r * r) img.at(i, j) = std::max(img.at(i, j), level);
        }
      }
    } else {
      // axis-aligned bar
      const bool horizontal = rng.uniform() < 0.5;
      const std::size_t thick = 2 + rng.uniform_index(std::max<std::size_t>(1, s / 6));
      const std::size_t len = s / 3 + rng.uniform_index(s - s / 3 + 1);
      const std::size_t a0 = rng.uniform_index(s - thick + 1);
      const std::size_t b0 = rng.uniform_index(s - len + 1);
      for (std::size_t a = a0; a < a0 + thick; ++a) {
        for (std::size_t b = b0; b < b0 + len; ++b) {
          double& px = horizontal ? img.at(a, b) : img.at(b, a);
          px = std::max(px, level);
        }
      }
    }
  }
  for (auto& v : img.span()) v = quantise(v);
  return img;
}

Tensor generate_items(const DatasetSpec& spec, std::size_t n, Rng& rng) {
  if (spec.kind == "gmm2d") return oracles::gmm_sample(gmm_prior(spec.gmm), n, rng);
  if (spec.kind == "rings2d") {
    const auto& rs = spec.rings;
    Tensor out({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      const double r = rs.radii[rng.uniform_index(rs.radii.size())] + rs.width * (rng.uniform() - 0.5);
      const double phi = 2.0 * std::numbers::pi * rng.uniform();
      out.at(i, 0) = r * std::cos(phi);
      out.at(i, 1) = r * std::sin(phi);
    }
    return out;
  }
  if (spec.is_image()) {
    const std::size_t d = spec.images.size * spec.images.size;
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor img = toy_image(spec.images, rng);
      std::copy(img.values().begin(), img.values().end(), out.row(i).begin());
    }
    return out;
  }
  throw ConfigError("config: unknown dataset kind '" + spec.kind + "'");
}

CleanData generate_dataset(const DatasetSpec& spec, const Rng& rng) {
  Rng a = rng.derive(kItemsStream), b = rng.derive(kPoolStream), c = rng.derive(kReferenceStream);
  return {generate_items(spec, spec.n, a), generate_items(spec, spec.n_pool, b),
          generate_items(spec, spec.n_reference, c)};
}

MeasurementOperator build_operator(const OperatorSpec& spec, const Shape& item_shape, std::size_t index) {
  switch (spec.kind) {
    case OperatorKind::awgn:
      return MeasurementOperator::awgn(item_shape, spec.noise_std);
    case OperatorKind::inpaint: {
      Rng mask_rng = Rng(spec.mask_seed).derive(index);
      return MeasurementOperator::inpaint(make_random_mask(item_shape, spec.keep_fraction, mask_rng), spec.noise_std);
    }
    case OperatorKind::blur:
      return MeasurementOperator::blur(item_shape, make_gaussian_kernel(spec.kernel_size, spec.kernel_std), spec.noise_std);
  }
  throw ConfigError("config: unknown operator kind");
}

}  // namespace emdiff::exp
