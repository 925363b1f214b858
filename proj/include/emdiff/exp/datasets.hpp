#pragma once

#include <cstddef>

#include "emdiff/exp/config.hpp"
#include "emdiff/oracles.hpp"
#include "emdiff/rng.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff::exp {

/// The three disjoint clean splits of a dataset. Rows are flattened items.
struct CleanData {
  Tensor items;      // corrupted into measurements
  Tensor pool;       // clean initialisation candidates
  Tensor reference;  // distribution-metric reference
};

/// n items of the configured kind, each a row of shape_size(item_shape) values.
Tensor generate_items(const DatasetSpec& spec, std::size_t n, Rng& rng);
CleanData generate_dataset(const DatasetSpec& spec, const Rng& rng);

/// The gmm2d generator as a mixture prior (isotropic components).
oracles::GmmPrior gmm_prior(const GmmSpec& spec);

/// One procedural image in [0, 1], quantised to multiples of 1/255.
Tensor toy_image(const ImageSpec& spec, Rng& rng);

/// Operator for item `index`; masks are drawn from (mask_seed, index).
MeasurementOperator build_operator(const OperatorSpec& spec, const Shape& item_shape, std::size_t index);

}  // namespace emdiff::exp
