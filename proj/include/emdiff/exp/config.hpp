#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emdiff/emloop.hpp"
#include "emdiff/operators.hpp"
#include "emdiff/samplers.hpp"

namespace emdiff::exp {

struct GmmSpec {
  std::vector<std::array<double, 2>> means{{2.0, 0.0}, {-2.0, 0.0}};
  std::vector<double> weights{0.5, 0.5};
  double std = 0.5;

  friend bool operator==(const GmmSpec&, const GmmSpec&) = default;
};

/// Uniform angle, radius uniform in [r - width/2, r + width/2] around a ring picked uniformly.
struct RingsSpec {
  std::vector<double> radii{1.0, 2.5};
  double width = 0.3;

  friend bool operator==(const RingsSpec&, const RingsSpec&) = default;
};

/// Procedural discs and bars on a dark background.
struct ImageSpec {
  std::size_t size = 16;
  std::size_t max_shapes = 2;

  friend bool operator==(const ImageSpec&, const ImageSpec&) = default;
};

struct DatasetSpec {
  std::string kind = "gmm2d";  // gmm2d | rings2d | toy_images
  std::size_t n = 500;           // items that get corrupted
  std::size_t n_pool = 50;       // held-out clean items for initialisation
  std::size_t n_reference = 2000;  // held-out clean items for distribution metrics
  GmmSpec gmm;
  RingsSpec rings;
  ImageSpec images;

  bool is_image() const noexcept { return kind == "toy_images"; }
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct OperatorSpec {
  OperatorKind kind = OperatorKind::awgn;
  double noise_std = 0.2;
  double keep_fraction = 0.4;
  std::size_t kernel_size = 9;
  double kernel_std = 2.0;
  std::uint64_t mask_seed = 0;

  friend bool operator==(const OperatorSpec&, const OperatorSpec&) = default;
};

struct ScheduleSpec {
  std::size_t steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

struct EvalSpec {
  /// Any of measurement, pmc, dps, truth.
  std::vector<std::string> reconstructors{"measurement", "pmc", "dps"};
  std::size_t n_items = 100;
  std::size_t n_samples = 1000;
  std::size_t sw_projections = 64;
  /// Chains for the posterior comparison against the grid oracle (2-D data only).
  std::size_t posterior_chains = 2000;

  friend bool operator==(const EvalSpec&, const EvalSpec&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetSpec dataset;
  OperatorSpec op;
  ScheduleSpec schedule;
  EmConfig em;  // em.model and em.pmc are serialised as top-level "model" and "pmc"
  /// Start value for unobserved pixels in PMC chains (pmc.init_fill); unset means the clean pool's mean.
  std::optional<double> init_fill;
  DpsConfig dps;
  EvalSpec eval;
  /// Report families for eval: psnr, sw, posterior_sw.
  std::vector<std::string> metrics{"psnr", "sw", "posterior_sw"};

  void validate() const;
  Shape item_shape() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Missing keys keep their defaults; unknown keys and ill-typed values raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

NoiseSchedule make_schedule(const ScheduleSpec& spec);

}  // namespace emdiff::exp
