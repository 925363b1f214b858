#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "emdiff/operators.hpp"
#include "emdiff/rng.hpp"
#include "emdiff/schedule.hpp"
#include "emdiff/score_field.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

/// Geometric ladder of denoising strengths walked by one PMC chain.
struct SigmaLadder {
  double sigma_max = 0.5;
  double sigma_min = 0.01;
  std::size_t levels = 10;
  std::size_t steps_per_level = 30;

  /// A single level uses sigma_min.
  std::vector<double> sigmas() const;
  std::size_t total_steps() const noexcept { return levels * steps_per_level; }

  friend bool operator==(const SigmaLadder&, const SigmaLadder&) = default;
};

struct PmcConfig {
  /// Data-fidelity step size.
  double gamma = 1e-4;
  /// Trust factor on the learned score.
  double alpha = 1.0;
  /// Brownian temperature; the increment is N(0, 2 tau I). Unset means tau = gamma.
  std::optional<double> tau;
  SigmaLadder ladder;
  /// Value given to unobserved pixels when a masked measurement seeds a chain.
  double init_fill = 0.0;

  double effective_tau() const noexcept { return tau.value_or(gamma); }
  std::size_t n_steps() const noexcept { return ladder.total_steps(); }
  void validate() const;

  friend bool operator==(const PmcConfig&, const PmcConfig&) = default;
};

struct DpsConfig {
  /// Guidance scale on grad ||y - A x0_hat||^2.
  double zeta = 1.0;

  void validate() const;
  friend bool operator==(const DpsConfig&, const DpsConfig&) = default;
};

/// One corrupted observation. `id` keys its random streams, so results do not
/// depend on where the measurement sits in a batch.
struct Measurement {
  std::uint64_t id = 0;
  Tensor y;
  MeasurementOperator op;
};

struct PmcTraceRow {
  std::size_t step;
  double log_likelihood;
  double state_norm;
};

/// Ancestral reverse diffusion from N(0, I) down to t = 0. Returns [n x dim].
Tensor sample_unconditional(const ScoreField& prior, const NoiseSchedule& sched, std::size_t n, Rng& rng);

/// Reverse diffusion with the guidance step -zeta * grad ||y - A x0_hat(x_t)||^2. The
/// dependence of x0_hat on x_t is taken as the identity map. Returns [n x dim].
Tensor sample_dps(const ScoreField& prior, const NoiseSchedule& sched, const MeasurementOperator& op,
                  const Tensor& y, const DpsConfig& cfg, Rng& rng, std::size_t n = 1);

/// A^T y for identity and blur; observed pixels plus `fill` elsewhere for masks.
Tensor pmc_initial_state(const MeasurementOperator& op, const Tensor& y, double fill);

/// Plug-and-play Monte Carlo chain:
///   z = x + gamma * grad log p(y | x)
///   x = z + alpha * sigma^2 * score_sigma(z) + N(0, 2 tau I)
/// with sigma walking the ladder. Returns the final state in y's shape.
Tensor sample_pmc(const ScoreField& prior, const MeasurementOperator& op, const Tensor& y, const PmcConfig& cfg,
                  Rng& rng, const std::optional<Tensor>& x_init = std::nullopt,
                  std::vector<PmcTraceRow>* trace = nullptr);

/// Stream used for chain `chain` of measurement `id`.
Rng chain_rng(const Rng& base, std::uint64_t id, std::size_t chain);

/// Independent PMC chains per measurement, evaluated together so the score
/// network sees one batch per step. Entry i is [chains_per_y x dim] for
/// measurements[i], identical to running each chain alone through sample_pmc.
std::vector<Tensor> posterior_batch(const ScoreField& prior, std::span<const Measurement> measurements,
                                    const PmcConfig& cfg, const Rng& base, std::size_t chains_per_y = 1);

}  // namespace emdiff
