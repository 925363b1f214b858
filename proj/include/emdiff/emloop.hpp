#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "emdiff/rng.hpp"
#include "emdiff/samplers.hpp"
#include "emdiff/schedule.hpp"
#include "emdiff/scorenet.hpp"
#include "emdiff/tensor.hpp"

namespace emdiff {

struct EmConfig {
  std::size_t n_iters = 9;
  std::size_t n_init_clean = 50;
  std::size_t subsample_size = 500;
  /// Leading iterations that work on a random subsample of the measurements.
  std::size_t subsample_iters = 6;
  /// Trailing iterations that retrain the model from a fresh initialisation.
  std::size_t reset_iters = 3;
  double alpha_min = 1e-3;
  std::size_t chains_per_y = 1;
  ModelConfig model;
  TrainConfig train_init;
  TrainConfig train_finetune;
  TrainConfig train_scratch;
  PmcConfig pmc;
  /// Unconditional samples drawn per iteration for the distribution metric; 0 disables it.
  std::size_t eval_samples = 1000;
  std::size_t sw_projections = 64;

  void validate() const;
  friend bool operator==(const EmConfig&, const EmConfig&) = default;
};

/// Geometric trust ramp alpha_min^((N - k) / (N - 1)), k in [1, N]; ends at exactly 1.
double alpha_schedule(std::size_t k, std::size_t n_iters, double alpha_min);

struct EmIterationRecord {
  std::size_t k = 0;  // 0 is the pretrained model
  double alpha_k = 0.0;
  double dsm_loss = 0.0;
  double psnr_mean = 0.0;  // NaN without ground truth
  double sw_distance = 0.0;  // NaN without a reference set
  std::size_t active_measurements = 0;
  bool reset = false;
  bool finite = true;
};

struct EmState {
  std::size_t k = 0;
  double alpha_k = 0.0;
  ScoreModel model;
  Tensor last_samples;
  /// Measurement positions behind last_samples; each contributes chains_per_y consecutive rows.
  std::vector<std::size_t> last_active;
  std::vector<EmIterationRecord> metrics_log;
};

struct EmResult {
  ScoreModel model;
  EmState state;
};

/// Optional evaluation inputs: ground-truth items aligned with the
/// measurements and a clean reference set for the distribution metric.
struct EmEvaluation {
  std::optional<Tensor> truth;      // [M x d]
  std::optional<Tensor> reference;  // [R x d]
};

/// Fresh model trained on the clean subset with cfg.train_init.
ScoreModel initialize(const Tensor& clean_subset, const NoiseSchedule& sched, const EmConfig& cfg, Rng& rng);

/// Refit on posterior samples: continue from `model`, or start over from a new random initialisation.
ScoreModel m_step(const ScoreModel& model, const Tensor& samples, const NoiseSchedule& sched, const TrainConfig& tcfg,
                  bool from_scratch, const ModelConfig& model_cfg, Rng& rng, std::vector<double>* losses = nullptr);

using EmObserver = std::function<void(const EmState&)>;

EmResult em_run(std::span<const Measurement> measurements, const Tensor& clean_subset, const NoiseSchedule& sched,
                const EmConfig& cfg, Rng& rng, const EmEvaluation& eval = {}, const EmObserver& observer = {});

}  // namespace emdiff
