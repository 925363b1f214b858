#include "emdiff/emloop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "emdiff/errors.hpp"
#include "emdiff/numkit.hpp"
#include "emdiff/oracles.hpp"
#include "emdiff/score_field.hpp"

namespace emdiff {

namespace {

// Stream tags under the run's Rng.
constexpr std::uint64_t kInitStream = 0x1a1;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kProjStream = 0x5a1c;

double tail_mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t tail = std::max<std::size_t>(1, v.size() / 10);
  return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(tail), v.end(), 0.0) / static_cast<double>(tail);
}

double distribution_metric(const ScoreModel& model, const NoiseSchedule& sched, const EmConfig& cfg,
                           const EmEvaluation& eval, const Rng& rng) {
  if (!eval.reference || cfg.eval_samples == 0) return std::numeric_limits<double>::quiet_NaN();
  Rng sample_rng = rng.derive(kEvalStream);
  Rng proj_rng = rng.derive(kProjStream);
  const Tensor samples = sample_unconditional(ModelScoreField(model), sched, cfg.eval_samples, sample_rng);
  return oracles::sliced_wasserstein(samples, *eval.reference, cfg.sw_projections, proj_rng);
}

template <class Fn>
auto with_iteration(std::size_t k, Fn&& fn) {
  const std::string where = "EM iteration " + std::to_string(k) + ": ";
  try {
    return fn();
  } catch (const DivergenceError& e) {
    throw DivergenceError(where + e.detail(), e.step());
  } catch (const NumericalError& e) {
    throw NumericalError(where + e.what());
  }
}

}  // namespace

void EmConfig::validate() const {
  if (n_iters == 0) throw InvalidArgument("em: n_iters must be positive");
  if (subsample_iters + reset_iters > n_iters) throw InvalidArgument("em: subsample_iters + reset_iters exceeds n_iters");
  if (!(alpha_min > 0.0 && alpha_min <= 1.0)) throw InvalidArgument("em: alpha_min must lie in (0, 1]");
  if (chains_per_y == 0) throw InvalidArgument("em: chains_per_y must be positive");
  if (subsample_iters > 0 && subsample_size == 0) throw InvalidArgument("em: subsample_size must be positive");
  train_init.validate();
  train_finetune.validate();
  train_scratch.validate();
  pmc.validate();
}

double alpha_schedule(std::size_t k, std::size_t n_iters, double alpha_min) {
  if (n_iters == 0 || k < 1 || k > n_iters) throw InvalidArgument("alpha_schedule: k must lie in [1, N]");
  if (!(alpha_min > 0.0 && alpha_min <= 1.0)) throw InvalidArgument("alpha_schedule: alpha_min must lie in (0, 1]");
  if (k == n_iters) return 1.0;
  const double frac = static_cast<double>(n_iters - k) / static_cast<double>(n_iters - 1);
  return std::pow(alpha_min, frac);
}

namespace {

TrainResult pretrain(const Tensor& clean_subset, const NoiseSchedule& sched, const EmConfig& cfg, Rng& rng) {
  if (clean_subset.rows() == 0 || clean_subset.empty()) throw InvalidArgument("initialize: empty clean subset");
  Rng init_rng = rng.derive(kInitStream);
  ScoreModel model = ScoreModel::create(clean_subset.cols(), cfg.model, init_rng);
  return train(std::move(model), clean_subset, sched, cfg.train_init, rng);
}

}  // namespace

ScoreModel initialize(const Tensor& clean_subset, const NoiseSchedule& sched, const EmConfig& cfg, Rng& rng) {
  return pretrain(clean_subset, sched, cfg, rng).model;
}

ScoreModel m_step(const ScoreModel& model, const Tensor& samples, const NoiseSchedule& sched, const TrainConfig& tcfg,
                  bool from_scratch, const ModelConfig& model_cfg, Rng& rng, std::vector<double>* losses) {
  if (samples.rows() == 0 || samples.empty()) throw InvalidArgument("m_step: no samples");
  ScoreModel start = model;
  if (from_scratch) {
    Rng init_rng = rng.derive(kInitStream);
    start = ScoreModel::create(model.data_dim(), model_cfg, init_rng);
  }
  auto result = train(std::move(start), samples, sched, tcfg, rng);
  if (losses) *losses = std::move(result.losses);
  return std::move(result.model);
}

EmResult em_run(std::span<const Measurement> measurements, const Tensor& clean_subset, const NoiseSchedule& sched,
                const EmConfig& cfg, Rng& rng, const EmEvaluation& eval, const EmObserver& observer) {
  cfg.validate();
  if (measurements.empty()) throw InvalidArgument("em_run: no measurements");
  const std::size_t d = measurements.front().op.size();
  for (const auto& m : measurements) {
    if (m.op.size() != d || m.y.size() != d) throw ShapeError("em_run: measurements must share one geometry");
  }
  if (clean_subset.cols() != d) throw ShapeError("em_run: clean subset does not match measurement geometry");
  if (eval.truth && (eval.truth->rows() != measurements.size() || eval.truth->cols() != d)) {
    throw ShapeError("em_run: truth must hold one item per measurement");
  }
  const Rng metric_rng = rng.derive(kEvalStream);

  EmState state;
  {
    Rng init_rng = rng.derive(0);
    auto trained = with_iteration(0, [&] { return pretrain(clean_subset, sched, cfg, init_rng); });
    state.model = std::move(trained.model);
    EmIterationRecord rec;
    rec.dsm_loss = tail_mean(trained.losses);
    rec.psnr_mean = std::numeric_limits<double>::quiet_NaN();
    rec.sw_distance = distribution_metric(state.model, sched, cfg, eval, metric_rng);
    rec.finite = std::isfinite(rec.dsm_loss);
    state.metrics_log.push_back(rec);
    if (observer) observer(state);
  }

  const std::size_t total = measurements.size();
  for (std::size_t k = 1; k <= cfg.n_iters; ++k) {
    Rng iter_rng = rng.derive(k);
    state.k = k;
    state.alpha_k = alpha_schedule(k, cfg.n_iters, cfg.alpha_min);

    std::vector<std::size_t> active(total);
    std::iota(active.begin(), active.end(), std::size_t{0});
    if (k <= cfg.subsample_iters && cfg.subsample_size < total) {
      Rng pick = iter_rng.derive(0);
      for (std::size_t i = 0; i < cfg.subsample_size; ++i) {
        std::swap(active[i], active[i + pick.uniform_index(total - i)]);
      }
      active.resize(cfg.subsample_size);
      std::sort(active.begin(), active.end());
    }
    std::vector<Measurement> batch;
    batch.reserve(active.size());
    for (auto i : active) batch.push_back(measurements[i]);

    PmcConfig pmc = cfg.pmc;
    pmc.alpha = state.alpha_k;
    const auto posterior = with_iteration(k, [&] {
      return posterior_batch(ModelScoreField(state.model), batch, pmc, iter_rng.derive(1), cfg.chains_per_y);
    });
    state.last_samples = stack_rows(posterior).reshaped({active.size() * cfg.chains_per_y, d});
    state.last_active = active;

    EmIterationRecord rec;
    rec.k = k;
    rec.alpha_k = state.alpha_k;
    rec.active_measurements = active.size();
    rec.psnr_mean = std::numeric_limits<double>::quiet_NaN();
    if (eval.truth) {
      double acc = 0.0;
      for (std::size_t i = 0; i < active.size(); ++i) {
        const Tensor truth_item = eval.truth->slice_rows(active[i], active[i] + 1);
        for (std::size_t c = 0; c < cfg.chains_per_y; ++c) {
          acc += oracles::psnr(posterior[i].slice_rows(c, c + 1), truth_item);
        }
      }
      rec.psnr_mean = acc / static_cast<double>(active.size() * cfg.chains_per_y);
    }

    rec.reset = k + cfg.reset_iters > cfg.n_iters;
    std::vector<double> losses;
    Rng train_rng = iter_rng.derive(2);
    state.model = with_iteration(k, [&] {
      return m_step(state.model, state.last_samples, sched, rec.reset ? cfg.train_scratch : cfg.train_finetune, rec.reset,
                    cfg.model, train_rng, &losses);
    });
    rec.dsm_loss = tail_mean(losses);
    rec.sw_distance = with_iteration(k, [&] { return distribution_metric(state.model, sched, cfg, eval, metric_rng); });
    rec.finite = std::isfinite(rec.dsm_loss) && !std::isinf(rec.sw_distance) &&
                 !(eval.truth && std::isnan(rec.psnr_mean));
    state.metrics_log.push_back(rec);
    if (observer) observer(state);
  }
  return {state.model, std::move(state)};
}

}  // namespace emdiff
