#include "emdiff/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emdiff/errors.hpp"
#include "emdiff/kernels.hpp"
#include "emdiff/numkit.hpp"

namespace emdiff {

std::vector<double> SigmaLadder::sigmas() const {
  if (levels == 1) return {sigma_min};
  std::vector<double> out(levels);
  const double ratio = sigma_min / sigma_max;
  for (std::size_t i = 0; i < levels; ++i) {
    out[i] = sigma_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(levels - 1));
  }
  return out;
}

void PmcConfig::validate() const {
  if (!(gamma >= 0.0)) throw InvalidArgument("pmc: gamma must be non-negative");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("pmc: alpha must lie in (0, 1]");
  if (!(effective_tau() >= 0.0)) throw InvalidArgument("pmc: tau must be non-negative");
  if (!(ladder.sigma_min > 0.0 && ladder.sigma_max >= ladder.sigma_min)) {
    throw InvalidArgument("pmc: need sigma_max >= sigma_min > 0");
  }
  if (ladder.levels == 0 || ladder.steps_per_level == 0) throw InvalidArgument("pmc: empty sigma ladder");
}

void DpsConfig::validate() const {
  if (!(zeta >= 0.0)) throw InvalidArgument("dps: zeta must be non-negative");
}

namespace {

void check_prior(const ScoreField& prior, std::size_t d) {
  if (prior.dim() != d) {
    throw ShapeError("sampler: prior dimension " + std::to_string(prior.dim()) + " vs item size " + std::to_string(d));
  }
}

void check_finite(const Tensor& x, std::size_t step, const char* what) {
  if (!x.all_finite()) throw DivergenceError(std::string(what) + " state became non-finite", step);
}

// One reverse ancestral step shared by the unconditional and DPS samplers.
void ancestral_step(Tensor& x, const Tensor& score, double beta) {
  const double inv = 1.0 / std::sqrt(1.0 - beta);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] + beta * score[i]) * inv;
}

void add_noise(Tensor& x, double std, Rng& rng) {
  for (auto& v : x.span()) v += std * rng.normal();
}

struct Chain {
  const MeasurementOperator* op;
  const Tensor* y;
  Rng rng;
};

// Runs all chains in lock-step; x holds one chain per row.
void run_pmc(const ScoreField& prior, std::vector<Chain>& chains, Tensor& x, const PmcConfig& cfg,
             std::vector<PmcTraceRow>* trace) {
  cfg.validate();
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  check_prior(prior, d);
  const double noise = std::sqrt(2.0 * cfg.effective_tau());
  Tensor z({n, d});
  std::size_t step = 0;
  for (double sigma : cfg.ladder.sigmas()) {
    const double weight = cfg.alpha * sigma * sigma;
    for (std::size_t k = 0; k < cfg.ladder.steps_per_level; ++k, ++step) {
      std::vector<unsigned char> bad(n, 0);
      kernels::parallel_for(n, [&](std::size_t c) {
        auto zr = z.row(c);
        likelihood_grad(*chains[c].op, x.row(c), chains[c].y->span(), zr);
        const auto xr = x.row(c);
        for (std::size_t j = 0; j < d; ++j) {
          if (!std::isfinite(zr[j])) bad[c] = 1;
          zr[j] = xr[j] + cfg.gamma * zr[j];
        }
      });
      if (std::find(bad.begin(), bad.end(), 1) != bad.end()) throw NumericalError("pmc: likelihood gradient is not finite at step " + std::to_string(step));
      const Tensor s = prior.noised_score(z, sigma);
      kernels::parallel_for(n, [&](std::size_t c) {
        auto xr = x.row(c);
        const auto zr = z.row(c);
        const auto sr = s.row(c);
        for (std::size_t j = 0; j < d; ++j) xr[j] = zr[j] + weight * sr[j];
        if (noise > 0.0) {
          for (std::size_t j = 0; j < d; ++j) xr[j] += noise * chains[c].rng.normal();
        }
      });
      check_finite(x, step, "pmc");
      if (trace) {
        const auto xr = x.row(0);
        double norm2 = 0.0;
        for (double v : xr) norm2 += v * v;
        trace->push_back({step, log_likelihood(*chains[0].op, xr, chains[0].y->span()), std::sqrt(norm2)});
      }
    }
  }
}

}  // namespace

Tensor sample_unconditional(const ScoreField& prior, const NoiseSchedule& sched, std::size_t n, Rng& rng) {
  const std::size_t d = prior.dim();
  Tensor x = gaussian_sample(rng, {n, d}, 0.0, 1.0);
  if (n == 0) return x;
  for (std::size_t t = sched.steps(); t-- > 0;) {
    const Tensor s = prior.diffusion_score(x, sched.alpha_bar[t]);
    ancestral_step(x, s, sched.beta[t]);
    if (t > 0) add_noise(x, std::sqrt(sched.beta[t]), rng);
    check_finite(x, sched.steps() - 1 - t, "unconditional sampler");
  }
  return x;
}

Tensor sample_dps(const ScoreField& prior, const NoiseSchedule& sched, const MeasurementOperator& op,
                  const Tensor& y, const DpsConfig& cfg, Rng& rng, std::size_t n) {
  cfg.validate();
  const std::size_t d = prior.dim();
  if (op.size() != d || y.size() != d) throw ShapeError("dps: measurement geometry does not match the prior");
  Tensor x = gaussian_sample(rng, {n, d}, 0.0, 1.0);
  if (n == 0) return x;
  Tensor guide({n, d});
  std::vector<double> ax(d);
  for (std::size_t t = sched.steps(); t-- > 0;) {
    const double abar = sched.alpha_bar[t];
    const Tensor s = prior.diffusion_score(x, abar);
    // 2 A^T (A x0_hat - y), with x0_hat the Tweedie estimate from this step's score
    const double root = std::sqrt(abar);
    for (std::size_t i = 0; i < n; ++i) {
      auto g = guide.row(i);
      const auto xr = x.row(i);
      const auto sr = s.row(i);
      for (std::size_t j = 0; j < d; ++j) g[j] = (xr[j] + (1.0 - abar) * sr[j]) / root;
      op.forward(g, ax);
      for (std::size_t j = 0; j < d; ++j) ax[j] = 2.0 * (ax[j] - y[j]);
      op.forward(ax, g);
    }
    ancestral_step(x, s, sched.beta[t]);
    if (t > 0) add_noise(x, std::sqrt(sched.beta[t]), rng);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg.zeta * guide[i];
    check_finite(x, sched.steps() - 1 - t, "dps");
  }
  return x;
}

Tensor pmc_initial_state(const MeasurementOperator& op, const Tensor& y, double fill) {
  if (y.size() != op.size()) throw ShapeError("pmc: measurement does not match operator geometry");
  Tensor x = apply_linear(op, y);
  if (op.kind() == OperatorKind::inpaint) {
    const Tensor& mask = *op.mask();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (mask[i] == 0.0) x[i] = fill;
    }
  } else if (op.kind() == OperatorKind::awgn) {
    x = y;
  }
  return x;
}

Tensor sample_pmc(const ScoreField& prior, const MeasurementOperator& op, const Tensor& y, const PmcConfig& cfg,
                  Rng& rng, const std::optional<Tensor>& x_init, std::vector<PmcTraceRow>* trace) {
  const std::size_t d = op.size();
  if (y.size() != d) throw ShapeError("pmc: measurement does not match operator geometry");
  Tensor start = x_init ? *x_init : pmc_initial_state(op, y, cfg.init_fill);
  if (start.size() != d) throw ShapeError("pmc: initial state does not match operator geometry");
  Tensor x = start.reshaped({1, d});
  std::vector<Chain> chains{{&op, &y, rng}};
  run_pmc(prior, chains, x, cfg, trace);
  rng = chains[0].rng;
  return x.reshaped(y.shape());
}

Rng chain_rng(const Rng& base, std::uint64_t id, std::size_t chain) { return base.derive(id).derive(chain); }

std::vector<Tensor> posterior_batch(const ScoreField& prior, std::span<const Measurement> measurements,
                                    const PmcConfig& cfg, const Rng& base, std::size_t chains_per_y) {
  if (measurements.empty()) throw InvalidArgument("posterior_batch: no measurements");
  if (chains_per_y == 0) throw InvalidArgument("posterior_batch: need at least one chain per measurement");
  const std::size_t d = measurements.front().op.size();
  const std::size_t total = measurements.size() * chains_per_y;
  std::vector<Chain> chains;
  chains.reserve(total);
  Tensor x({total, d});
  for (std::size_t m = 0; m < measurements.size(); ++m) {
    const auto& meas = measurements[m];
    if (meas.op.size() != d || meas.y.size() != d) {
      throw ShapeError("posterior_batch: measurement " + std::to_string(meas.id) + " has a different geometry");
    }
    const Tensor start = pmc_initial_state(meas.op, meas.y, cfg.init_fill);
    for (std::size_t c = 0; c < chains_per_y; ++c) {
      const std::size_t row = m * chains_per_y + c;
      std::copy(start.values().begin(), start.values().end(), x.row(row).begin());
      chains.push_back({&meas.op, &meas.y, chain_rng(base, meas.id, c)});
    }
  }
  try {
    run_pmc(prior, chains, x, cfg, nullptr);
  } catch (const DivergenceError& e) {
    // name the offending measurement
    for (std::size_t r = 0; r < total; ++r) {
      for (double v : x.row(r)) {
        if (!std::isfinite(v)) {
          throw DivergenceError("measurement " + std::to_string(measurements[r / chains_per_y].id) + ": " + e.detail(),
                                e.step());
        }
      }
    }
    throw;
  }
  std::vector<Tensor> out;
  out.reserve(measurements.size());
  for (std::size_t m = 0; m < measurements.size(); ++m) {
    out.push_back(x.slice_rows(m * chains_per_y, (m + 1) * chains_per_y));
  }
  return out;
}

}  // namespace emdiff
