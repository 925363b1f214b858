#include "emdiff/oracles.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "emdiff/errors.hpp"
#include "emdiff/numkit.hpp"

namespace emdiff::oracles {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r, c);
  }
  return m;
}

Vec to_vec(const Tensor& t) {
  Vec v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
  return v;
}

Tensor from_vec(const Vec& v) {
  Tensor t({static_cast<std::size_t>(v.size())});
  for (Eigen::Index i = 0; i < v.size(); ++i) t[static_cast<std::size_t>(i)] = v(i);
  return t;
}

Tensor from_mat(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  }
  return t;
}

Eigen::LLT<Mat> factor_spd(const Mat& m, const char* what) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

// Per-component factorisations of Sigma_k + sigma^2 I.
struct MixtureFactors {
  std::vector<Eigen::LLT<Mat>> llt;
  std::vector<Vec> mean;
  std::vector<double> log_norm;  // log w_k - 0.5 log det(2 pi C_k)
};

MixtureFactors factorise(const GmmPrior& prior, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("gmm: sigma must be non-negative");
  MixtureFactors f;
  const auto d = static_cast<Eigen::Index>(prior.dim());
  for (std::size_t k = 0; k < prior.components.size(); ++k) {
    Mat c = to_mat(prior.components[k].cov) + sigma * sigma * Mat::Identity(d, d);
    auto llt = factor_spd(c, "gmm component covariance");
    const Mat& l = llt.matrixL();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) logdet += 2.0 * std::log(l(i, i));
    f.log_norm.push_back(std::log(prior.weights[k]) -
                         0.5 * (logdet + static_cast<double>(d) * std::log(2.0 * std::numbers::pi)));
    f.llt.push_back(std::move(llt));
    f.mean.push_back(to_vec(prior.components[k].mean));
  }
  return f;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void GaussianPrior::validate() const {
  const std::size_t d = mean.size();
  if (d == 0) throw ShapeError("gaussian prior: empty mean");
  if (cov.shape() != Shape{d, d}) throw ShapeError("gaussian prior: covariance must be d x d");
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < r; ++c) {
      if (std::abs(cov.at(r, c) - cov.at(c, r)) > 1e-12 * (1.0 + std::abs(cov.at(r, c)))) {
        throw InvalidArgument("gaussian prior: covariance not symmetric");
      }
    }
  }
  factor_spd(to_mat(cov), "gaussian prior covariance");
}

GaussianPrior GaussianPrior::isotropic(Tensor mean, double variance) {
  const std::size_t d = mean.size();
  Tensor cov({d, d});
  for (std::size_t i = 0; i < d; ++i) cov.at(i, i) = variance;
  return {mean.reshaped({d}), std::move(cov)};
}

std::size_t GmmPrior::dim() const {
  if (components.empty()) throw InvalidArgument("gmm: no components");
  return components.front().dim();
}

void GmmPrior::validate() const {
  if (components.empty() || weights.size() != components.size()) {
    throw InvalidArgument("gmm: need one weight per component");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw InvalidArgument("gmm: weights must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("gmm: weights must sum to 1");
  for (const auto& c : components) {
    c.validate();
    if (c.dim() != dim()) throw ShapeError("gmm: components differ in dimension");
  }
}

GaussianPrior gaussian_posterior(const GaussianPrior& prior, const Tensor& A, const Tensor& y, double noise_std) {
  const std::size_t d = prior.dim();
  if (A.rank() != 2 || A.dim(1) != d || A.dim(0) != y.size()) throw ShapeError("gaussian_posterior: A must be [m x d]");
  if (!(noise_std > 0.0)) throw InvalidArgument("gaussian_posterior: noise_std must be positive");
  const Mat a = to_mat(A);
  const auto prior_llt = factor_spd(to_mat(prior.cov), "gaussian_posterior prior covariance");
  const auto di = static_cast<Eigen::Index>(d);
  const Mat prior_prec = prior_llt.solve(Mat::Identity(di, di));
  const double inv_var = 1.0 / (noise_std * noise_std);
  Mat prec = prior_prec + inv_var * a.transpose() * a;
  prec = 0.5 * (prec + prec.transpose());
  const auto post_llt = factor_spd(prec, "gaussian_posterior precision");
  Mat cov = post_llt.solve(Mat::Identity(di, di));
  cov = 0.5 * (cov + cov.transpose());
  const Vec rhs = prior_prec * to_vec(prior.mean) + inv_var * a.transpose() * to_vec(y);
  return {from_vec(post_llt.solve(rhs)), from_mat(cov)};
}

Tensor gmm_score_sigma(const GmmPrior& prior, const Tensor& x, double sigma) {
  const std::size_t d = prior.dim();
  if (x.cols() != d) throw ShapeError("gmm_score_sigma: point dimension mismatch");
  const auto f = factorise(prior, sigma);
  const std::size_t K = prior.components.size();
  Tensor out(x.shape());
  std::vector<double> logp(K);
  std::vector<Vec> grad(K);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Vec xi(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) xi(static_cast<Eigen::Index>(j)) = x.row(i)[j];
    for (std::size_t k = 0; k < K; ++k) {
      const Vec diff = xi - f.mean[k];
      grad[k] = f.llt[k].solve(diff);
      logp[k] = f.log_norm[k] - 0.5 * diff.dot(grad[k]);
    }
    const double lse = log_sum_exp(logp);
    Vec s = Vec::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < K; ++k) s -= std::exp(logp[k] - lse) * grad[k];
    for (std::size_t j = 0; j < d; ++j) out.row(i)[j] = s(static_cast<Eigen::Index>(j));
  }
  return out;
}

double gmm_log_density(const GmmPrior& prior, std::span<const double> x, double sigma) {
  const std::size_t d = prior.dim();
  if (x.size() != d) throw ShapeError("gmm_log_density: point dimension mismatch");
  const auto f = factorise(prior, sigma);
  Vec xi(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) xi(static_cast<Eigen::Index>(j)) = x[j];
  std::vector<double> logp;
  for (std::size_t k = 0; k < prior.components.size(); ++k) {
    const Vec diff = xi - f.mean[k];
    logp.push_back(f.log_norm[k] - 0.5 * diff.dot(f.llt[k].solve(diff)));
  }
  return log_sum_exp(logp);
}

Tensor gmm_sample(const GmmPrior& prior, std::size_t n, Rng& rng) {
  prior.validate();
  const std::size_t d = prior.dim();
  std::vector<Mat> chol;
  for (const auto& c : prior.components) chol.push_back(factor_spd(to_mat(c.cov), "gmm_sample").matrixL());
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < prior.weights.size() && u >= prior.weights[k]) u -= prior.weights[k++];
    Vec z(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
    const Vec x = to_vec(prior.components[k].mean) + chol[k] * z;
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x(static_cast<Eigen::Index>(j));
  }
  return out;
}

GmmScoreField::GmmScoreField(GmmPrior prior) : prior_(std::move(prior)) { prior_.validate(); }

Tensor GmmScoreField::noised_score(const Tensor& x, double sigma) const { return gmm_score_sigma(prior_, x, sigma); }

GridPosterior::GridPosterior(GridSpec spec, std::vector<double> probs) : spec_(spec), probs_(std::move(probs)) {
  if (probs_.size() != spec_.nx * spec_.ny) throw ShapeError("grid posterior: mass does not match lattice");
  cdf_.resize(probs_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) cdf_[i] = (acc += probs_[i]);
}

std::array<double, 2> GridPosterior::cell_centre(std::size_t index) const {
  const std::size_t iy = index / spec_.nx;
  const std::size_t ix = index % spec_.nx;
  return {spec_.x_min + (static_cast<double>(ix) + 0.5) * spec_.cell_x(),
          spec_.y_min + (static_cast<double>(iy) + 0.5) * spec_.cell_y()};
}

Tensor GridPosterior::mean() const {
  Tensor m({2});
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const auto c = cell_centre(i);
    m[0] += probs_[i] * c[0];
    m[1] += probs_[i] * c[1];
  }
  return m;
}

Tensor GridPosterior::covariance() const {
  const Tensor m = mean();
  Tensor cov({2, 2});
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const auto c = cell_centre(i);
    const double dx = c[0] - m[0];
    const double dy = c[1] - m[1];
    cov.at(0, 0) += probs_[i] * dx * dx;
    cov.at(0, 1) += probs_[i] * dx * dy;
    cov.at(1, 1) += probs_[i] * dy * dy;
  }
  cov.at(1, 0) = cov.at(0, 1);
  return cov;
}

Tensor GridPosterior::sample(std::size_t n, Rng& rng) const {
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    const auto c = cell_centre(idx);
    out.at(i, 0) = c[0] + (rng.uniform() - 0.5) * spec_.cell_x();
    out.at(i, 1) = c[1] + (rng.uniform() - 0.5) * spec_.cell_y();
  }
  return out;
}

GridPosterior grid_posterior(const LogDensity2d& log_prior, const MeasurementOperator& op, const Tensor& y,
                             const GridSpec& grid) {
  if (op.size() != 2 || y.size() != 2) throw ShapeError("grid_posterior: only 2-D problems");
  if (grid.nx == 0 || grid.ny == 0 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min)) {
    throw InvalidArgument("grid_posterior: empty lattice");
  }
  GridPosterior shape_only(grid, std::vector<double>(grid.nx * grid.ny));
  std::vector<double> logp(grid.nx * grid.ny);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const auto c = shape_only.cell_centre(i);
    const double pt[2] = {c[0], c[1]};
    logp[i] = log_prior(c[0], c[1]) + log_likelihood(op, std::span<const double>(pt, 2), y.span());
    if (std::isnan(logp[i])) logp[i] = -std::numeric_limits<double>::infinity();
    max_log = std::max(max_log, logp[i]);
  }
  if (!std::isfinite(max_log)) throw NumericalError("grid_posterior: no posterior mass on the lattice");
  double z = 0.0;
  for (auto& v : logp) z += (v = std::exp(v - max_log));
  for (auto& v : logp) v /= z;
  return GridPosterior(grid, std::move(logp));
}

double psnr(const Tensor& x, const Tensor& ref, double peak) {
  if (!(peak > 0.0)) throw InvalidArgument("psnr: peak must be positive");
  const double m = mse(x, ref);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("wasserstein_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate (Qa(u) - Qb(u))^2 over u in (0, 1) across the merged quantile breakpoints.
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double ua = static_cast<double>(i + 1) / na;
    const double ub = static_cast<double>(j + 1) / nb;
    const double next = std::min(ua, ub);
    const double diff = a[i] - b[j];
    acc += (next - u) * diff * diff;
    u = next;
    if (ua <= next) ++i;
    if (ub <= next) ++j;
  }
  return std::sqrt(std::max(acc, 0.0));
}

double sliced_wasserstein(const Tensor& a, const Tensor& b, std::size_t n_proj, Rng& rng) {
  if (n_proj < 1) throw InvalidArgument("sliced_wasserstein: need at least one projection");
  const std::size_t d = a.cols();
  if (b.cols() != d) throw ShapeError("sliced_wasserstein: point dimensions differ");
  if (a.rows() == 0 || b.rows() == 0) throw InvalidArgument("sliced_wasserstein: empty point set");
  std::vector<double> pa(a.rows()), pb(b.rows());
  // Directions come in random orthonormal frames of up to d vectors: still
  // uniform marginally, with less spread than independent draws.
  std::vector<std::vector<double>> frame;
  double total = 0.0;
  for (std::size_t p = 0; p < n_proj; ++p) {
    if (p % d == 0) frame.clear();
    std::vector<double> theta(d);
    double norm = 0.0;
    while (norm < 1e-12) {
      for (auto& t : theta) t = rng.normal();
      for (const auto& f : frame) {
        double c = 0.0;
        for (std::size_t k = 0; k < d; ++k) c += theta[k] * f[k];
        for (std::size_t k = 0; k < d; ++k) theta[k] -= c * f[k];
      }
      norm = 0.0;
      for (double t : theta) norm += t * t;
    }
    norm = std::sqrt(norm);
    for (auto& t : theta) t /= norm;
    frame.push_back(theta);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a.row(i)[k] * theta[k];
      pa[i] = s;
    }
    for (std::size_t i = 0; i < b.rows(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += b.row(i)[k] * theta[k];
      pb[i] = s;
    }
    total += wasserstein_1d(pa, pb);
  }
  return total / static_cast<double>(n_proj);
}

}  // namespace emdiff::oracles
