#include "emdiff/scorenet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "emdiff/errors.hpp"
#include "emdiff/kernels.hpp"
#include "emdiff/numkit.hpp"

namespace emdiff {

namespace {

using Array4 = Eigen::Array4d;

// Eigen's packet exp keeps the activation vectorised; scalar libm exp was
// the largest cost after the matrix products. Every element goes through a
// fixed 4-wide block, zero padded at the tail. Mapping the whole buffer would
// let Eigen peel unaligned leading elements onto its scalar exp, whose bits
// differ from the packet path, and training would then depend on where the
// allocator put the buffer.
Array4 sigmoid(const Array4& a) { return (1.0 + (-a).exp()).inverse(); }

template <class F>
void blockwise(std::size_t n, F&& f) {
  for (std::size_t i = 0; i < n; i += 4) f(i, std::min<std::size_t>(4, n - i));
}

Array4 load(const double* p, std::size_t len) {
  if (len == 4) return Eigen::Map<const Array4>(p);
  Array4 v = Array4::Zero();
  for (std::size_t j = 0; j < len; ++j) v[static_cast<Eigen::Index>(j)] = p[j];
  return v;
}

void store(double* p, const Array4& v, std::size_t len) {
  if (len == 4) {
    Eigen::Map<Array4> out(p);
    out = v;
    return;
  }
  for (std::size_t j = 0; j < len; ++j) p[j] = v[static_cast<Eigen::Index>(j)];
}

// h = a * sigmoid(a)
void silu(const double* a, double* h, std::size_t n) {
  blockwise(n, [&](std::size_t i, std::size_t len) {
    const Array4 v = load(a + i, len);
    store(h + i, v * sigmoid(v), len);
  });
}

// g *= silu'(a)
void silu_backward(const double* a, double* g, std::size_t n) {
  blockwise(n, [&](std::size_t i, std::size_t len) {
    const Array4 v = load(a + i, len);
    const Array4 s = sigmoid(v);
    store(g + i, load(g + i, len) * (s * (1.0 + v * (1.0 - s))), len);
  });
}

// Activations kept for the backward pass. inputs[l] feeds layer l;
// pre[l] is that layer's affine output.
struct Activations {
  std::vector<Tensor> inputs;
  std::vector<Tensor> pre;
  Tensor output;
};

// Output preconditioning. For x0 ~ N(0, I) the posterior mean of the noise is
// E[eps | x_t] = sigma * x_t, and the remaining spread has std sqrt(1 - sigma^2).
// The network only supplies that normalised residual, so a Gaussian prior is
// represented exactly by a zero output and at small sigma the network does
// plain noise prediction with O(1) targets.
double output_gain(double sigma) { return std::sqrt(std::max(1.0 - sigma * sigma, kMinSigma * kMinSigma)); }

// eps-hat = sigma * x + gain(sigma) * net, in place on the raw network output.
void precondition(Tensor& out, const Tensor& x, std::span<const double> sigmas) {
  const std::size_t n = out.rows();
  const std::size_t d = out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double sg = sigmas.size() == 1 ? sigmas[0] : sigmas[i];
    const double g = output_gain(sg);
    auto o = out.row(i);
    const double* xr = x.values().data() + i * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = sg * xr[j] + g * o[j];
  }
}

// Writes [x | embedding(sigma)] rows into `in`, resized to n x (d + e).
void fill_input(const ScoreModel& model, const Tensor& x, std::span<const double> sigmas, std::vector<double>& in) {
  const std::size_t n = x.rows();
  const std::size_t d = model.data_dim();
  const std::size_t e = model.embed_dim();
  if (x.cols() != d) {
    throw ShapeError("score model expects " + std::to_string(d) + " features per row, got " +
                     std::to_string(x.cols()));
  }
  if (sigmas.size() != 1 && sigmas.size() != n) throw ShapeError("score model: one sigma or one per row");
  in.resize(n * (d + e));
  std::vector<double> shared;
  if (sigmas.size() == 1) shared = model.embedding(sigmas[0]);
  for (std::size_t i = 0; i < n; ++i) {
    double* r = in.data() + i * (d + e);
    std::copy_n(x.row(i).begin(), d, r);
    const auto emb = sigmas.size() == 1 ? shared : model.embedding(sigmas[i]);
    std::copy(emb.begin(), emb.end(), r + d);
  }
}

Tensor network_input(const ScoreModel& model, const Tensor& x, std::span<const double> sigmas) {
  std::vector<double> in;
  fill_input(model, x, sigmas, in);
  return Tensor({x.rows(), model.data_dim() + model.embed_dim()}, std::move(in));
}

Activations forward(const ScoreModel& model, const Tensor& x, std::span<const double> sigmas) {
  Activations act;
  Tensor h = network_input(model, x, sigmas);
  const auto& dims = model.layer_dims();
  const auto& p = model.params();
  const std::size_t n = h.rows();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    Tensor a({n, dims[l + 1]});
    kernels::affine(h.span(), p[2 * l].span(), p[2 * l + 1].span(), a.span(), n, dims[l], dims[l + 1]);
    const bool last = l + 1 == model.layer_count();
    act.inputs.push_back(std::move(h));
    if (last) {
      precondition(a, x, sigmas);
      act.output = std::move(a);
      break;
    }
    h = Tensor(a.shape());
    silu(a.span().data(), h.span().data(), a.size());
    act.pre.push_back(std::move(a));
  }
  return act;
}

// Inference-only pass. Sampling calls this once per step on large batches,
// so the activations live in per-thread buffers that keep their capacity
// instead of fresh allocations that page-fault on every call. Performs the
// same operations as forward().
Tensor infer(const ScoreModel& model, const Tensor& x, std::span<const double> sigmas) {
  thread_local std::vector<double> buf_in, buf_a, buf_h;
  fill_input(model, x, sigmas, buf_in);
  const auto& dims = model.layer_dims();
  const auto& p = model.params();
  const std::size_t n = x.rows();
  std::span<const double> h = buf_in;
  for (std::size_t l = 0; l + 1 < model.layer_count(); ++l) {
    const std::size_t width = dims[l + 1];
    buf_a.resize(n * width);
    kernels::affine(h, p[2 * l].span(), p[2 * l + 1].span(), buf_a, n, dims[l], width);
    buf_h.resize(n * width);
    silu(buf_a.data(), buf_h.data(), buf_a.size());
    h = buf_h;
  }
  const std::size_t l = model.layer_count() - 1;
  Tensor out({n, dims[l + 1]});
  kernels::affine(h, p[2 * l].span(), p[2 * l + 1].span(), out.span(), n, dims[l], dims[l + 1]);
  precondition(out, x, sigmas);
  return out;
}

}  // namespace

ScoreModel::ScoreModel(std::vector<std::size_t> layer_dims, std::vector<Tensor> params)
    : dims_(std::move(layer_dims)), params_(std::move(params)) {
  if (dims_.size() < 2) throw InvalidArgument("score model needs at least an input and an output width");
  if (dims_.front() <= dims_.back()) throw InvalidArgument("score model input must be data dim plus embedding");
  if ((dims_.front() - dims_.back()) % 2 != 0) throw InvalidArgument("embedding width must be even");
  if (params_.size() != 2 * (dims_.size() - 1)) throw ShapeError("score model: wrong number of parameter tensors");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (params_[2 * l].shape() != Shape{dims_[l], dims_[l + 1]} || params_[2 * l + 1].shape() != Shape{dims_[l + 1]}) {
      throw ShapeError("score model: layer " + std::to_string(l) + " parameters do not match widths");
    }
  }
}

ScoreModel ScoreModel::create(std::size_t data_dim, const ModelConfig& cfg, Rng& rng) {
  if (data_dim == 0) throw InvalidArgument("score model: data dim must be positive");
  if (cfg.embed_dim == 0 || cfg.embed_dim % 2 != 0) throw InvalidArgument("embedding width must be even and positive");
  std::vector<std::size_t> dims{data_dim + cfg.embed_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(data_dim);
  std::vector<Tensor> params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = l + 2 == dims.size();
    const double std = last ? 0.0 : std::sqrt(2.0 / static_cast<double>(dims[l]));
    params.push_back(gaussian_sample(rng, {dims[l], dims[l + 1]}, 0.0, std));
    params.emplace_back(Shape{dims[l + 1]});
  }
  return ScoreModel(std::move(dims), std::move(params));
}

std::size_t ScoreModel::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

bool ScoreModel::params_finite() const noexcept {
  return std::all_of(params_.begin(), params_.end(), [](const Tensor& t) { return t.all_finite(); });
}

std::vector<double> ScoreModel::embedding(double sigma) const {
  const std::size_t half = embed_dim() / 2;
  std::vector<double> e(embed_dim());
  const double u = std::log(std::max(sigma, kMinSigma));
  for (std::size_t i = 0; i < half; ++i) {
    // frequencies 0.5 .. 4: smooth in log-sigma, so sparsely sampled small levels are not overfit
    const double f = half == 1 ? 1.0 : 0.5 * std::pow(8.0, static_cast<double>(i) / static_cast<double>(half - 1));
    e[i] = std::sin(f * u);
    e[half + i] = std::cos(f * u);
  }
  return e;
}

Tensor ScoreModel::predict_noise(const Tensor& x, std::span<const double> sigmas) const {
  Tensor out = infer(*this, x, sigmas);
  if (x.rank() == 1) return out.reshaped(x.shape());
  return out;
}

Tensor ScoreModel::score(const Tensor& x, double sigma) const {
  if (!(sigma >= 0.0)) throw InvalidArgument("score: sigma must be non-negative");
  Tensor eps = predict_noise(x, sigma);
  const double s = std::max(sigma, kMinSigma);
  for (auto& v : eps.span()) v = -v / s;
  return eps;
}

void TrainConfig::validate() const {
  if (batch == 0) throw InvalidArgument("train: batch must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be positive");
  if (!(grad_clip > 0.0)) throw InvalidArgument("train: grad_clip must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw InvalidArgument("train: Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw InvalidArgument("train: adam_eps must be positive");
  if (!(lr_final_frac >= 0.0 && lr_final_frac <= 1.0)) throw InvalidArgument("train: lr_final_frac must lie in [0, 1]");
}

LossAndGrad dsm_loss_and_grad_at(const ScoreModel& model, const Tensor& x0, std::span<const std::size_t> steps,
                                 const Tensor& eps, const NoiseSchedule& sched) {
  const std::size_t n = x0.rows();
  const std::size_t d = model.data_dim();
  if (n == 0) throw InvalidArgument("dsm: empty batch");
  if (x0.cols() != d || eps.rows() != n || eps.cols() != d || steps.size() != n) {
    throw ShapeError("dsm: batch, noise and step counts disagree");
  }
  Tensor x_t({n, d});
  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = steps[i];
    if (t >= sched.steps()) throw IndexError("dsm: step outside schedule");
    const double a = std::sqrt(sched.alpha_bar[t]);
    sig[i] = sched.sigma[t];
    for (std::size_t j = 0; j < d; ++j) x_t.at(i, j) = a * x0.at(i, j) + sig[i] * eps.at(i, j);
  }

  Activations act = forward(model, x_t, sig);
  const auto& dims = model.layer_dims();
  const auto& p = model.params();
  const std::size_t L = model.layer_count();

  LossAndGrad out;
  Tensor delta({n, d});
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n * d; ++i) {
    const double r = act.output[i] - eps[i];
    loss += r * r;
    delta[i] = 2.0 * r * inv_n * output_gain(sig[i / d]);
  }
  out.loss = loss * inv_n;
  out.grads.resize(p.size());

  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = dims[l];
    const std::size_t o = dims[l + 1];
    Tensor gw({in, o});
    kernels::gemm_tn(act.inputs[l].span(), delta.span(), gw.span(), n, in, o);
    Tensor gb({o});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < o; ++j) gb[j] += delta.at(i, j);
    }
    out.grads[2 * l] = std::move(gw);
    out.grads[2 * l + 1] = std::move(gb);
    if (l == 0) break;
    Tensor dh({n, in});
    kernels::gemm_nt(delta.span(), p[2 * l].span(), dh.span(), n, in, o);
    const Tensor& a = act.pre[l - 1];
    silu_backward(a.span().data(), dh.span().data(), a.size());
    delta = std::move(dh);
  }
  return out;
}

LossAndGrad dsm_loss_and_grad(const ScoreModel& model, const Tensor& x0, const NoiseSchedule& sched, Rng& rng) {
  if (x0.rows() == 0) throw InvalidArgument("dsm: empty batch");
  std::vector<std::size_t> steps(x0.rows());
  for (auto& t : steps) t = rng.uniform_index(sched.steps());
  const Tensor eps = gaussian_sample(rng, {x0.rows(), x0.cols()}, 0.0, 1.0);
  return dsm_loss_and_grad_at(model, x0.reshaped({x0.rows(), x0.cols()}), steps, eps, sched);
}

TrainResult train(ScoreModel model, const Tensor& data, const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  if (n == 0) throw InvalidArgument("train: no data");
  if (d != model.data_dim()) throw ShapeError("train: data width does not match the model");

  TrainResult result;
  result.losses.reserve(cfg.steps);
  auto& params = model.params();
  std::vector<Tensor> m, v;
  for (const auto& prm : params) {
    m.emplace_back(prm.shape());
    v.emplace_back(prm.shape());
  }
  Tensor batch({cfg.batch, d});
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      const auto src = data.row(rng.uniform_index(n));
      std::copy(src.begin(), src.end(), batch.row(i).begin());
    }
    LossAndGrad lg = dsm_loss_and_grad(model, batch, sched, rng);
    if (!std::isfinite(lg.loss)) throw DivergenceError("training loss is not finite", step);
    result.losses.push_back(lg.loss);

    double gnorm2 = 0.0;
    for (const auto& g : lg.grads) gnorm2 += squared_norm(g);
    const double gnorm = std::sqrt(gnorm2);
    const double clip = gnorm > cfg.grad_clip ? cfg.grad_clip / gnorm : 1.0;

    b1t *= cfg.adam_beta1;
    b2t *= cfg.adam_beta2;
    const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
    const double lr = cfg.lr * (cfg.lr_final_frac + (1.0 - cfg.lr_final_frac) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    const double step_size = lr * std::sqrt(1.0 - b2t) / (1.0 - b1t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& prm = params[k];
      const auto& g = lg.grads[k];
      for (std::size_t i = 0; i < prm.size(); ++i) {
        const double gi = g[i] * clip;
        m[k][i] = cfg.adam_beta1 * m[k][i] + (1.0 - cfg.adam_beta1) * gi;
        v[k][i] = cfg.adam_beta2 * v[k][i] + (1.0 - cfg.adam_beta2) * gi * gi;
        prm[i] -= step_size * m[k][i] / (std::sqrt(v[k][i]) + cfg.adam_eps);
      }
    }
    if (!model.params_finite()) throw DivergenceError("training produced non-finite parameters", step);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace emdiff
