#include "emdiff/exp/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "emdiff/errors.hpp"
#include "json.hpp"

namespace emdiff::exp {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// (usually typos) can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), path_ + key + ".");
  }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        if (!v->is_number()) fail(key, "a number or null");
        out = v->get<double>();
      }
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of non-negative integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) fail(key, "an array of non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  void read(const std::string& key, std::vector<std::array<double, 2>>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of [x, y] pairs");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
          fail(key, "an array of [x, y] pairs");
        }
        out.push_back({e[0].get<double>(), e[1].get<double>()});
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(where() + "unknown key '" + path_ + key + "'");
    }
  }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const std::string& key, const char* expected) const {
    throw ConfigError(where() + "'" + path_ + key + "' must be " + expected);
  }
  std::string where() const { return "config: "; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_train(Section s, TrainConfig& t) {
  s.read("steps", t.steps);
  s.read("batch", t.batch);
  s.read("lr", t.lr);
  s.read("lr_final_frac", t.lr_final_frac);
  s.read("adam_beta1", t.adam_beta1);
  s.read("adam_beta2", t.adam_beta2);
  s.read("adam_eps", t.adam_eps);
  s.read("grad_clip", t.grad_clip);
  s.finish();
}

json write_train(const TrainConfig& t) {
  return {{"steps", t.steps},           {"batch", t.batch},
          {"lr", t.lr},                 {"lr_final_frac", t.lr_final_frac},
          {"adam_beta1", t.adam_beta1}, {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},     {"grad_clip", t.grad_clip}};
}

void read_config(const json& root, ExperimentConfig& c) {
  Section s(root, "");
  std::size_t seed = c.seed;
  s.read("seed", seed);
  c.seed = seed;
  s.read("output_dir", c.output_dir);
  s.read("metrics", c.metrics);

  if (s.has("dataset")) {
    Section d = s.sub("dataset");
    d.read("kind", c.dataset.kind);
    d.read("n", c.dataset.n);
    d.read("n_pool", c.dataset.n_pool);
    d.read("n_reference", c.dataset.n_reference);
    if (d.has("gmm")) {
      Section g = d.sub("gmm");
      g.read("means", c.dataset.gmm.means);
      g.read("weights", c.dataset.gmm.weights);
      g.read("std", c.dataset.gmm.std);
      g.finish();
    }
    if (d.has("rings")) {
      Section r = d.sub("rings");
      r.read("radii", c.dataset.rings.radii);
      r.read("width", c.dataset.rings.width);
      r.finish();
    }
    if (d.has("images")) {
      Section i = d.sub("images");
      i.read("size", c.dataset.images.size);
      i.read("max_shapes", c.dataset.images.max_shapes);
      i.finish();
    }
    d.finish();
  }

  if (s.has("operator")) {
    Section o = s.sub("operator");
    std::string kind = to_string(c.op.kind);
    o.read("kind", kind);
    try {
      c.op.kind = operator_kind_from_string(kind);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("config: operator.kind: ") + e.what());
    }
    o.read("noise_std", c.op.noise_std);
    o.read("keep_fraction", c.op.keep_fraction);
    o.read("kernel_size", c.op.kernel_size);
    o.read("kernel_std", c.op.kernel_std);
    std::size_t mask_seed = c.op.mask_seed;
    o.read("mask_seed", mask_seed);
    c.op.mask_seed = mask_seed;
    o.finish();
  }

  if (s.has("schedule")) {
    Section t = s.sub("schedule");
    t.read("steps", c.schedule.steps);
    t.read("beta_min", c.schedule.beta_min);
    t.read("beta_max", c.schedule.beta_max);
    t.finish();
  }

  if (s.has("model")) {
    Section m = s.sub("model");
    m.read("hidden", c.em.model.hidden);
    m.read("embed_dim", c.em.model.embed_dim);
    m.finish();
  }

  if (s.has("em")) {
    Section e = s.sub("em");
    e.read("n_iters", c.em.n_iters);
    e.read("n_init_clean", c.em.n_init_clean);
    e.read("subsample_size", c.em.subsample_size);
    e.read("subsample_iters", c.em.subsample_iters);
    e.read("reset_iters", c.em.reset_iters);
    e.read("alpha_min", c.em.alpha_min);
    e.read("chains_per_y", c.em.chains_per_y);
    e.read("eval_samples", c.em.eval_samples);
    e.read("sw_projections", c.em.sw_projections);
    if (e.has("train_init")) read_train(e.sub("train_init"), c.em.train_init);
    if (e.has("train_finetune")) read_train(e.sub("train_finetune"), c.em.train_finetune);
    if (e.has("train_scratch")) read_train(e.sub("train_scratch"), c.em.train_scratch);
    e.finish();
  }

  if (s.has("pmc")) {
    Section p = s.sub("pmc");
    p.read("gamma", c.em.pmc.gamma);
    p.read("alpha", c.em.pmc.alpha);
    p.read("tau", c.em.pmc.tau);
    p.read("init_fill", c.init_fill);
    if (p.has("ladder")) {
      Section l = p.sub("ladder");
      l.read("sigma_max", c.em.pmc.ladder.sigma_max);
      l.read("sigma_min", c.em.pmc.ladder.sigma_min);
      l.read("levels", c.em.pmc.ladder.levels);
      l.read("steps_per_level", c.em.pmc.ladder.steps_per_level);
      l.finish();
    }
    p.finish();
  }

  if (s.has("dps")) {
    Section p = s.sub("dps");
    p.read("zeta", c.dps.zeta);
    p.finish();
  }

  if (s.has("eval")) {
    Section v = s.sub("eval");
    v.read("reconstructors", c.eval.reconstructors);
    v.read("n_items", c.eval.n_items);
    v.read("n_samples", c.eval.n_samples);
    v.read("sw_projections", c.eval.sw_projections);
    v.read("posterior_chains", c.eval.posterior_chains);
    v.finish();
  }
  s.finish();
}

template <class T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  check(dataset.kind == "gmm2d" || dataset.kind == "rings2d" || dataset.kind == "toy_images",
        "dataset.kind must be gmm2d, rings2d or toy_images");
  check(dataset.n >= 1, "dataset.n must be positive");
  check(dataset.n_pool >= 1, "dataset.n_pool must be positive");
  if (dataset.kind == "gmm2d") {
    const auto& g = dataset.gmm;
    check(!g.means.empty() && g.means.size() == g.weights.size(), "dataset.gmm needs one weight per mean");
    double total = 0.0;
    for (double w : g.weights) {
      check(w > 0.0, "dataset.gmm.weights must be positive");
      total += w;
    }
    check(std::abs(total - 1.0) <= 1e-12, "dataset.gmm.weights must sum to 1");
    check(g.std > 0.0, "dataset.gmm.std must be positive");
  }
  if (dataset.kind == "rings2d") {
    check(!dataset.rings.radii.empty(), "dataset.rings.radii must not be empty");
    check(dataset.rings.width > 0.0, "dataset.rings.width must be positive");
    for (double r : dataset.rings.radii) check(r - dataset.rings.width / 2 >= 0.0, "dataset.rings annuli must not cross zero");
  }
  if (dataset.is_image()) {
    check(dataset.images.size >= 4, "dataset.images.size must be at least 4");
    check(dataset.images.max_shapes >= 1, "dataset.images.max_shapes must be positive");
  }
  check(op.noise_std > 0.0, "operator.noise_std must be positive");
  if (op.kind == OperatorKind::inpaint) check(op.keep_fraction > 0.0 && op.keep_fraction <= 1.0, "operator.keep_fraction must lie in (0, 1]");
  if (op.kind == OperatorKind::blur) {
    check(dataset.is_image(), "operator.kind blur needs image data");
    check(op.kernel_size % 2 == 1 && op.kernel_std > 0.0, "operator kernel needs odd size and positive std");
  }
  check(schedule.steps >= 1 && schedule.beta_min > 0.0 && schedule.beta_min <= schedule.beta_max && schedule.beta_max < 1.0,
        "schedule needs steps >= 1 and 0 < beta_min <= beta_max < 1");
  check(!em.model.hidden.empty(), "model.hidden must list at least one layer");
  for (auto h : em.model.hidden) check(h > 0, "model.hidden widths must be positive");
  check(em.model.embed_dim > 0 && em.model.embed_dim % 2 == 0, "model.embed_dim must be even and positive");
  check(em.n_init_clean >= 1 && em.n_init_clean <= dataset.n_pool, "em.n_init_clean must lie in [1, dataset.n_pool]");
  try {
    em.validate();
    dps.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& r : eval.reconstructors) {
    check(r == "measurement" || r == "pmc" || r == "dps" || r == "truth",
          "eval.reconstructors entries must be measurement, pmc, dps or truth");
  }
  for (const auto& m : metrics) check(m == "psnr" || m == "sw" || m == "posterior_sw", "metrics entries must be psnr, sw or posterior_sw");
  check(eval.sw_projections >= 1, "eval.sw_projections must be positive");
  check(!contains(metrics, std::string("posterior_sw")) || eval.posterior_chains >= 2, "eval.posterior_chains must be at least 2");
}

Shape ExperimentConfig::item_shape() const {
  if (dataset.is_image()) return {dataset.images.size, dataset.images.size};
  return {2};
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  read_config(root, cfg);
  return cfg;
}

std::string serialize_config(const ExperimentConfig& c) {
  json gmm_means = json::array();
  for (const auto& m : c.dataset.gmm.means) gmm_means.push_back({m[0], m[1]});
  json tau = c.em.pmc.tau ? json(*c.em.pmc.tau) : json(nullptr);
  json fill = c.init_fill ? json(*c.init_fill) : json(nullptr);
  json root = {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"metrics", c.metrics},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"n", c.dataset.n},
        {"n_pool", c.dataset.n_pool},
        {"n_reference", c.dataset.n_reference},
        {"gmm", {{"means", gmm_means}, {"weights", c.dataset.gmm.weights}, {"std", c.dataset.gmm.std}}},
        {"rings", {{"radii", c.dataset.rings.radii}, {"width", c.dataset.rings.width}}},
        {"images", {{"size", c.dataset.images.size}, {"max_shapes", c.dataset.images.max_shapes}}}}},
      {"operator",
       {{"kind", to_string(c.op.kind)},
        {"noise_std", c.op.noise_std},
        {"keep_fraction", c.op.keep_fraction},
        {"kernel_size", c.op.kernel_size},
        {"kernel_std", c.op.kernel_std},
        {"mask_seed", c.op.mask_seed}}},
      {"schedule", {{"steps", c.schedule.steps}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}}},
      {"model", {{"hidden", c.em.model.hidden}, {"embed_dim", c.em.model.embed_dim}}},
      {"em",
       {{"n_iters", c.em.n_iters},
        {"n_init_clean", c.em.n_init_clean},
        {"subsample_size", c.em.subsample_size},
        {"subsample_iters", c.em.subsample_iters},
        {"reset_iters", c.em.reset_iters},
        {"alpha_min", c.em.alpha_min},
        {"chains_per_y", c.em.chains_per_y},
        {"eval_samples", c.em.eval_samples},
        {"sw_projections", c.em.sw_projections},
        {"train_init", write_train(c.em.train_init)},
        {"train_finetune", write_train(c.em.train_finetune)},
        {"train_scratch", write_train(c.em.train_scratch)}}},
      {"pmc",
       {{"gamma", c.em.pmc.gamma},
        {"alpha", c.em.pmc.alpha},
        {"tau", tau},
        {"init_fill", fill},
        {"ladder",
         {{"sigma_max", c.em.pmc.ladder.sigma_max},
          {"sigma_min", c.em.pmc.ladder.sigma_min},
          {"levels", c.em.pmc.ladder.levels},
          {"steps_per_level", c.em.pmc.ladder.steps_per_level}}}}},
      {"dps", {{"zeta", c.dps.zeta}}},
      {"eval",
       {{"reconstructors", c.eval.reconstructors},
        {"n_items", c.eval.n_items},
        {"n_samples", c.eval.n_samples},
        {"sw_projections", c.eval.sw_projections},
        {"posterior_chains", c.eval.posterior_chains}}},
  };
  return root.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

NoiseSchedule make_schedule(const ScheduleSpec& spec) {
  return make_linear_schedule(spec.steps, spec.beta_min, spec.beta_max);
}

}  // namespace emdiff::exp
