#include "emdiff/exp/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "emdiff/checkpoint.hpp"
#include "emdiff/errors.hpp"
#include "emdiff/exp/datasets.hpp"
#include "emdiff/exp/files.hpp"
#include "emdiff/numkit.hpp"
#include "emdiff/oracles.hpp"
#include "json.hpp"

namespace emdiff::exp {

namespace {

// Streams under Rng(seed), one per stage.
constexpr std::uint64_t kDataStream = 11;
constexpr std::uint64_t kCorruptStream = 12;
constexpr std::uint64_t kRunStream = 13;
constexpr std::uint64_t kEvalStream = 14;
constexpr std::uint64_t kSampleStream = 15;

const char* const kSplits[] = {"items", "pool", "reference"};

double mean_value(const Tensor& t) {
  if (t.empty()) return 0.0;
  double sum = 0.0;
  for (double v : t.values()) sum += v;
  return sum / static_cast<double>(t.size());
}

std::string item_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu.pgm", i);
  return buf;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Tensor item(const Tensor& rows, std::size_t i, const Shape& shape) { return rows.slice_rows(i, i + 1).reshaped(shape); }

void write_split(Manifest& m, const ExperimentConfig& cfg, const std::string& split, const Tensor& rows) {
  if (!cfg.dataset.is_image()) {
    write_table_csv(m.add(split + ".csv"), rows);
    return;
  }
  const Shape shape = cfg.item_shape();
  for (std::size_t i = 0; i < rows.rows(); ++i) write_pgm(m.add(split + "/" + item_name(i)), item(rows, i, shape));
}

fs::path root_of(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir); }

// Stage errors keep their type but gain a label saying which inputs were at fault.
template <class Fn>
auto labelled(const std::string& label, Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    throw IoError(label + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(label + ": " + e.what());
  }
}

nlohmann::json operator_sidecar(const ExperimentConfig& cfg, const std::vector<MeasurementOperator>& ops) {
  nlohmann::json j;
  j["kind"] = to_string(cfg.op.kind);
  j["noise_std"] = cfg.op.noise_std;
  j["item_shape"] = cfg.item_shape();
  j["count"] = ops.size();
  if (cfg.op.kind == OperatorKind::inpaint) {
    j["keep_fraction"] = cfg.op.keep_fraction;
    j["mask_seed"] = cfg.op.mask_seed;
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = 0; i < ops.size(); ++i) {
      std::vector<int> mask;
      for (double v : ops[i].mask()->values()) mask.push_back(static_cast<int>(v));
      items.push_back({{"index", i}, {"mask", mask}});
    }
    j["items"] = items;
  }
  if (cfg.op.kind == OperatorKind::blur) {
    j["kernel_size"] = cfg.op.kernel_size;
    j["kernel_std"] = cfg.op.kernel_std;
    j["kernel"] = ops.front().kernel()->values();
  }
  return j;
}

std::vector<MeasurementOperator> operators_from_sidecar(const nlohmann::json& j, const std::string& where) {
  try {
    const auto kind = operator_kind_from_string(j.at("kind").get<std::string>());
    const double noise = j.at("noise_std").get<double>();
    const Shape shape = j.at("item_shape").get<Shape>();
    const std::size_t count = j.at("count").get<std::size_t>();
    std::vector<MeasurementOperator> ops;
    ops.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      switch (kind) {
        case OperatorKind::awgn:
          ops.push_back(MeasurementOperator::awgn(shape, noise));
          break;
        case OperatorKind::inpaint: {
          const auto& entry = j.at("items").at(i);
          if (entry.at("index").get<std::size_t>() != i) throw FormatError(where + ": mask entries out of order");
          const auto bits = entry.at("mask").get<std::vector<double>>();
          ops.push_back(MeasurementOperator::inpaint(Tensor(shape, bits), noise));
          break;
        }
        case OperatorKind::blur: {
          const std::size_t k = j.at("kernel_size").get<std::size_t>();
          ops.push_back(MeasurementOperator::blur(shape, Tensor({k, k}, j.at("kernel").get<std::vector<double>>()), noise));
          break;
        }
      }
    }
    return ops;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed operator sidecar: " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": invalid operator sidecar: " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(where + ": invalid operator sidecar: " + e.what());
  }
}

ScoreModel load_model(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint, const std::string& purpose,
                      Manifest& m) {
  fs::path p;
  if (checkpoint) {
    p = *checkpoint;
  } else {
    p = latest_stage_dir(root_of(cfg), "run", purpose) / "model_final.emdm";
  }
  m.add_input(p);
  ScoreModel model = labelled(purpose, [&] { return load_checkpoint(p); });
  const std::size_t d = shape_size(cfg.item_shape());
  if (model.data_dim() != d) {
    throw ConfigError("config: checkpoint " + p.string() + " models " + std::to_string(model.data_dim()) +
                      " values per item, the dataset has " + std::to_string(d));
  }
  return model;
}

void write_metrics_csv(const fs::path& path, const std::vector<EmIterationRecord>& log) {
  std::string text = "k,alpha_k,dsm_loss,psnr_mean,sw_distance\n";
  for (const auto& r : log) {
    text += std::to_string(r.k) + "," + fmt(r.alpha_k) + "," + fmt(r.dsm_loss) + "," + fmt(r.psnr_mean) + "," +
            fmt(r.sw_distance) + "\n";
  }
  write_text(path, text);
}

oracles::LogDensity2d log_prior_2d(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == "gmm2d") {
    return [prior = gmm_prior(cfg.dataset.gmm)](double x, double y) {
      const double pt[2] = {x, y};
      return oracles::gmm_log_density(prior, pt, 0.0);
    };
  }
  // rings: radius uniform on each annulus, angle uniform, so the planar density is p(r) / (2 pi r)
  return [rs = cfg.dataset.rings](double x, double y) {
    const double r = std::hypot(x, y);
    double p = 0.0;
    for (double c : rs.radii) {
      if (std::abs(r - c) <= rs.width / 2) p += 1.0 / (static_cast<double>(rs.radii.size()) * rs.width);
    }
    return p > 0.0 && r > 0.0 ? std::log(p / (2.0 * std::numbers::pi * r)) : -std::numeric_limits<double>::infinity();
  };
}

}  // namespace

Tensor load_clean_split(const ExperimentConfig& cfg, const std::string& split, const std::string& purpose) {
  const fs::path dir = latest_stage_dir(root_of(cfg), "data", purpose);
  return labelled(purpose, [&] {
    if (!cfg.dataset.is_image()) {
      const fs::path p = dir / (split + ".csv");
      if (!fs::exists(p)) throw IoError("missing " + p.string());
      Tensor t = read_table_csv(p);
      if (t.cols() != 2) throw FormatError(p.string() + ": expected two columns");
      return t;
    }
    const fs::path sub = dir / split;
    if (!fs::is_directory(sub)) throw IoError("missing " + sub.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sub)) {
      if (e.path().extension() == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const Shape shape = cfg.item_shape();
    Tensor out({files.size(), shape_size(shape)});
    for (std::size_t i = 0; i < files.size(); ++i) {
      const Tensor img = read_pgm(files[i]);
      if (img.shape() != shape) throw FormatError(files[i].string() + ": image size does not match the config");
      std::copy(img.values().begin(), img.values().end(), out.row(i).begin());
    }
    return out;
  });
}

std::vector<Measurement> load_measurements(const ExperimentConfig& cfg, const std::string& purpose) {
  const fs::path dir = latest_stage_dir(root_of(cfg), "measurements", purpose);
  return labelled(purpose, [&] {
    const fs::path table = dir / "measurements.csv", sidecar = dir / "operator.json";
    if (!fs::exists(table) || !fs::exists(sidecar)) throw IoError("missing measurements in " + dir.string());
    const Tensor ys = read_table_csv(table);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(read_text(sidecar));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(sidecar.string() + ": " + e.what());
    }
    auto ops = operators_from_sidecar(meta, sidecar.string());
    if (ops.size() != ys.rows()) throw FormatError(dir.string() + ": sidecar and table disagree on the item count");
    if (!ops.empty() && ys.cols() != ops.front().size()) throw FormatError(table.string() + ": wrong item width");
    if (!ops.empty() && ops.front().geometry() != cfg.item_shape()) {
      throw ConfigError("config: measurements in " + dir.string() + " were made for a different item shape");
    }
    std::vector<Measurement> out;
    out.reserve(ops.size());
    for (std::size_t i = 0; i < ops.size(); ++i) out.push_back({i, item(ys, i, ops[i].geometry()), std::move(ops[i])});
    return out;
  });
}

StageOutput cmd_make_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const CleanData data = generate_dataset(cfg.dataset, Rng(cfg.seed).derive(kDataStream));
  Manifest m(new_stage_dir(root_of(cfg), "data"), "make-data");
  write_split(m, cfg, kSplits[0], data.items);
  write_split(m, cfg, kSplits[1], data.pool);
  write_split(m, cfg, kSplits[2], data.reference);
  m.write(serialize_config(cfg));
  return {m.dir(), m.artifacts()};
}

StageOutput cmd_corrupt(const ExperimentConfig& cfg) {
  cfg.validate();
  const Tensor clean = load_clean_split(cfg, kSplits[0], "corruption inputs");
  const Shape shape = cfg.item_shape();
  const Rng base = Rng(cfg.seed).derive(kCorruptStream);
  Tensor ys(clean.shape());
  std::vector<MeasurementOperator> ops;
  for (std::size_t i = 0; i < clean.rows(); ++i) {
    ops.push_back(build_operator(cfg.op, shape, i));
    Rng rng = base.derive(i);
    const Tensor y = apply(ops.back(), item(clean, i, shape), rng);
    std::copy(y.values().begin(), y.values().end(), ys.row(i).begin());
  }
  Manifest m(new_stage_dir(root_of(cfg), "measurements"), "corrupt");
  m.add_input(latest_stage_dir(root_of(cfg), "data", "corruption inputs"));
  write_table_csv(m.add("measurements.csv"), ys);
  write_text(m.add("operator.json"), operator_sidecar(cfg, ops).dump(1) + "\n");
  if (cfg.dataset.is_image()) {
    for (std::size_t i = 0; i < ys.rows(); ++i) write_pgm(m.add("previews/" + item_name(i)), item(ys, i, shape));
  }
  m.write(serialize_config(cfg));
  return {m.dir(), m.artifacts()};
}

StageOutput cmd_run(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto measurements = load_measurements(cfg, "E-step inputs");
  const Tensor truth = load_clean_split(cfg, kSplits[0], "E-step inputs");
  const Tensor pool = load_clean_split(cfg, kSplits[1], "initialisation inputs");
  if (truth.rows() != measurements.size()) {
    throw FormatError("E-step inputs: measurement count does not match the clean items; rerun corrupt");
  }
  if (pool.rows() < cfg.em.n_init_clean) throw FormatError("initialisation inputs: clean pool is smaller than em.n_init_clean");
  const Tensor clean_subset = pool.slice_rows(0, cfg.em.n_init_clean);
  EmEvaluation eval{truth, std::nullopt};
  if (cfg.em.eval_samples > 0) eval.reference = load_clean_split(cfg, kSplits[2], "evaluation inputs");

  Manifest m(new_stage_dir(root_of(cfg), "run"), "run");
  m.add_input(latest_stage_dir(root_of(cfg), "measurements", "E-step inputs"));
  m.add_input(latest_stage_dir(root_of(cfg), "data", "E-step inputs"));
  const Shape shape = cfg.item_shape();
  const auto observer = [&](const EmState& s) {
    save_checkpoint(s.model, m.add("model_iter_" + std::to_string(s.k) + ".emdm"));
    const auto& rec = s.metrics_log.back();
    if (log) {
      *log << "iteration " << s.k << ": alpha " << fmt(rec.alpha_k) << ", dsm " << fmt(rec.dsm_loss) << ", psnr "
           << fmt(rec.psnr_mean) << ", sw " << fmt(rec.sw_distance) << std::endl;
    }
    if (s.k == 0) return;
    if (cfg.dataset.is_image()) {
      std::vector<std::vector<Tensor>> rows;
      for (std::size_t r = 0; r < std::min<std::size_t>(4, s.last_active.size()); ++r) {
        const std::size_t idx = s.last_active[r];
        rows.push_back({measurements[idx].y.reshaped(shape), item(s.last_samples, r * cfg.em.chains_per_y, shape),
                        item(truth, idx, shape)});
      }
      write_pgm(m.add("montage_iter_" + std::to_string(s.k) + ".pgm"), montage(rows));
    } else {
      write_table_csv(m.add("posterior_iter_" + std::to_string(s.k) + ".csv"), s.last_samples);
    }
  };
  EmConfig em = cfg.em;
  em.pmc.init_fill = cfg.init_fill.value_or(mean_value(pool));
  Rng rng = Rng(cfg.seed).derive(kRunStream);
  const EmResult result = em_run(measurements, clean_subset, make_schedule(cfg.schedule), em, rng, eval, observer);
  write_metrics_csv(m.add("metrics.csv"), result.state.metrics_log);
  save_checkpoint(result.model, m.add("model_final.emdm"));
  m.write(serialize_config(cfg));
  return {m.dir(), m.artifacts()};
}

StageOutput cmd_eval(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  cfg.validate();
  Manifest m(new_stage_dir(root_of(cfg), "eval"), "eval");
  const ScoreModel model = load_model(cfg, checkpoint, "eval inputs", m);
  const ModelScoreField field(model);
  const auto sched = make_schedule(cfg.schedule);
  const Rng base = Rng(cfg.seed).derive(kEvalStream);
  const Shape shape = cfg.item_shape();
  auto wants = [&](const std::string& metric) {
    return std::find(cfg.metrics.begin(), cfg.metrics.end(), metric) != cfg.metrics.end();
  };
  PmcConfig pmc = cfg.em.pmc;
  pmc.alpha = 1.0;
  pmc.init_fill = cfg.init_fill ? *cfg.init_fill : mean_value(load_clean_split(cfg, kSplits[1], "eval inputs"));

  std::vector<std::pair<std::string, double>> report;
  if (wants("psnr")) {
    const auto all = load_measurements(cfg, "eval inputs");
    const Tensor truth = load_clean_split(cfg, kSplits[0], "eval inputs");
    if (truth.rows() != all.size()) throw FormatError("eval inputs: measurement count does not match the clean items");
    const std::size_t n = std::min(cfg.eval.n_items, all.size());
    const std::vector<Measurement> ms(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    for (const auto& name : cfg.eval.reconstructors) {
      double acc = 0.0;
      if (name == "measurement" || name == "truth") {
        for (std::size_t i = 0; i < n; ++i) {
          const Tensor t = item(truth, i, shape);
          acc += oracles::psnr(name == "truth" ? t : ms[i].y, t);
        }
      } else if (name == "pmc") {
        const auto post = posterior_batch(field, ms, pmc, base.derive(1), 1);
        for (std::size_t i = 0; i < n; ++i) acc += oracles::psnr(post[i].reshaped(shape), item(truth, i, shape));
      } else if (name == "dps") {
        for (std::size_t i = 0; i < n; ++i) {
          Rng rng = base.derive(2).derive(i);
          const Tensor x = sample_dps(field, sched, ms[i].op, ms[i].y, cfg.dps, rng, 1);
          acc += oracles::psnr(x.reshaped(shape), item(truth, i, shape));
        }
      }
      report.emplace_back("psnr_" + name, acc / static_cast<double>(n));
    }
  }
  if (wants("sw")) {
    const Tensor reference = load_clean_split(cfg, kSplits[2], "eval inputs");
    Rng srng = base.derive(3), prng = base.derive(4);
    const Tensor samples = sample_unconditional(field, sched, cfg.eval.n_samples, srng);
    report.emplace_back("sw_generation", oracles::sliced_wasserstein(samples, reference, cfg.eval.sw_projections, prng));
  }
  if (wants("posterior_sw") && !cfg.dataset.is_image()) {
    // one benchmark measurement, compared against the brute-force posterior on a lattice
    const auto all = load_measurements(cfg, "eval inputs");
    const Measurement& bench = all.front();
    const auto grid = oracles::grid_posterior(log_prior_2d(cfg), bench.op, bench.y, oracles::GridSpec{});
    const std::size_t n = cfg.eval.posterior_chains;
    Rng grng = base.derive(5);
    const Tensor oracle_samples = grid.sample(n, grng);
    auto compare = [&](const ScoreField& prior, const std::string& suffix, std::uint64_t stream) {
      const Tensor pmc_samples = posterior_batch(prior, std::span(&bench, 1), pmc, base.derive(stream), n)[0];
      Rng drng = base.derive(stream + 1);
      const Tensor dps_samples = sample_dps(prior, sched, bench.op, bench.y, cfg.dps, drng, n);
      Rng p1 = base.derive(stream + 2), p2 = base.derive(stream + 2);
      report.emplace_back("posterior_sw_pmc" + suffix,
                          oracles::sliced_wasserstein(pmc_samples, oracle_samples, cfg.eval.sw_projections, p1));
      report.emplace_back("posterior_sw_dps" + suffix,
                          oracles::sliced_wasserstein(dps_samples, oracle_samples, cfg.eval.sw_projections, p2));
    };
    compare(field, "", 10);
    if (cfg.dataset.kind == "gmm2d") compare(oracles::GmmScoreField(gmm_prior(cfg.dataset.gmm)), "_oracle", 20);
  }

  std::string text = "metric,value\n";
  for (const auto& [name, value] : report) text += name + "," + fmt(value) + "\n";
  write_text(m.add("report.csv"), text);
  m.write(serialize_config(cfg));
  return {m.dir(), m.artifacts()};
}

StageOutput cmd_sample(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  cfg.validate();
  Manifest m(new_stage_dir(root_of(cfg), "samples"), "sample");
  const ScoreModel model = load_model(cfg, checkpoint, "sampling inputs", m);
  Rng rng = Rng(cfg.seed).derive(kSampleStream);
  const Tensor x = sample_unconditional(ModelScoreField(model), make_schedule(cfg.schedule), cfg.eval.n_samples, rng);
  if (!cfg.dataset.is_image()) {
    write_table_csv(m.add("samples.csv"), x);
  } else {
    const Shape shape = cfg.item_shape();
    std::vector<std::vector<Tensor>> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const Tensor img = item(x, i, shape);
      write_pgm(m.add("samples/" + item_name(i)), img);
      if (i < 64) {
        if (i % 8 == 0) rows.emplace_back();
        rows.back().push_back(img);
      }
    }
    // pad a ragged last row so the grid stays rectangular
    while (!rows.empty() && rows.back().size() < rows.front().size()) rows.back().push_back(Tensor(shape, 1.0));
    if (!rows.empty()) write_pgm(m.add("montage.pgm"), montage(rows));
  }
  m.write(serialize_config(cfg));
  return {m.dir(), m.artifacts()};
}

}  // namespace emdiff::exp
