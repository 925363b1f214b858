// Command-line front end for the experiment stages.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "emdiff/errors.hpp"
#include "emdiff/exp/commands.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kDivergence = 4, kOther = 1 };

}  // namespace

int main(int argc, char** argv) {
  using namespace emdiff;
  CLI::App app{"EM training of diffusion priors from corrupted observations"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> checkpoint;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out_dir, "overrides the config output directory");
  };
  auto* make_data = app.add_subcommand("make-data", "generate the clean dataset splits");
  auto* corrupt = app.add_subcommand("corrupt", "apply the measurement operator to the clean items");
  auto* run = app.add_subcommand("run", "pretrain, then alternate posterior sampling and score refits");
  auto* eval = app.add_subcommand("eval", "reconstruction and generation metrics for a checkpoint");
  auto* sample = app.add_subcommand("sample", "dump unconditional samples from a checkpoint");
  for (auto* sub : {make_data, corrupt, run, eval, sample}) common(sub);
  for (auto* sub : {eval, sample}) sub->add_option("--checkpoint", checkpoint, "defaults to the latest run's final model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    exp::ExperimentConfig cfg = exp::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.output_dir = *out_dir;
    cfg.validate();

    std::optional<std::filesystem::path> ckpt;
    if (checkpoint) ckpt = *checkpoint;
    exp::StageOutput out;
    if (make_data->parsed()) out = exp::cmd_make_data(cfg);
    if (corrupt->parsed()) out = exp::cmd_corrupt(cfg);
    if (run->parsed()) out = exp::cmd_run(cfg, &std::cerr);
    if (eval->parsed()) out = exp::cmd_eval(cfg, ckpt);
    if (sample->parsed()) out = exp::cmd_sample(cfg, ckpt);
    std::cout << out.dir.string() << "\n";
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDivergence;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
