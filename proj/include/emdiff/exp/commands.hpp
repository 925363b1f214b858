#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "emdiff/exp/config.hpp"

namespace emdiff::exp {

struct StageOutput {
  std::filesystem::path dir;
  std::vector<std::string> artifacts;  // relative to dir, as listed in its manifest
};

/// Each stage writes a fresh, version-suffixed directory under cfg.output_dir
/// and reads the newest version of the stages it depends on.
StageOutput cmd_make_data(const ExperimentConfig& cfg);
StageOutput cmd_corrupt(const ExperimentConfig& cfg);
StageOutput cmd_run(const ExperimentConfig& cfg, std::ostream* log = nullptr);
StageOutput cmd_eval(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
StageOutput cmd_sample(const ExperimentConfig& cfg,
                       const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Loaders shared by the stages.
Tensor load_clean_split(const ExperimentConfig& cfg, const std::string& split, const std::string& purpose);
std::vector<Measurement> load_measurements(const ExperimentConfig& cfg, const std::string& purpose);

}  // namespace emdiff::exp
