#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "emdiff/tensor.hpp"

namespace emdiff::exp {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Rows of `x` with a header line; values printed with round-trip precision.
/// Two-column tables get the header "x,y", wider ones "v0,v1,...".
void write_table_csv(const fs::path& path, const Tensor& x);
Tensor read_table_csv(const fs::path& path);

/// Binary 8-bit greymap. Values in [0, 1] map to round(255 v); anything outside is clipped.
void write_pgm(const fs::path& path, const Tensor& image);
Tensor read_pgm(const fs::path& path);

/// Creates root/stage, or root/stage_v2, root/stage_v3, ... if earlier versions exist.
fs::path new_stage_dir(const fs::path& root, const std::string& stage);
/// The highest existing version of root/stage; IoError labelled with `purpose` when there is none.
fs::path latest_stage_dir(const fs::path& root, const std::string& stage, const std::string& purpose);

/// Records every artifact a stage wrote, relative to its directory.
class Manifest {
 public:
  Manifest(fs::path dir, std::string stage) : dir_(std::move(dir)), stage_(std::move(stage)) {}

  const fs::path& dir() const noexcept { return dir_; }
  fs::path path(const std::string& name) const { return dir_ / name; }
  /// Registers `name` and returns its full path.
  fs::path add(const std::string& name);
  void add_input(const fs::path& p) { inputs_.push_back(p.generic_string()); }
  const std::vector<std::string>& artifacts() const noexcept { return artifacts_; }
  /// Writes manifest.json listing config, inputs and artifacts.
  void write(const std::string& config_json) const;

 private:
  fs::path dir_;
  std::string stage_;
  std::vector<std::string> artifacts_;
  std::vector<std::string> inputs_;
};

/// Side-by-side strips of equally sized images with one-pixel separators; rows stack downward.
Tensor montage(const std::vector<std::vector<Tensor>>& rows, double separator = 1.0);

}  // namespace emdiff::exp
