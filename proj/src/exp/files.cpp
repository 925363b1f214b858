#include "emdiff/exp/files.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "emdiff/errors.hpp"
#include "json.hpp"

namespace emdiff::exp {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_table_csv(const fs::path& path, const Tensor& x) {
  const std::size_t d = x.cols();
  std::string text;
  if (d == 2) {
    text = "x,y\n";
  } else {
    for (std::size_t j = 0; j < d; ++j) text += (j ? ",v" : "v") + std::to_string(j);
    text += "\n";
  }
  char buf[32];
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", r[j]);
      if (j) text += ',';
      text += buf;
    }
    text += '\n';
  }
  write_text(path, text);
}

Tensor read_table_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty table");
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t cols = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char* stop = nullptr;
      const double v = std::strtod(cell.c_str(), &stop);
      if (cell.empty() || stop != cell.c_str() + cell.size()) {
        throw FormatError(path.string() + ": bad number '" + cell + "' on row " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++cols;
    }
    if (cols != d) throw FormatError(path.string() + ": row " + std::to_string(rows + 1) + " has the wrong width");
    ++rows;
  }
  return Tensor({rows, d}, std::move(values));
}

void write_pgm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("write_pgm: image must be 2-D");
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::string text = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  text.reserve(text.size() + h * w);
  for (double v : image.values()) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    text.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_text(path, text);
}

Tensor read_pgm(const fs::path& path) {
  const std::string data = read_text(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (maxval == 0 || maxval > 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace before the raster
  if (data.size() - std::min(pos, data.size()) != w * h) throw FormatError(path.string() + ": raster size mismatch");
  Tensor img({h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    img[i] = static_cast<double>(static_cast<unsigned char>(data[pos + i])) / static_cast<double>(maxval);
  }
  return img;
}

namespace {

fs::path versioned(const fs::path& root, const std::string& stage, std::size_t v) {
  return root / (v == 1 ? stage : stage + "_v" + std::to_string(v));
}

}  // namespace

fs::path new_stage_dir(const fs::path& root, const std::string& stage) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  for (std::size_t v = 1;; ++v) {
    const fs::path p = versioned(root, stage, v);
    if (fs::create_directory(p, ec)) return p;
    if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
  }
}

fs::path latest_stage_dir(const fs::path& root, const std::string& stage, const std::string& purpose) {
  fs::path found;
  for (std::size_t v = 1; fs::is_directory(versioned(root, stage, v)); ++v) found = versioned(root, stage, v);
  if (found.empty()) throw IoError(purpose + ": no '" + stage + "' output under " + root.string());
  return found;
}

fs::path Manifest::add(const std::string& name) {
  artifacts_.push_back(name);
  const fs::path p = dir_ / name;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void Manifest::write(const std::string& config_json) const {
  nlohmann::json j;
  j["stage"] = stage_;
  j["directory"] = dir_.filename().generic_string();
  j["config"] = nlohmann::json::parse(config_json);
  j["inputs"] = inputs_;
  j["artifacts"] = artifacts_;
  write_text(dir_ / "manifest.json", j.dump(2) + "\n");
}

Tensor montage(const std::vector<std::vector<Tensor>>& rows, double separator) {
  if (rows.empty() || rows.front().empty()) throw InvalidArgument("montage: nothing to lay out");
  const std::size_t h = rows.front().front().dim(0), w = rows.front().front().dim(1);
  const std::size_t cols = rows.front().size();
  const std::size_t H = rows.size() * (h + 1) - 1, W = cols * (w + 1) - 1;
  Tensor out({H, W}, separator);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ShapeError("montage: ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      const Tensor& img = rows[r][c];
      if (img.shape() != Shape{h, w}) throw ShapeError("montage: images differ in size");
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(r * (h + 1) + i, c * (w + 1) + j) = img.at(i, j);
    }
  }
  return out;
}

}  // namespace emdiff::exp
