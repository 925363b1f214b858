#include "emdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "emdiff/errors.hpp"

namespace emdiff {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'D', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
  }

  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ScoreModel& model) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  const auto& dims = model.layer_dims();
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto w : dims) put_u32(out, static_cast<std::uint32_t>(w));
  for (const auto& p : model.params()) {
    for (double v : p.span()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

ScoreModel decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  Reader r(bytes);
  r.skip(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  if (count < 2 || count > 64) throw FormatError("checkpoint: implausible layer count");
  std::vector<std::size_t> dims(count);
  for (auto& w : dims) {
    w = r.u32();
    if (w == 0) throw FormatError("checkpoint: zero layer width");
  }
  std::vector<Tensor> params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    for (Shape s : {Shape{dims[l], dims[l + 1]}, Shape{dims[l + 1]}}) {
      Tensor t(s);
      for (auto& v : t.span()) v = static_cast<double>(std::bit_cast<float>(r.u32()));
      params.push_back(std::move(t));
    }
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  try {
    return ScoreModel(std::move(dims), std::move(params));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ScoreModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

ScoreModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace emdiff
