// Binary checkpoint format:
//
//   "CDNET1\0"                      7-byte magic
//   u16   format version (1)
//   u32   config length, then canonical key=value config text
//   repeated until EOF:
//     u32 name length, UTF-8 name
//     u8  rank, u32 dims[rank]
//     f64 values[prod(dims)]
//
// All integers and floats are little-endian.
#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "conflictnet/model.hpp"

namespace conflictnet {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, bad_config, unknown_parameter, missing_parameter, shape_mismatch };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::array<char, 7> kCheckpointMagic{'C', 'D', 'N', 'E', 'T', '1', '\0'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(Model& m) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  const std::string cfg = m.config().to_text();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto& ref : m.parameters()) {
    const Tensor& t = ref.param->value;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.name.size()));
    out += ref.name;
    out.push_back(static_cast<char>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Model deserialize_model(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  detail::ByteReader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw CheckpointError(Kind::bad_magic, "not a checkpoint: bad magic bytes");
  in.take(kCheckpointMagic.size(), "magic");
  const auto version = in.le<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::bad_version, "unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = in.le<std::uint32_t>("config length");
  const auto cfg_text = in.take(cfg_len, "config");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(cfg_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::bad_config, std::string("checkpoint config invalid: ") + e.what());
  }
  Rng rng(0);
  Model m = Model::build(cfg, rng);
  auto params = m.parameters();
  std::set<std::string> seen;
  while (!in.done()) {
    const auto name_len = in.le<std::uint32_t>("parameter name length");
    const std::string name(in.take(name_len, "parameter name"));
    const auto rank = in.le<std::uint8_t>("parameter rank");
    Shape shape(rank);
    for (auto& d : shape) d = in.le<std::uint32_t>("parameter dims");
    auto it = std::find_if(params.begin(), params.end(), [&](const ParamRef& r) { return r.name == name; });
    if (it == params.end()) throw CheckpointError(Kind::unknown_parameter, "checkpoint has unknown parameter '" + name + "'");
    Tensor& dst = it->param->value;
    if (shape != dst.shape())
      throw CheckpointError(Kind::shape_mismatch, "parameter '" + name + "' has shape " + to_string(shape) +
                                                      " in checkpoint but " + to_string(dst.shape()) + " in model");
    for (auto& v : dst.storage()) v = std::bit_cast<double>(in.le<std::uint64_t>("parameter values"));
    seen.insert(name);
  }
  for (const auto& r : params)
    if (!seen.count(r.name))
      throw CheckpointError(Kind::missing_parameter, "checkpoint is missing parameter '" + r.name + "'");
  return m;
}

inline void save_model(Model& m, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace conflictnet
