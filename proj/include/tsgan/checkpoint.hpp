#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tsgan/model.hpp"

namespace tsgan {

// Layout (all integers and floats little-endian):
//   "SGD1"  u16 version
//   u32 input_channels, input_len, latent_dim, base_channels, n_down; f32 leaky_slope
//   u8 pipeline_mode; u32 subsample_len, feature_window
//   u32 channels; f32 mean[channels]; f32 stddev[channels]
//   u32 tensor_count; per tensor: u16 name_len, name, u8 rank, u32 dims[rank], f32 values[]
// Optimizer state is not stored.

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'D', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint64_t v) {
    if (v > 0xFFFFFFFFull) throw FormatError("checkpoint: value " + std::to_string(v) + " does not fit in u32");
    put(v, 4);
  }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void raw(std::string_view s) { bytes_.append(s); }
  std::string take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ModelState& state) {
  detail::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  const auto& a = state.arch;
  w.u32(a.input_channels);
  w.u32(a.input_len);
  w.u32(a.latent_dim);
  w.u32(a.base_channels);
  w.u32(a.n_down);
  w.f32(a.leaky_slope);
  w.u8(state.pipeline.mode == PipelineMode::raw ? 0 : 1);
  w.u32(state.pipeline.subsample_len);
  w.u32(state.pipeline.feature_window);
  w.u32(state.standardizer.channels());
  for (float v : state.standardizer.mean) w.f32(v);
  for (float v : state.standardizer.stddev) w.f32(v);

  const NamedTensors tensors = state.named_tensors();
  w.u32(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(d);
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

inline ModelState deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4))
    throw FormatError("not a checkpoint: bad magic bytes");
  r.raw(4);
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");

  Architecture arch;
  arch.input_channels = r.u32();
  arch.input_len = r.u32();
  arch.latent_dim = r.u32();
  arch.base_channels = r.u32();
  arch.n_down = r.u32();
  arch.leaky_slope = r.f32();
  Pipeline pipeline;
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError("checkpoint: unknown pipeline mode " + std::to_string(mode));
  pipeline.mode = mode == 0 ? PipelineMode::raw : PipelineMode::features;
  pipeline.subsample_len = r.u32();
  pipeline.feature_window = r.u32();

  if (arch.n_down == 0 || arch.n_down > 16 || arch.base_channels == 0 || arch.base_channels > (1u << 16) ||
      arch.input_channels == 0 || arch.input_len < 2)
    throw FormatError("checkpoint: implausible architecture header");
  if (stored_float_count(arch) * 4.0 > static_cast<double>(bytes.size()))
    throw FormatError("checkpoint truncated: header describes more parameters than the file holds");

  ModelState state;
  try {
    state = ModelState::create(arch, pipeline, 0);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: inconsistent architecture: ") + e.what());
  }
  if (!(state.arch == arch)) throw FormatError("checkpoint: architecture does not match its pipeline");

  const std::uint32_t channels = r.u32();
  if (channels != 0 && channels != arch.input_channels)
    throw FormatError("checkpoint: standardizer has " + std::to_string(channels) + " channels");
  state.standardizer.mean.resize(channels);
  state.standardizer.stddev.resize(channels);
  for (auto& v : state.standardizer.mean) v = r.f32();
  for (auto& v : state.standardizer.stddev) v = r.f32();

  NamedTensors tensors = state.named_tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw FormatError("checkpoint: expected " + std::to_string(tensors.size()) + " tensors, found " + std::to_string(count));
  for (auto& [name, t] : tensors) {
    const std::uint16_t name_len = r.u16();
    const std::string_view stored = r.raw(name_len);
    if (stored != name) throw FormatError("checkpoint: expected tensor '" + name + "', found '" + std::string(stored) + "'");
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != t.shape())
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(t.shape()));
    for (float& v : t.data()) v = r.f32();
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after last tensor");
  return state;
}

inline void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// 64-bit FNV-1a, used as a content digest for checkpoints.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tsgan
