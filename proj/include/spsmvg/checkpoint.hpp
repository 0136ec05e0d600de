#pragma once

// Binary checkpoints. Layout (all integers and floats little-endian):
//
//   "SPSMVG" u8 version=1
//   view config : u32 n, n x u8 kind, u32 color_bins, hue_bins, orient_bins, deep_dim, common_dim
//   hyper       : u32 views, common_dim, gcn_hidden, reduction, fc1, fc2; u8 pooling; f64 lambda
//   train echo  : f64 lr0, weight_decay, decay_factor; u32 decay_every, epochs, batch_size; u64 seed
//   progress    : u32 epoch (completed epochs), u64 rng_state (shuffle seed of the next epoch)
//   tensors     : u32 count, then per tensor u16 name_len, name, u32 rows, u32 cols,
//                 u32 value_count, value_count x f32
//
// Loading parses into a fresh object and only returns on full success.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/image.hpp"
#include "spsmvg/model.hpp"
#include "spsmvg/training.hpp"

namespace spsmvg {

inline constexpr char checkpoint_magic[6] = {'S', 'P', 'S', 'M', 'V', 'G'};
inline constexpr std::uint8_t checkpoint_version = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint32_t epoch = 0;
  std::uint64_t rng_state = 0;
  ModelParams params;
};

namespace detail {

class ByteWriter {
public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint64_t v) {
    if (v > UINT32_MAX)
      throw CheckpointError("value does not fit the u32 checkpoint field");
    put(v, 4);
  }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const void *p, std::size_t n) {
    auto c = static_cast<const std::uint8_t *>(p);
    bytes.insert(bytes.end(), c, c + n);
  }

  std::vector<std::uint8_t> bytes;

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i)
      bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class ByteReader {
public:
  ByteReader(const std::vector<std::uint8_t> &b, std::string name) : bytes_(b), name_(std::move(name)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string &why) const {
    throw CheckpointError(name_ + ": " + why + " (at byte " + std::to_string(pos_) + ")");
  }

private:
  void need(std::size_t n) const {
    if (remaining() < n)
      fail("truncated checkpoint");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::vector<std::uint8_t> &bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint &ck) {
  detail::ByteWriter w;
  w.raw(checkpoint_magic, sizeof(checkpoint_magic));
  w.u8(checkpoint_version);

  const auto &vc = ck.model.views;
  w.u32(vc.views.size());
  for (auto k : vc.views)
    w.u8(static_cast<std::uint8_t>(k));
  w.u32(vc.color_bins);
  w.u32(vc.hue_bins);
  w.u32(vc.orient_bins);
  w.u32(vc.deep_dim);
  w.u32(vc.common_dim);

  const auto &h = ck.model.hyper;
  w.u32(h.views);
  w.u32(h.common_dim);
  w.u32(h.gcn_hidden);
  w.u32(h.reduction);
  w.u32(h.fc1);
  w.u32(h.fc2);
  w.u8(static_cast<std::uint8_t>(h.pooling));
  w.f64(ck.model.lambda);

  w.f64(ck.train.lr0);
  w.f64(ck.train.weight_decay);
  w.f64(ck.train.decay_factor);
  w.u32(ck.train.decay_every);
  w.u32(ck.train.epochs);
  w.u32(ck.train.batch_size);
  w.u64(ck.train.seed);

  w.u32(ck.epoch);
  w.u64(ck.rng_state);

  auto tensors = const_cast<ModelParams &>(ck.params).named_tensors();
  w.u32(tensors.size());
  for (const auto &nt : tensors) {
    w.u16(static_cast<std::uint16_t>(nt.name.size()));
    w.raw(nt.name.data(), nt.name.size());
    const Matrix &v = nt.tensor->value;
    w.u32(v.rows());
    w.u32(v.cols());
    w.u32(v.size());
    for (double x : v.data())
      w.f32(static_cast<float>(x));
  }
  return w.bytes;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes, const std::string &name = "<checkpoint>") {
  detail::ByteReader r(bytes, name);
  if (r.str(sizeof(checkpoint_magic)) != std::string(checkpoint_magic, sizeof(checkpoint_magic)))
    r.fail("bad magic");
  if (const auto version = r.u8(); version != checkpoint_version)
    r.fail("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  auto &vc = ck.model.views;
  const auto nviews = r.u32();
  if (nviews > 4)
    r.fail("implausible view count");
  vc.views.clear();
  for (std::uint32_t i = 0; i < nviews; ++i) {
    const auto k = r.u8();
    if (k > 3)
      r.fail("unknown view kind");
    vc.views.push_back(static_cast<ViewKind>(k));
  }
  vc.color_bins = r.u32();
  vc.hue_bins = r.u32();
  vc.orient_bins = r.u32();
  vc.deep_dim = r.u32();
  vc.common_dim = r.u32();

  auto &h = ck.model.hyper;
  h.views = r.u32();
  h.common_dim = r.u32();
  h.gcn_hidden = r.u32();
  h.reduction = r.u32();
  h.fc1 = r.u32();
  h.fc2 = r.u32();
  const auto pooling = r.u8();
  if (pooling > 3)
    r.fail("unknown pooling mode");
  h.pooling = static_cast<PoolingMode>(pooling);
  ck.model.lambda = r.f64();

  ck.train.lr0 = r.f64();
  ck.train.weight_decay = r.f64();
  ck.train.decay_factor = r.f64();
  ck.train.decay_every = r.u32();
  ck.train.epochs = r.u32();
  ck.train.batch_size = r.u32();
  ck.train.seed = r.u64();

  ck.epoch = r.u32();
  ck.rng_state = r.u64();

  try {
    ck.model.validate();
  } catch (const ConfigError &e) {
    r.fail(std::string("invalid model header: ") + e.what());
  }
  ck.params = ModelParams(ck.model);
  auto tensors = ck.params.named_tensors();
  if (r.u32() != tensors.size())
    r.fail("tensor count does not match the model header");
  for (auto &nt : tensors) {
    const auto name_len = r.u16();
    const auto tname = r.str(name_len);
    if (tname != nt.name)
      r.fail("expected tensor '" + nt.name + "', found '" + tname + "'");
    const auto rows = r.u32();
    const auto cols = r.u32();
    const auto count = r.u32();
    Matrix &v = nt.tensor->value;
    if (rows != v.rows() || cols != v.cols())
      r.fail("shape header of '" + nt.name + "' is " + Matrix::shape_string(rows, cols) + ", model expects " +
             v.shape());
    if (count != static_cast<std::uint64_t>(rows) * cols)
      r.fail("length field of '" + nt.name + "' disagrees with its shape");
    if (r.remaining() < static_cast<std::size_t>(count) * 4)
      r.fail("truncated tensor '" + nt.name + "'");
    for (auto &x : v.data()) {
      x = static_cast<double>(r.f32());
      if (!std::isfinite(x))
        r.fail("non-finite value in '" + nt.name + "'");
    }
  }
  if (r.remaining() != 0)
    r.fail("trailing bytes after last tensor");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck) {
  auto tmp = path;
  tmp += ".tmp";
  detail::write_file_bytes(tmp, encode_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = detail::read_file_bytes(path);
  } catch (const IngestionError &e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes, path.string());
}

/// Loads a checkpoint that must match an expected architecture.
inline Checkpoint load_checkpoint(const std::filesystem::path &path, const ModelConfig &expected) {
  auto ck = load_checkpoint(path);
  if (!(ck.model.hyper == expected.hyper) || ck.model.views.views != expected.views.views ||
      ck.model.views.common_dim != expected.views.common_dim || ck.model.views.deep_dim != expected.views.deep_dim ||
      ck.model.views.color_bins != expected.views.color_bins || ck.model.views.hue_bins != expected.views.hue_bins ||
      ck.model.views.orient_bins != expected.views.orient_bins)
    throw ConfigError(path.string() + ": checkpoint architecture does not match the requested configuration");
  return ck;
}

} // namespace spsmvg
