#pragma once

// Binary checkpoint container. Layout, all integers little-endian:
//
//   "MCGNNCKP"            8-byte magic
//   u32 version
//   u64 manifest fingerprint
//   u64 hidden, steps, classes
//   classes               u64 count, then strings
//   cues                  u64 count, then (string name, u64 dim, cap_train, cap_eval)
//   meta                  u64 epochs_completed, u64 seed, string creator
//   tensors               u64 count, then (u64 rows, u64 cols, f64[rows*cols])
//   u8 has_optimizer      then u64 step, f64 lr, beta1, beta2, eps,
//                         first-moment tensors, second-moment tensors
//   u64 FNV-1a checksum of every preceding byte
//
// Strings are u64 length + raw bytes. Doubles are stored as their IEEE-754
// bit patterns, so a load reproduces every value exactly.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "mcgnn/data.hpp"
#include "mcgnn/error.hpp"
#include "mcgnn/model.hpp"
#include "mcgnn/training.hpp"

namespace mcgnn {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'C', 'G', 'N', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t epochs_completed = 0;
  std::uint64_t seed = 0;
  std::string creator = "mcgnn";

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelParams params;
  std::vector<std::string> classes;
  std::optional<AdamState> optimizer;
  CheckpointMeta meta;

  std::uint64_t fingerprint() const { return manifest_fingerprint(classes, params.cues); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Throws DataError unless `m` describes the same classes and cues.
inline void require_matching_manifest(const Checkpoint& ck, const DatasetManifest& m) {
  const auto want = ck.fingerprint();
  const auto got = manifest_fingerprint(m);
  if (want != got) {
    throw DataError("checkpoint fingerprint " + std::to_string(want) +
                    " does not match dataset manifest fingerprint " + std::to_string(got));
  }
}

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double v : m.values()) f64(v);
  }
  void tensors(const ParamTensors& t) {
    const auto list = mcgnn::tensors(t);
    u64(list.size());
    for (const Matrix* m : list) matrix(*m);
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& b) : b_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Matrix matrix(const Matrix& expected_shape, const std::string& what) {
    const auto rows = u64();
    const auto cols = u64();
    if (rows != expected_shape.rows() || cols != expected_shape.cols()) {
      throw DataError("checkpoint tensor " + what + " has shape " + shape_str(rows, cols) +
                      ", expected " + expected_shape.shape());
    }
    need(rows * cols * 8);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = f64();
    return m;
  }
  void tensors(ParamTensors& t, const std::vector<std::string>& names) {
    auto list = mcgnn::tensors(t);
    const auto count = u64();
    if (count != list.size()) {
      throw DataError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                      std::to_string(list.size()));
    }
    for (std::size_t i = 0; i < list.size(); ++i) *list[i] = matrix(*list[i], names[i]);
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u64(ck.fingerprint());
  w.u64(ck.params.hyper.hidden);
  w.u64(ck.params.hyper.steps);
  w.u64(ck.params.hyper.classes);
  w.u64(ck.classes.size());
  for (const auto& c : ck.classes) w.str(c);
  w.u64(ck.params.cues.size());
  for (const auto& c : ck.params.cues) {
    w.str(c.name);
    w.u64(c.feature_dim);
    w.u64(c.cap_train);
    w.u64(c.cap_eval);
  }
  w.u64(ck.meta.epochs_completed);
  w.u64(ck.meta.seed);
  w.str(ck.meta.creator);
  w.tensors(ck.params.tensors);
  w.u8(ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    w.u64(o.step);
    w.f64(o.lr);
    w.f64(o.beta1);
    w.f64(o.beta2);
    w.f64(o.eps);
    w.tensors(o.first);
    w.tensors(o.second);
  }
  w.u64(detail::fnv1a(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 12 ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored != detail::fnv1a(bytes.data(), body)) throw DataError("checkpoint checksum mismatch");

  detail::ByteReader r(bytes);
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto fingerprint = r.u64();
  Checkpoint ck;
  ck.params.hyper.hidden = r.u64();
  ck.params.hyper.steps = r.u64();
  ck.params.hyper.classes = r.u64();
  const auto n_classes = r.u64();
  if (n_classes != ck.params.hyper.classes) throw DataError("checkpoint class list length mismatch");
  for (std::uint64_t i = 0; i < n_classes; ++i) ck.classes.push_back(r.str());
  const auto n_cues = r.u64();
  for (std::uint64_t i = 0; i < n_cues; ++i) {
    CueSpec c;
    c.name = r.str();
    c.feature_dim = r.u64();
    c.cap_train = r.u64();
    c.cap_eval = r.u64();
    ck.params.cues.push_back(std::move(c));
  }
  validate_hyper(ck.params.hyper);
  validate_cues(ck.params.cues);
  if (fingerprint != ck.fingerprint()) throw DataError("checkpoint fingerprint is inconsistent");
  ck.meta.epochs_completed = r.u64();
  ck.meta.seed = r.u64();
  ck.meta.creator = r.str();
  const auto names = tensor_names(ck.params.cues);
  ck.params.tensors = zero_tensors(ck.params.hyper, ck.params.cues);
  r.tensors(ck.params.tensors, names);
  if (r.u8() != 0) {
    AdamState o;
    o.step = r.u64();
    o.lr = r.f64();
    o.beta1 = r.f64();
    o.beta2 = r.f64();
    o.eps = r.f64();
    o.first = zero_tensors(ck.params.hyper, ck.params.cues);
    o.second = zero_tensors(ck.params.hyper, ck.params.cues);
    r.tensors(o.first, names);
    r.tensors(o.second, names);
    ck.optimizer = std::move(o);
  }
  if (r.pos() != body) throw DataError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mcgnn
