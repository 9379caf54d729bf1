/* Copyright 2026 The PTM-ST Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ptmst/data.hpp"
#include "ptmst/errors.hpp"
#include "ptmst/matrix.hpp"
#include "ptmst/param_vector.hpp"

// PTMS container: magic "PTMS", u32 version, u8 record kind, then the
// kind-specific payload. All integers and reals are little-endian. Real
// arrays are (u32 rank, u32 dims[rank], f64 values row-major); text is
// (u32 length, UTF-8 bytes).

namespace ptmst {

static_assert(std::endian::native == std::endian::little, "PTMS codec assumes a little-endian host");

inline constexpr char kMagic[4] = {'P', 'T', 'M', 'S'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class RecordKind : std::uint8_t {
  dataset = 1,
  checkpoint = 2,
  trajectory = 3,
  synthetic = 4,
  params = 5,
};

class Writer {
 public:
  explicit Writer(RecordKind kind) {
    buf_.append(kMagic, 4);
    u32(kFormatVersion);
    u8(static_cast<std::uint8_t>(kind));
  }

  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) {
    if (!std::isfinite(v)) throw InvalidArgument("refusing to persist a non-finite real");
    raw(&v, 8);
  }
  void text(const std::string& s) {
    u32(checked_u32(s.size()));
    buf_.append(s);
  }
  void array(std::span<const std::size_t> dims, std::span<const double> values) {
    u32(checked_u32(dims.size()));
    for (auto d : dims) u32(checked_u32(d));
    for (double v : values) f64(v);
  }
  void matrix(const Matrix<>& m) {
    const std::size_t dims[2] = {m.rows(), m.cols()};
    array(dims, m.values());
  }
  void indices(const std::vector<std::uint32_t>& v) {
    u32(checked_u32(v.size()));
    for (auto x : v) u32(x);
  }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  static std::uint32_t checked_u32(std::size_t n) {
    if (n > 0xffffffffULL) throw InvalidArgument("value does not fit in u32");
    return static_cast<std::uint32_t>(n);
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }

  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, RecordKind expected) : buf_(std::move(bytes)) {
    if (buf_.size() < 4 || std::memcmp(buf_.data(), kMagic, 4) != 0) throw FormatError("bad magic, not a PTMS file", 0);
    pos_ = 4;
    const auto version = u32();
    if (version != kFormatVersion)
      throw FormatError("unsupported PTMS version " + std::to_string(version), 4);
    const auto kind = u8();
    if (kind != static_cast<std::uint8_t>(expected))
      throw FormatError("record kind " + std::to_string(kind) + ", expected " +
                            std::to_string(static_cast<int>(expected)),
                        8);
  }

  std::size_t offset() const noexcept { return pos_; }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    take(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    take(&v, 8);
    return v;
  }
  double f64() {
    const auto at = pos_;
    double v;
    take(&v, 8);
    if (!std::isfinite(v)) throw FormatError("non-finite real", at);
    return v;
  }
  std::string text() {
    const auto n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  /// Reads a real array, returning its dims and values.
  std::vector<double> array(std::vector<std::size_t>& dims) {
    const auto rank = u32();
    dims.assign(rank, 0);
    std::size_t count = 1;
    for (auto& d : dims) {
      d = u32();
      count *= d;
    }
    need(count * 8);
    std::vector<double> v(count);
    for (auto& x : v) x = f64();
    return v;
  }
  Matrix<> matrix() {
    const auto at = pos_;
    std::vector<std::size_t> dims;
    auto v = array(dims);
    if (dims.size() != 2) throw FormatError("expected a rank-2 array", at);
    return Matrix<>(dims[0], dims[1], std::move(v));
  }
  std::vector<std::uint32_t> indices() {
    const auto n = u32();
    need(std::size_t{n} * 4);
    std::vector<std::uint32_t> v(n);
    for (auto& x : v) x = u32();
    return v;
  }

  void finish() const {
    if (pos_ != buf_.size()) throw FormatError("trailing bytes after record", pos_);
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, pos_); }

 private:
  void need(std::size_t n) const {
    if (n > buf_.size() - pos_) throw FormatError("truncated record", pos_);
  }
  void take(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Payload codecs

inline void put_params(Writer& w, const ParamVector& p) {
  w.u32(static_cast<std::uint32_t>(p.num_layers()));
  for (std::size_t i = 0; i < p.num_layers(); ++i) {
    w.text(p.info(i).name);
    w.array(p.info(i).shape, p.layer(i));
  }
}

inline ParamVector get_params(Reader& r) {
  ParamVector p;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    auto name = r.text();
    std::vector<std::size_t> dims;
    auto values = r.array(dims);
    try {
      p.add_layer(name, dims, values);
    } catch (const InvalidArgument& e) {
      throw FormatError(e.what(), at);
    }
  }
  return p;
}

inline void put_dataset(Writer& w, const PairDataset& d) {
  d.validate();
  w.u8(static_cast<std::uint8_t>(d.split));
  w.matrix(d.images);
  w.matrix(d.texts);
  w.indices(d.classes);
}

inline PairDataset get_dataset(Reader& r) {
  PairDataset d;
  const auto at = r.offset();
  const auto split = r.u8();
  if (split > 2) throw FormatError("unknown split tag", at);
  d.split = static_cast<Split>(split);
  d.images = r.matrix();
  d.texts = r.matrix();
  const auto at_cls = r.offset();
  d.classes = r.indices();
  try {
    d.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what(), at_cls);
  }
  return d;
}

inline void put_synthetic(Writer& w, const SyntheticDataset& s) {
  s.validate();
  w.u32(s.phase);
  w.f64(s.inner_lr_img);
  w.f64(s.inner_lr_txt);
  w.matrix(s.images);
  w.matrix(s.texts);
  w.u8(static_cast<std::uint8_t>(s.sim.mode));
  if (s.sim.mode == SimType::full) {
    w.matrix(s.sim.dense);
  } else {
    w.f64(s.sim.omega);
    w.f64(s.sim.alpha);
    w.u32(static_cast<std::uint32_t>(s.sim.rank));
    w.matrix(s.sim.left);
    w.matrix(s.sim.right);
  }
  w.indices(s.source_rows);
}

inline SyntheticDataset get_synthetic(Reader& r) {
  SyntheticDataset s;
  s.phase = r.u32();
  s.inner_lr_img = r.f64();
  s.inner_lr_txt = r.f64();
  s.images = r.matrix();
  s.texts = r.matrix();
  const auto at = r.offset();
  const auto mode = r.u8();
  if (mode > 1) throw FormatError("unknown similarity mode", at);
  s.sim.mode = static_cast<SimType>(mode);
  if (s.sim.mode == SimType::full) {
    s.sim.dense = r.matrix();
  } else {
    s.sim.omega = r.f64();
    s.sim.alpha = r.f64();
    s.sim.rank = r.u32();
    s.sim.left = r.matrix();
    s.sim.right = r.matrix();
  }
  s.source_rows = r.indices();
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what(), r.offset());
  }
  return s;
}

// ---------------------------------------------------------------------------
// File-level entry points

inline std::string encode_dataset(const PairDataset& d) {
  Writer w(RecordKind::dataset);
  put_dataset(w, d);
  return w.bytes();
}

inline PairDataset decode_dataset(std::string bytes) {
  Reader r(std::move(bytes), RecordKind::dataset);
  auto d = get_dataset(r);
  r.finish();
  return d;
}

inline void save_dataset(const std::filesystem::path& path, const PairDataset& d) { write_file(path, encode_dataset(d)); }
inline PairDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

inline std::string encode_checkpoint(const Checkpoint& c) {
  if (!c.params.finite()) throw InvalidArgument("checkpoint holds non-finite values");
  Writer w(RecordKind::checkpoint);
  w.u32(static_cast<std::uint32_t>(c.epoch));
  put_params(w, c.params);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes) {
  Reader r(std::move(bytes), RecordKind::checkpoint);
  Checkpoint c;
  c.epoch = r.u32();
  c.params = get_params(r);
  r.finish();
  return c;
}

inline std::string encode_synthetic(const SyntheticDataset& s) {
  Writer w(RecordKind::synthetic);
  put_synthetic(w, s);
  return w.bytes();
}

inline SyntheticDataset decode_synthetic(std::string bytes) {
  Reader r(std::move(bytes), RecordKind::synthetic);
  auto s = get_synthetic(r);
  r.finish();
  return s;
}

inline void save_synthetic(const std::filesystem::path& path, const SyntheticDataset& s) {
  write_file(path, encode_synthetic(s));
}
inline SyntheticDataset load_synthetic(const std::filesystem::path& path) { return decode_synthetic(read_file(path)); }

inline std::string encode_params(const ParamVector& p) {
  if (!p.finite()) throw InvalidArgument("parameters hold non-finite values");
  Writer w(RecordKind::params);
  put_params(w, p);
  return w.bytes();
}

inline ParamVector decode_params(std::string bytes) {
  Reader r(std::move(bytes), RecordKind::params);
  auto p = get_params(r);
  r.finish();
  return p;
}

}  // namespace ptmst
