/* Copyright 2026 The Stagehand Authors. All Rights Reserved.

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

#ifndef STAGEHAND_SRC_BYTE_IO_H_
#define STAGEHAND_SRC_BYTE_IO_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagehand/errors.h"
#include "stagehand/tensor.h"

namespace stagehand {

static_assert(std::endian::native == std::endian::little,
              "the binary containers assume a little-endian host");

class Writer {
 public:
  void U8(uint8_t v) { bytes_.push_back(v); }
  void U16(uint16_t v) { Raw(&v, sizeof v); }
  void U32(uint32_t v) { Raw(&v, sizeof v); }
  void I64(int64_t v) { Raw(&v, sizeof v); }
  void F64(double v) { Raw(&v, sizeof v); }
  void Raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void Section(const Writer& w) {
    U32(static_cast<uint32_t>(w.bytes_.size()));
    Raw(w.bytes_.data(), w.bytes_.size());
  }
  std::vector<uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes,
                  ErrorCode code = ErrorCode::kCorruptGraph)
      : bytes_(bytes), code_(code) {}

  uint8_t U8() { return Take<uint8_t>(); }
  uint16_t U16() { return Take<uint16_t>(); }
  uint32_t U32() { return Take<uint32_t>(); }
  int64_t I64() { return Take<int64_t>(); }
  double F64() { return Take<double>(); }
  std::span<const uint8_t> Bytes(size_t n) {
    Need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  Reader Section() { return Reader(Bytes(U32()), code_); }
  // Element count of a table whose entries take at least `min_item_bytes`
  // each, rejected before anything is allocated for it.
  uint32_t Count(size_t min_item_bytes) {
    const uint32_t n = U32();
    if (min_item_bytes > 0 && n > remaining() / min_item_bytes) {
      throw Error(code_, "table count exceeds the container size");
    }
    return n;
  }
  size_t remaining() const { return bytes_.size() - pos_; }
  ErrorCode code() const { return code_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void Need(size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(code_, "truncated container");
    }
  }
  template <typename T>
  T Take() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const uint8_t> bytes_;
  ErrorCode code_;
  size_t pos_ = 0;
};

class StringTable {
 public:
  StringTable() { Id(""); }
  uint32_t Id(const std::string& s) {
    auto [it, inserted] =
        ids_.emplace(s, static_cast<uint32_t>(strings_.size()));
    if (inserted) strings_.push_back(s);
    return it->second;
  }
  void Write(Writer& w) const {
    w.U32(static_cast<uint32_t>(strings_.size()));
    for (const auto& s : strings_) {
      w.U32(static_cast<uint32_t>(s.size()));
      w.Raw(s.data(), s.size());
    }
  }

 private:
  std::unordered_map<std::string, uint32_t> ids_;
  std::vector<std::string> strings_;
};

inline void WriteShape(Writer& w, const Shape& shape) {
  w.U16(static_cast<uint16_t>(shape.rank()));
  for (int64_t d : shape.dims()) w.I64(d);
}

inline Shape ReadShape(Reader& r, ErrorCode code = ErrorCode::kCorruptGraph) {
  const uint16_t rank = r.U16();
  if (rank > r.remaining() / sizeof(int64_t)) {
    throw Error(code, "truncated shape");
  }
  std::vector<int64_t> dims(rank);
  for (auto& d : dims) {
    d = r.I64();
    if (d < kUnknownDim) {
      throw Error(code, "negative extent in shape");
    }
  }
  return Shape(std::move(dims));
}

// Payload size of a tensor of `shape`, which must fit in what is left of `r`.
inline size_t CheckedPayloadBytes(const Reader& r, const Shape& shape,
                                  DType dtype) {
  size_t bytes = DTypeSize(dtype);
  for (int64_t d : shape.dims()) {
    if (d < 0) throw Error(r.code(), "tensor payload with unknown extent");
    if (d != 0 && bytes > r.remaining() / static_cast<size_t>(d)) {
      throw Error(r.code(), "tensor payload exceeds the container size");
    }
    bytes *= static_cast<size_t>(d);
  }
  return bytes;
}

}  // namespace stagehand

#endif  // STAGEHAND_SRC_BYTE_IO_H_
