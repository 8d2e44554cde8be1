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

#ifndef STAGEHAND_TENSOR_H_
#define STAGEHAND_TENSOR_H_

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stagehand/errors.h"

namespace stagehand {

enum class DType : uint8_t {
  kFloat32 = 0,
  kFloat64 = 1,
  kInt32 = 2,
  kBool = 3,
};

std::string_view DTypeName(DType dtype);
size_t DTypeSize(DType dtype);
bool IsFloating(DType dtype);
// Throws kCorruptGraph for codes outside the enumeration.
DType DTypeFromCode(uint8_t code);

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::kFloat32;
};
template <>
struct DTypeOf<double> {
  static constexpr DType value = DType::kFloat64;
};
template <>
struct DTypeOf<int32_t> {
  static constexpr DType value = DType::kInt32;
};
template <>
struct DTypeOf<bool> {
  static constexpr DType value = DType::kBool;
};

inline constexpr int64_t kUnknownDim = -1;

// Ordered extents. A dimension of kUnknownDim only appears in signatures and
// in symbolic tensors traced against them.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) {  // NOLINT
    Assign(std::span<const int64_t>(dims.begin(), dims.size()));
  }
  explicit Shape(std::span<const int64_t> dims) { Assign(dims); }
  explicit Shape(const std::vector<int64_t>& dims) {
    Assign(std::span<const int64_t>(dims));
  }

  std::span<const int64_t> dims() const { return {data(), rank_}; }
  int rank() const { return static_cast<int>(rank_); }
  int64_t dim(int i) const { return data()[i]; }
  bool is_scalar() const { return rank_ == 0; }
  bool is_fully_defined() const;
  // Product of dims; the scalar shape holds one element.
  int64_t num_elements() const;

  // True when every known dim agrees and ranks match; unknown dims match
  // anything.
  bool IsCompatibleWith(const Shape& other) const;

  std::string ToString() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    return std::ranges::equal(a.dims(), b.dims());
  }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

 private:
  // Ranks up to this size are stored without a heap allocation.
  static constexpr size_t kInlineRank = 6;

  void Assign(std::span<const int64_t> dims) {
    rank_ = dims.size();
    if (rank_ <= kInlineRank) {
      std::copy(dims.begin(), dims.end(), inline_.begin());
    } else {
      heap_.assign(dims.begin(), dims.end());
    }
  }
  const int64_t* data() const {
    return rank_ <= kInlineRank ? inline_.data() : heap_.data();
  }

  size_t rank_ = 0;
  std::array<int64_t, kInlineRank> inline_{};
  std::vector<int64_t> heap_;
};

// Right-aligned NumPy broadcasting. Throws kBroadcastIncompatible.
Shape BroadcastShapes(const Shape& a, const Shape& b);

// Abstract description of a value: what a trace knows about a tensor.
struct TensorSpec {
  DType dtype = DType::kFloat32;
  Shape shape;
  bool is_resource = false;

  std::string ToString() const;
  friend bool operator==(const TensorSpec& a, const TensorSpec& b) {
    return a.dtype == b.dtype && a.shape == b.shape &&
           a.is_resource == b.is_resource;
  }
};

// Location of a value inside a graph: either a function input
// (node == kInputNode) or output `index` of node `node`.
struct Endpoint {
  static constexpr int32_t kInputNode = -1;
  int32_t node = kInputNode;
  int32_t index = 0;

  bool is_input() const { return node == kInputNode; }
  friend bool operator==(const Endpoint& a, const Endpoint& b) {
    return a.node == b.node && a.index == b.index;
  }
  friend bool operator<(const Endpoint& a, const Endpoint& b) {
    return a.node != b.node ? a.node < b.node : a.index < b.index;
  }
};

class VariableStorage;

namespace detail {

// Payload bytes; small payloads are stored inline.
class Buffer {
 public:
  Buffer() = default;
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;

  std::byte* get() const { return ptr_; }
  void Allocate(size_t n) {
    if (n <= kInlineBytes) {
      ptr_ = inline_;
    } else {
      heap_.reset(new std::byte[n]);
      ptr_ = heap_.get();
    }
  }

 private:
  static constexpr size_t kInlineBytes = 64;
  alignas(16) std::byte inline_[kInlineBytes];
  std::unique_ptr<std::byte[]> heap_;
  std::byte* ptr_ = nullptr;
};

struct TensorImpl {
  uint64_t id = 0;
  DType dtype = DType::kFloat32;
  Shape shape;
  int device = 0;

  // Concrete payload, row-major.
  Buffer data;
  size_t num_bytes = 0;

  // Symbolic payload.
  bool symbolic = false;
  uint64_t trace_id = 0;
  Endpoint endpoint;

  // Resource handle payload.
  bool resource = false;
  std::weak_ptr<VariableStorage> variable;
};

uint64_t NextTensorId();

}  // namespace detail

// Immutable handle to a dense typed array. Copies of a handle share the
// payload and the identity used by tapes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<const detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

  // Uninitialized concrete storage; the caller fills it before wrapping.
  static std::shared_ptr<detail::TensorImpl> AllocateImpl(DType dtype,
                                                           Shape shape,
                                                           int device);
  static Tensor Symbolic(TensorSpec spec, uint64_t trace_id, Endpoint ep);
  static Tensor ResourceHandle(DType dtype, Shape shape, int device,
                               std::weak_ptr<VariableStorage> variable);

  bool defined() const { return impl_ != nullptr; }
  uint64_t id() const { return impl_->id; }
  DType dtype() const { return impl_->dtype; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return impl_->shape.rank(); }
  int device() const { return impl_->device; }
  bool is_symbolic() const { return impl_->symbolic; }
  bool is_resource() const { return impl_->resource; }
  bool is_concrete() const { return !impl_->symbolic && !impl_->resource; }
  uint64_t trace_id() const { return impl_->trace_id; }
  const Endpoint& endpoint() const { return impl_->endpoint; }
  TensorSpec spec() const {
    return TensorSpec{impl_->dtype, impl_->shape, impl_->resource};
  }
  int64_t num_elements() const { return impl_->shape.num_elements(); }
  size_t num_bytes() const { return impl_->num_bytes; }

  // Only valid for concrete tensors.
  const std::byte* raw() const { return impl_->data.get(); }
  template <typename T>
  std::span<const T> data() const {
    return {reinterpret_cast<const T*>(impl_->data.get()),
            impl_->num_bytes / sizeof(T)};
  }
  template <typename T>
  std::vector<T> ToVector() const;

  std::weak_ptr<VariableStorage> variable() const { return impl_->variable; }
  const detail::TensorImpl* impl() const { return impl_.get(); }

  std::string DebugString() const;

 private:
  std::shared_ptr<const detail::TensorImpl> impl_;
};

// Host interchange: values travel as doubles, which hold every element of
// all four dtypes exactly.
struct HostTensor {
  std::vector<double> values;
  Shape shape;
  DType dtype = DType::kFloat32;
};

// Copies `data` into a new tensor on the default device.
// Throws kLengthMismatch or kNarrowingOverflow.
Tensor TensorFromHost(std::span<const double> data, const Shape& shape,
                      DType dtype);
Tensor TensorFromHost(std::initializer_list<double> data, const Shape& shape,
                      DType dtype = DType::kFloat32);
// Throws kSymbolicTensor for symbolic tensors and resource handles.
HostTensor ToHost(const Tensor& t);

Tensor ScalarTensor(double value, DType dtype = DType::kFloat32);
Tensor FilledTensor(DType dtype, const Shape& shape, double value,
                    int device = 0);
// Payload-level equality; NaNs compare by bit pattern.
bool BitwiseEqual(const Tensor& a, const Tensor& b);

template <typename T>
std::vector<T> Tensor::ToVector() const {
  if (!is_concrete()) {
    throw Error(ErrorCode::kSymbolicTensor,
                "cannot read the value of a non-concrete tensor");
  }
  if (dtype() != DTypeOf<T>::value) {
    throw Error(ErrorCode::kKernelError, "ToVector dtype mismatch");
  }
  auto d = data<T>();
  return std::vector<T>(d.begin(), d.end());
}

}  // namespace stagehand

#endif  // STAGEHAND_TENSOR_H_
