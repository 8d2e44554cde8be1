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

#ifndef STAGEHAND_KERNEL_UTIL_H_
#define STAGEHAND_KERNEL_UTIL_H_

#include <string>
#include <vector>

#include "stagehand/errors.h"
#include "stagehand/op_registry.h"
#include "stagehand/tensor.h"

namespace stagehand {
namespace kernels {

[[noreturn]] inline void Fail(const std::string& message) {
  throw Error(ErrorCode::kKernelError, message);
}

template <typename F>
void VisitFloat(DType dtype, F&& f) {
  switch (dtype) {
    case DType::kFloat32: f.template operator()<float>(); return;
    case DType::kFloat64: f.template operator()<double>(); return;
    default: Fail("expected a floating dtype, got " + std::string(DTypeName(dtype)));
  }
}

template <typename F>
void VisitNumeric(DType dtype, F&& f) {
  switch (dtype) {
    case DType::kFloat32: f.template operator()<float>(); return;
    case DType::kFloat64: f.template operator()<double>(); return;
    case DType::kInt32: f.template operator()<int32_t>(); return;
    default: Fail("expected a numeric dtype, got " + std::string(DTypeName(dtype)));
  }
}

template <typename F>
void VisitAny(DType dtype, F&& f) {
  switch (dtype) {
    case DType::kFloat32: f.template operator()<float>(); return;
    case DType::kFloat64: f.template operator()<double>(); return;
    case DType::kInt32: f.template operator()<int32_t>(); return;
    case DType::kBool: f.template operator()<bool>(); return;
  }
}

template <typename T>
T* MutableData(detail::TensorImpl& impl) {
  return reinterpret_cast<T*>(impl.data.get());
}

inline void CheckSameDType(DType a, DType b, std::string_view op) {
  if (a != b) {
    Fail(std::string(op) + ": mixed dtypes " + std::string(DTypeName(a)) +
         " and " + std::string(DTypeName(b)) + " (no implicit promotion)");
  }
}

inline Shape BroadcastOrFail(const Shape& a, const Shape& b,
                             std::string_view op) {
  try {
    return BroadcastShapes(a, b);
  } catch (const Error& e) {
    Fail(std::string(op) + ": " + e.detail());
  }
}

// Calls f(big_index, small_offset) for every element of `big`, where `small`
// is right-aligned against `big` and broadcast along extents of 1.
template <typename F>
void ForEachBroadcast(const Shape& big, const Shape& small, F&& f) {
  const int rank = big.rank();
  std::vector<int64_t> strides(static_cast<size_t>(rank), 0);
  int64_t stride = 1;
  for (int i = small.rank() - 1; i >= 0; --i) {
    const int bi = rank - small.rank() + i;
    if (small.dim(i) != 1) strides[static_cast<size_t>(bi)] = stride;
    stride *= small.dim(i);
  }
  const int64_t n = big.num_elements();
  if (n == 0) return;
  std::vector<int64_t> counter(static_cast<size_t>(rank), 0);
  int64_t offset = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, offset);
    for (int d = rank - 1; d >= 0; --d) {
      auto du = static_cast<size_t>(d);
      ++counter[du];
      offset += strides[du];
      if (counter[du] < big.dim(d)) break;
      offset -= strides[du] * counter[du];
      counter[du] = 0;
    }
  }
}

// Binary variant: offsets into both operands.
template <typename F>
void ForEachBroadcast2(const Shape& out, const Shape& a, const Shape& b,
                       F&& f) {
  const int rank = out.rank();
  auto strides_for = [&](const Shape& s) {
    std::vector<int64_t> st(static_cast<size_t>(rank), 0);
    int64_t stride = 1;
    for (int i = s.rank() - 1; i >= 0; --i) {
      if (s.dim(i) != 1) st[static_cast<size_t>(rank - s.rank() + i)] = stride;
      stride *= s.dim(i);
    }
    return st;
  };
  auto sa = strides_for(a), sb = strides_for(b);
  const int64_t n = out.num_elements();
  if (n == 0) return;
  std::vector<int64_t> counter(static_cast<size_t>(rank), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (int d = rank - 1; d >= 0; --d) {
      auto du = static_cast<size_t>(d);
      ++counter[du];
      oa += sa[du];
      ob += sb[du];
      if (counter[du] < out.dim(d)) break;
      oa -= sa[du] * counter[du];
      ob -= sb[du] * counter[du];
      counter[du] = 0;
    }
  }
}

// Normalizes reduction axes against `rank`; empty means all axes.
std::vector<bool> ReductionMask(const std::vector<int64_t>& axes, int rank);
Shape ReducedShape(const Shape& in, const std::vector<bool>& mask,
                   bool keepdims);

void RegisterMathOps(OpRegistry& registry);
void RegisterStateOps(OpRegistry& registry);
void RegisterFunctionOps(OpRegistry& registry);
void RegisterHostOps(OpRegistry& registry);

}  // namespace kernels
}  // namespace stagehand

#endif  // STAGEHAND_KERNEL_UTIL_H_
