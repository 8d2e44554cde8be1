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

#include "stagehand/tensor.h"

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace stagehand {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNarrowingOverflow: return "NarrowingOverflow";
    case ErrorCode::kSymbolicTensor: return "SymbolicTensor";
    case ErrorCode::kBroadcastIncompatible: return "BroadcastIncompatible";
    case ErrorCode::kDuplicateOp: return "DuplicateOp";
    case ErrorCode::kUnknownOp: return "UnknownOp";
    case ErrorCode::kArityMismatch: return "ArityMismatch";
    case ErrorCode::kAttrMismatch: return "AttrMismatch";
    case ErrorCode::kKernelError: return "KernelError";
    case ErrorCode::kNonNestedEnd: return "NonNestedEnd";
    case ErrorCode::kInactiveTape: return "InactiveTape";
    case ErrorCode::kNonScalarTarget: return "NonScalarTarget";
    case ErrorCode::kUnwatchedSource: return "UnwatchedSource";
    case ErrorCode::kConsumedTape: return "ConsumedTape";
    case ErrorCode::kNoGradient: return "NoGradient";
    case ErrorCode::kSignatureMismatch: return "SignatureMismatch";
    case ErrorCode::kStagingError: return "StagingError";
    case ErrorCode::kVariableCreationError: return "VariableCreationError";
    case ErrorCode::kUnencodableArgument: return "UnencodableArgument";
    case ErrorCode::kMissingConcreteFunction: return "MissingConcreteFunction";
    case ErrorCode::kInputMismatch: return "InputMismatch";
    case ErrorCode::kMissingFunction: return "MissingFunction";
    case ErrorCode::kNotSerializable: return "NotSerializable";
    case ErrorCode::kFormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::kCorruptGraph: return "CorruptGraph";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kDeadVariable: return "DeadVariable";
    case ErrorCode::kStorageError: return "StorageError";
    case ErrorCode::kDTypeOrShapeConflict: return "DTypeOrShapeConflict";
    case ErrorCode::kUnknownDevice: return "UnknownDevice";
    case ErrorCode::kCallbackError: return "CallbackError";
    case ErrorCode::kSignatureViolation: return "SignatureViolation";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kNumericalDivergence: return "NumericalDivergence";
  }
  return "Unknown";
}

std::string_view DTypeName(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return "float32";
    case DType::kFloat64: return "float64";
    case DType::kInt32: return "int32";
    case DType::kBool: return "bool";
  }
  return "invalid";
}

size_t DTypeSize(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kInt32: return 4;
    case DType::kBool: return 1;
  }
  return 0;
}

bool IsFloating(DType dtype) {
  return dtype == DType::kFloat32 || dtype == DType::kFloat64;
}

DType DTypeFromCode(uint8_t code) {
  if (code > static_cast<uint8_t>(DType::kBool)) {
    throw Error(ErrorCode::kCorruptGraph,
                "invalid dtype code " + std::to_string(code));
  }
  return static_cast<DType>(code);
}

bool Shape::is_fully_defined() const {
  for (int64_t d : dims()) {
    if (d < 0) return false;
  }
  return true;
}

int64_t Shape::num_elements() const {
  int64_t n = 1;
  for (int64_t d : dims()) {
    if (d < 0) return kUnknownDim;
    n *= d;
  }
  return n;
}

bool Shape::IsCompatibleWith(const Shape& other) const {
  if (rank() != other.rank()) return false;
  for (int i = 0; i < rank(); ++i) {
    int64_t a = dim(i), b = other.dim(i);
    if (a >= 0 && b >= 0 && a != b) return false;
  }
  return true;
}

std::string Shape::ToString() const {
  std::string s = "[";
  for (size_t i = 0; i < rank_; ++i) {
    if (i > 0) s += ",";
    s += data()[i] < 0 ? "?" : std::to_string(data()[i]);
  }
  return s + "]";
}

Shape BroadcastShapes(const Shape& a, const Shape& b) {
  const int rank = std::max(a.rank(), b.rank());
  std::vector<int64_t> out(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    const int ai = a.rank() - rank + i;
    const int bi = b.rank() - rank + i;
    const int64_t da = ai >= 0 ? a.dim(ai) : 1;
    const int64_t db = bi >= 0 ? b.dim(bi) : 1;
    int64_t d;
    if (da == db) {
      d = da;
    } else if (da == 1) {
      d = db;
    } else if (db == 1) {
      d = da;
    } else if (da == kUnknownDim || db == kUnknownDim) {
      // An unknown extent paired with a known non-unit extent must equal it.
      d = da == kUnknownDim ? db : da;
    } else {
      throw Error(ErrorCode::kBroadcastIncompatible,
                  "cannot broadcast " + a.ToString() + " with " +
                      b.ToString());
    }
    out[static_cast<size_t>(i)] = d;
  }
  return Shape(std::move(out));
}

std::string TensorSpec::ToString() const {
  std::string s(DTypeName(dtype));
  s += shape.ToString();
  if (is_resource) s = "resource<" + s + ">";
  return s;
}

namespace detail {
uint64_t NextTensorId() {
  static std::atomic<uint64_t> next{1};
  return next.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

std::shared_ptr<detail::TensorImpl> Tensor::AllocateImpl(DType dtype,
                                                         Shape shape,
                                                         int device) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->id = detail::NextTensorId();
  impl->dtype = dtype;
  const int64_t n = shape.num_elements();
  if (n < 0) {
    throw Error(ErrorCode::kKernelError,
                "cannot allocate tensor with unknown shape " +
                    shape.ToString());
  }
  impl->shape = std::move(shape);
  impl->device = device;
  impl->num_bytes = static_cast<size_t>(n) * DTypeSize(dtype);
  impl->data.Allocate(impl->num_bytes);
  return impl;
}

Tensor Tensor::Symbolic(TensorSpec spec, uint64_t trace_id, Endpoint ep) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->id = detail::NextTensorId();
  impl->dtype = spec.dtype;
  impl->shape = std::move(spec.shape);
  impl->symbolic = true;
  impl->resource = spec.is_resource;
  impl->trace_id = trace_id;
  impl->endpoint = ep;
  return Tensor(std::move(impl));
}

Tensor Tensor::ResourceHandle(DType dtype, Shape shape, int device,
                              std::weak_ptr<VariableStorage> variable) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->id = detail::NextTensorId();
  impl->dtype = dtype;
  impl->shape = std::move(shape);
  impl->device = device;
  impl->resource = true;
  impl->variable = std::move(variable);
  return Tensor(std::move(impl));
}

namespace {

template <typename T>
void StoreAs(const double* src, std::byte* dst, size_t n) {
  T* out = reinterpret_cast<T*>(dst);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<T>(src[i]);
}

template <typename T>
void LoadFrom(const std::byte* src, double* dst, size_t n) {
  const T* in = reinterpret_cast<const T*>(src);
  for (size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(in[i]);
}

}  // namespace

Tensor TensorFromHost(std::span<const double> data, const Shape& shape,
                      DType dtype) {
  if (!shape.is_fully_defined()) {
    throw Error(ErrorCode::kLengthMismatch,
                "host shape must be fully defined, got " + shape.ToString());
  }
  const auto n = static_cast<size_t>(shape.num_elements());
  if (data.size() != n) {
    throw Error(ErrorCode::kLengthMismatch,
                "shape " + shape.ToString() + " holds " + std::to_string(n) +
                    " elements, got " + std::to_string(data.size()));
  }
  if (dtype == DType::kInt32) {
    for (double v : data) {
      if (!(v >= std::numeric_limits<int32_t>::min() &&
            v <= std::numeric_limits<int32_t>::max()) ||
          v != std::trunc(v)) {
        throw Error(ErrorCode::kNarrowingOverflow,
                    "value " + std::to_string(v) + " not representable as int32");
      }
    }
  } else if (dtype == DType::kBool) {
    for (double v : data) {
      if (v != 0.0 && v != 1.0) {
        throw Error(ErrorCode::kNarrowingOverflow,
                    "value " + std::to_string(v) + " not representable as bool");
      }
    }
  } else if (dtype == DType::kFloat32) {
    for (double v : data) {
      if (std::isfinite(v) &&
          std::fabs(v) > std::numeric_limits<float>::max()) {
        throw Error(ErrorCode::kNarrowingOverflow,
                    "value " + std::to_string(v) + " overflows float32");
      }
    }
  }
  auto impl = Tensor::AllocateImpl(dtype, shape, 0);
  switch (dtype) {
    case DType::kFloat32: StoreAs<float>(data.data(), impl->data.get(), n); break;
    case DType::kFloat64: StoreAs<double>(data.data(), impl->data.get(), n); break;
    case DType::kInt32: StoreAs<int32_t>(data.data(), impl->data.get(), n); break;
    case DType::kBool: StoreAs<bool>(data.data(), impl->data.get(), n); break;
  }
  return Tensor(std::move(impl));
}

Tensor TensorFromHost(std::initializer_list<double> data, const Shape& shape,
                      DType dtype) {
  return TensorFromHost(std::span<const double>(data.begin(), data.size()),
                        shape, dtype);
}

HostTensor ToHost(const Tensor& t) {
  if (!t.is_concrete()) {
    throw Error(ErrorCode::kSymbolicTensor,
                t.is_resource()
                    ? "a resource handle has no host value; read the variable"
                    : "cannot fetch the value of a symbolic tensor inside a "
                      "trace");
  }
  HostTensor out;
  out.dtype = t.dtype();
  out.shape = t.shape();
  const auto n = static_cast<size_t>(t.num_elements());
  out.values.resize(n);
  switch (t.dtype()) {
    case DType::kFloat32: LoadFrom<float>(t.raw(), out.values.data(), n); break;
    case DType::kFloat64: LoadFrom<double>(t.raw(), out.values.data(), n); break;
    case DType::kInt32: LoadFrom<int32_t>(t.raw(), out.values.data(), n); break;
    case DType::kBool: LoadFrom<bool>(t.raw(), out.values.data(), n); break;
  }
  return out;
}

Tensor ScalarTensor(double value, DType dtype) {
  return TensorFromHost({value}, Shape{}, dtype);
}

Tensor FilledTensor(DType dtype, const Shape& shape, double value,
                    int device) {
  auto impl = Tensor::AllocateImpl(dtype, shape, device);
  const auto n = static_cast<size_t>(impl->shape.num_elements());
  switch (dtype) {
    case DType::kFloat32:
      std::fill_n(reinterpret_cast<float*>(impl->data.get()), n,
                  static_cast<float>(value));
      break;
    case DType::kFloat64:
      std::fill_n(reinterpret_cast<double*>(impl->data.get()), n, value);
      break;
    case DType::kInt32:
      std::fill_n(reinterpret_cast<int32_t*>(impl->data.get()), n,
                  static_cast<int32_t>(value));
      break;
    case DType::kBool:
      std::fill_n(reinterpret_cast<bool*>(impl->data.get()), n, value != 0.0);
      break;
  }
  return Tensor(std::move(impl));
}

bool BitwiseEqual(const Tensor& a, const Tensor& b) {
  if (!a.is_concrete() || !b.is_concrete()) return false;
  if (a.dtype() != b.dtype() || a.shape() != b.shape()) return false;
  return a.num_bytes() == b.num_bytes() &&
         std::memcmp(a.raw(), b.raw(), a.num_bytes()) == 0;
}

std::string Tensor::DebugString() const {
  if (!defined()) return "Tensor(<undefined>)";
  std::ostringstream os;
  os << "Tensor(";
  if (is_symbolic()) {
    os << "<symbolic " << spec().ToString() << ">";
  } else if (is_resource()) {
    os << "<resource " << spec().ToString() << ">";
  } else {
    auto host = ToHost(*this);
    os << "[";
    for (size_t i = 0; i < host.values.size() && i < 16; ++i) {
      if (i > 0) os << ", ";
      os << host.values[i];
    }
    if (host.values.size() > 16) os << ", ...";
    os << "], shape=" << shape().ToString() << ", dtype=" << DTypeName(dtype());
  }
  os << ")";
  return os.str();
}

}  // namespace stagehand
