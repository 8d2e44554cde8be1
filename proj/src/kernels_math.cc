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

// Built-in stateless math kernels, their shape functions and gradients.
// Reductions accumulate left to right in row-major input order so that eager
// and staged execution agree bit for bit.

#include <cmath>
#include <cstring>

#include "kernel_util.h"
#include "stagehand/ops.h"
#include "stagehand/runtime.h"

namespace stagehand {
namespace kernels {

std::vector<bool> ReductionMask(const std::vector<int64_t>& axes, int rank) {
  std::vector<bool> mask(static_cast<size_t>(rank), axes.empty());
  for (int64_t a : axes) {
    const int64_t axis = a < 0 ? a + rank : a;
    if (axis < 0 || axis >= rank) {
      Fail("reduction axis " + std::to_string(a) + " out of range for rank " +
           std::to_string(rank));
    }
    mask[static_cast<size_t>(axis)] = true;
  }
  return mask;
}

Shape ReducedShape(const Shape& in, const std::vector<bool>& mask,
                   bool keepdims) {
  std::vector<int64_t> dims;
  for (int i = 0; i < in.rank(); ++i) {
    if (mask[static_cast<size_t>(i)]) {
      if (keepdims) dims.push_back(1);
    } else {
      dims.push_back(in.dim(i));
    }
  }
  return Shape(std::move(dims));
}

namespace {

// ---------------------------------------------------------------------------
// Shared helpers.

std::vector<TensorSpec> One(DType dtype, Shape shape) {
  return {TensorSpec{dtype, std::move(shape), false}};
}

const Shape& In(const KernelContext& ctx, int i) {
  return ctx.inputs[static_cast<size_t>(i)].shape();
}

template <typename T>
std::span<const T> Data(const KernelContext& ctx, int i) {
  return ctx.inputs[static_cast<size_t>(i)].data<T>();
}

Shape KeepdimsShape(const Shape& in, const std::vector<bool>& mask) {
  return ReducedShape(in, mask, true);
}

// Gradient of a broadcasting input: reduce `grad` back to the input's shape.
Tensor UnbroadcastTo(const Tensor& grad, const GradContext& ctx, int input) {
  const TensorSpec& spec = ctx.input_spec(input);
  if (spec.shape.is_fully_defined() && grad.shape() == spec.shape) return grad;
  return ops::SumToLike(grad, ctx.input(input));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <typename Op>
void UnaryFloatKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  auto impl = Tensor::AllocateImpl(x.dtype(), x.shape(), ctx.device);
  VisitFloat(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    T* out = MutableData<T>(*impl);
    for (size_t i = 0; i < in.size(); ++i) out[i] = Op::template Apply<T>(in[i]);
  });
  ctx.outputs.emplace_back(std::move(impl));
}

template <typename Op>
void UnaryNumericKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  auto impl = Tensor::AllocateImpl(x.dtype(), x.shape(), ctx.device);
  VisitNumeric(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    T* out = MutableData<T>(*impl);
    for (size_t i = 0; i < in.size(); ++i) out[i] = Op::template Apply<T>(in[i]);
  });
  ctx.outputs.emplace_back(std::move(impl));
}

struct ExpOp {
  template <typename T>
  static T Apply(T x) { return std::exp(x); }
};
struct LogOp {
  template <typename T>
  static T Apply(T x) { return std::log(x); }
};
struct SoftplusOp {
  template <typename T>
  static T Apply(T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
};
struct SigmoidOp {
  template <typename T>
  static T Apply(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }
};
struct NegOp {
  template <typename T>
  static T Apply(T x) { return -x; }
};
struct ReluOp {
  template <typename T>
  static T Apply(T x) { return x > T(0) ? x : T(0); }
};

std::vector<TensorSpec> UnaryFloatShape(const ShapeContext& ctx) {
  if (!IsFloating(ctx.inputs[0].dtype)) Fail("op requires a floating input");
  return One(ctx.inputs[0].dtype, ctx.inputs[0].shape);
}

std::vector<TensorSpec> UnaryNumericShape(const ShapeContext& ctx) {
  if (ctx.inputs[0].dtype == DType::kBool) Fail("op requires a numeric input");
  return One(ctx.inputs[0].dtype, ctx.inputs[0].shape);
}

std::vector<TensorSpec> SameAsInputShape(const ShapeContext& ctx) {
  return One(ctx.inputs[0].dtype, ctx.inputs[0].shape);
}

void IdentityKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  auto impl = Tensor::AllocateImpl(x.dtype(), x.shape(), ctx.device);
  if (x.num_bytes() > 0) std::memcpy(impl->data.get(), x.raw(), x.num_bytes());
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<std::optional<Tensor>> IdentityGrad(GradContext& g) {
  return {g.upstream(0)};
}
std::vector<std::optional<Tensor>> NegGrad(GradContext& g) {
  return {ops::Neg(g.upstream(0))};
}
std::vector<std::optional<Tensor>> ExpGrad(GradContext& g) {
  return {ops::Mul(g.upstream(0), g.output(0))};
}
std::vector<std::optional<Tensor>> LogGrad(GradContext& g) {
  return {ops::Div(g.upstream(0), g.input(0))};
}
std::vector<std::optional<Tensor>> ReluGradFn(GradContext& g) {
  return {ops::ReluGrad(g.upstream(0), g.input(0))};
}
std::vector<std::optional<Tensor>> SoftplusGrad(GradContext& g) {
  return {ops::Mul(g.upstream(0), ops::Sigmoid(g.input(0)))};
}
std::vector<std::optional<Tensor>> SigmoidGrad(GradContext& g) {
  Tensor y = g.output(0);
  return {ops::Mul(g.upstream(0), ops::Mul(y, ops::Sub(ops::OnesLike(y), y)))};
}

// ---------------------------------------------------------------------------
// Elementwise binary ops.

template <typename Out, typename T, typename F>
Tensor BinaryApply(const Tensor& a, const Tensor& b, DType out_dtype,
                   int device, std::string_view name, F f) {
  // Common cases skip the general broadcast computation.
  const Shape* same = nullptr;
  if (a.shape() == b.shape() || b.shape().is_scalar()) {
    same = &a.shape();
  } else if (a.shape().is_scalar()) {
    same = &b.shape();
  }
  auto impl = Tensor::AllocateImpl(
      out_dtype, same != nullptr ? *same : BroadcastOrFail(a.shape(), b.shape(), name),
      device);
  const T* x = a.data<T>().data();
  const T* y = b.data<T>().data();
  Out* out = MutableData<Out>(*impl);
  const int64_t n = impl->shape.num_elements();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
  } else if (b.num_elements() == 1 && a.shape() == impl->shape) {
    const T yv = y[0];
    for (int64_t i = 0; i < n; ++i) out[i] = f(x[i], yv);
  } else if (a.num_elements() == 1 && b.shape() == impl->shape) {
    const T xv = x[0];
    for (int64_t i = 0; i < n; ++i) out[i] = f(xv, y[i]);
  } else {
    ForEachBroadcast2(impl->shape, a.shape(), b.shape(),
                      [&](int64_t i, int64_t ia, int64_t ib) {
                        out[i] = f(x[ia], y[ib]);
                      });
  }
  return Tensor(std::move(impl));
}

template <typename Op>
void BinaryArithKernel(KernelContext& ctx) {
  const Tensor& a = ctx.inputs[0];
  const Tensor& b = ctx.inputs[1];
  CheckSameDType(a.dtype(), b.dtype(), Op::kName);
  VisitNumeric(a.dtype(), [&]<typename T>() {
    ctx.outputs.push_back(BinaryApply<T, T>(
        a, b, a.dtype(), ctx.device, Op::kName,
        [](T x, T y) { return Op::template Apply<T>(x, y); }));
  });
}

template <typename Op>
void CompareKernel(KernelContext& ctx) {
  const Tensor& a = ctx.inputs[0];
  const Tensor& b = ctx.inputs[1];
  CheckSameDType(a.dtype(), b.dtype(), Op::kName);
  VisitNumeric(a.dtype(), [&]<typename T>() {
    ctx.outputs.push_back(BinaryApply<bool, T>(
        a, b, DType::kBool, ctx.device, Op::kName,
        [](T x, T y) { return Op::template Apply<T>(x, y); }));
  });
}

struct AddOp {
  static constexpr std::string_view kName = "add";
  template <typename T>
  static T Apply(T x, T y) { return x + y; }
};
struct SubOp {
  static constexpr std::string_view kName = "sub";
  template <typename T>
  static T Apply(T x, T y) { return x - y; }
};
struct MulOp {
  static constexpr std::string_view kName = "mul";
  template <typename T>
  static T Apply(T x, T y) { return x * y; }
};
struct DivOp {
  static constexpr std::string_view kName = "div";
  template <typename T>
  static T Apply(T x, T y) {
    if constexpr (std::is_integral_v<T>) {
      if (y == 0) Fail("integer division by zero");
    }
    return x / y;
  }
};
struct GreaterOp {
  static constexpr std::string_view kName = "greater";
  template <typename T>
  static bool Apply(T x, T y) { return x > y; }
};
struct LessOp {
  static constexpr std::string_view kName = "less";
  template <typename T>
  static bool Apply(T x, T y) { return x < y; }
};

std::vector<TensorSpec> BinaryShape(const ShapeContext& ctx) {
  CheckSameDType(ctx.inputs[0].dtype, ctx.inputs[1].dtype, "binary op");
  if (ctx.inputs[0].dtype == DType::kBool) Fail("arithmetic on bool tensors");
  return One(ctx.inputs[0].dtype,
             BroadcastOrFail(ctx.inputs[0].shape, ctx.inputs[1].shape, "binary op"));
}

std::vector<TensorSpec> CompareShape(const ShapeContext& ctx) {
  CheckSameDType(ctx.inputs[0].dtype, ctx.inputs[1].dtype, "comparison");
  return One(DType::kBool,
             BroadcastOrFail(ctx.inputs[0].shape, ctx.inputs[1].shape, "comparison"));
}

std::vector<std::optional<Tensor>> AddGrad(GradContext& g) {
  Tensor dy = g.upstream(0);
  return {UnbroadcastTo(dy, g, 0), UnbroadcastTo(dy, g, 1)};
}
std::vector<std::optional<Tensor>> SubGrad(GradContext& g) {
  Tensor dy = g.upstream(0);
  return {UnbroadcastTo(dy, g, 0), UnbroadcastTo(ops::Neg(dy), g, 1)};
}
std::vector<std::optional<Tensor>> MulGrad(GradContext& g) {
  Tensor dy = g.upstream(0);
  return {UnbroadcastTo(ops::Mul(dy, g.input(1)), g, 0),
          UnbroadcastTo(ops::Mul(dy, g.input(0)), g, 1)};
}
std::vector<std::optional<Tensor>> DivGrad(GradContext& g) {
  Tensor dy = g.upstream(0);
  Tensor b = g.input(1);
  return {UnbroadcastTo(ops::Div(dy, b), g, 0),
          UnbroadcastTo(ops::Neg(ops::Div(ops::Mul(dy, g.output(0)), b)), g, 1)};
}

void ReluGradKernel(KernelContext& ctx) {
  const Tensor& dy = ctx.inputs[0];
  const Tensor& x = ctx.inputs[1];
  CheckSameDType(dy.dtype(), x.dtype(), "relu_grad");
  VisitNumeric(dy.dtype(), [&]<typename T>() {
    ctx.outputs.push_back(BinaryApply<T, T>(
        dy, x, dy.dtype(), ctx.device, "relu_grad",
        [](T d, T v) { return v > T(0) ? d : T(0); }));
  });
}

std::vector<std::optional<Tensor>> ReluGradGrad(GradContext& g) {
  return {ops::ReluGrad(g.upstream(0), g.input(1)), std::nullopt};
}

// ---------------------------------------------------------------------------
// Linear algebra.

void MatMulKernel(KernelContext& ctx) {
  const Tensor& a = ctx.inputs[0];
  const Tensor& b = ctx.inputs[1];
  CheckSameDType(a.dtype(), b.dtype(), "matmul");
  if (a.rank() != 2 || b.rank() != 2) Fail("matmul requires rank-2 operands");
  const int64_t m = a.shape().dim(0), k = a.shape().dim(1);
  const int64_t n = b.shape().dim(1);
  if (b.shape().dim(0) != k) {
    Fail("matmul inner dimensions differ: " + a.shape().ToString() + " x " +
         b.shape().ToString());
  }
  auto impl = Tensor::AllocateImpl(a.dtype(), Shape{m, n}, ctx.device);
  VisitNumeric(a.dtype(), [&]<typename T>() {
    const T* x = a.data<T>().data();
    const T* y = b.data<T>().data();
    T* out = MutableData<T>(*impl);
    std::fill_n(out, m * n, T(0));
    for (int64_t i = 0; i < m; ++i) {
      T* row = out + i * n;
      for (int64_t p = 0; p < k; ++p) {
        const T xv = x[i * k + p];
        const T* yrow = y + p * n;
        for (int64_t j = 0; j < n; ++j) row[j] += xv * yrow[j];
      }
    }
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<TensorSpec> MatMulShape(const ShapeContext& ctx) {
  const auto& a = ctx.inputs[0];
  const auto& b = ctx.inputs[1];
  CheckSameDType(a.dtype, b.dtype, "matmul");
  if (a.shape.rank() != 2 || b.shape.rank() != 2) {
    Fail("matmul requires rank-2 operands");
  }
  const int64_t ka = a.shape.dim(1), kb = b.shape.dim(0);
  if (ka >= 0 && kb >= 0 && ka != kb) {
    Fail("matmul inner dimensions differ: " + a.shape.ToString() + " x " +
         b.shape.ToString());
  }
  return One(a.dtype, Shape{a.shape.dim(0), b.shape.dim(1)});
}

std::vector<std::optional<Tensor>> MatMulGrad(GradContext& g) {
  Tensor dy = g.upstream(0);
  std::vector<std::optional<Tensor>> grads(2);
  if (g.needs_input(0)) grads[0] = ops::MatMul(dy, ops::Transpose(g.input(1)));
  if (g.needs_input(1)) grads[1] = ops::MatMul(ops::Transpose(g.input(0)), dy);
  return grads;
}

void TransposeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  if (x.rank() != 2) Fail("transpose requires a rank-2 operand");
  const int64_t r = x.shape().dim(0), c = x.shape().dim(1);
  auto impl = Tensor::AllocateImpl(x.dtype(), Shape{c, r}, ctx.device);
  VisitAny(x.dtype(), [&]<typename T>() {
    const T* in = x.data<T>().data();
    T* out = MutableData<T>(*impl);
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    }
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<TensorSpec> TransposeShape(const ShapeContext& ctx) {
  const auto& x = ctx.inputs[0];
  if (x.shape.rank() != 2) Fail("transpose requires a rank-2 operand");
  return One(x.dtype, Shape{x.shape.dim(1), x.shape.dim(0)});
}

std::vector<std::optional<Tensor>> TransposeGrad(GradContext& g) {
  return {ops::Transpose(g.upstream(0))};
}

// ---------------------------------------------------------------------------
// Reductions.

std::vector<int64_t> AxesAttr(const AttrMap& attrs) {
  return attrs.Get("axes").list();
}

template <bool kMean>
void ReduceKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  auto mask = ReductionMask(AxesAttr(ctx.attrs), x.rank());
  const bool keepdims = ctx.attrs.Get("keepdims").b();
  Shape kept = KeepdimsShape(x.shape(), mask);
  auto impl = Tensor::AllocateImpl(x.dtype(), ReducedShape(x.shape(), mask, keepdims),
                                   ctx.device);
  auto body = [&]<typename T>() {
    T* out = MutableData<T>(*impl);
    const int64_t n_out = impl->shape.num_elements();
    std::fill_n(out, n_out, T(0));
    const T* in = x.data<T>().data();
    ForEachBroadcast(x.shape(), kept,
                     [&](int64_t i, int64_t o) { out[o] += in[i]; });
    if constexpr (kMean) {
      const int64_t count = n_out == 0 ? 0 : x.num_elements() / n_out;
      const T denom = static_cast<T>(count);
      for (int64_t o = 0; o < n_out; ++o) out[o] /= denom;
    }
  };
  if (kMean) {
    VisitFloat(x.dtype(), body);
  } else {
    VisitNumeric(x.dtype(), body);
  }
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<TensorSpec> ReduceShape(const ShapeContext& ctx) {
  const auto& x = ctx.inputs[0];
  if (x.dtype == DType::kBool) Fail("reduction over bool tensor");
  auto mask = ReductionMask(AxesAttr(ctx.attrs), x.shape.rank());
  return One(x.dtype,
             ReducedShape(x.shape, mask, ctx.attrs.Get("keepdims").b()));
}

std::vector<TensorSpec> ReduceMeanShape(const ShapeContext& ctx) {
  if (!IsFloating(ctx.inputs[0].dtype)) Fail("reduce_mean requires a floating input");
  return ReduceShape(ctx);
}

std::vector<std::optional<Tensor>> ReduceSumGrad(GradContext& g) {
  return {ops::ReduceGrad(g.upstream(0), g.input(0), AxesAttr(g.attrs()),
                          g.attrs().Get("keepdims").b(), false)};
}
std::vector<std::optional<Tensor>> ReduceMeanGrad(GradContext& g) {
  return {ops::ReduceGrad(g.upstream(0), g.input(0), AxesAttr(g.attrs()),
                          g.attrs().Get("keepdims").b(), true)};
}

// reduce_grad(dy, x): spreads dy back over the reduced axes of x.
void ReduceGradKernel(KernelContext& ctx) {
  const Tensor& dy = ctx.inputs[0];
  const Tensor& x = ctx.inputs[1];
  auto mask = ReductionMask(AxesAttr(ctx.attrs), x.rank());
  Shape kept = KeepdimsShape(x.shape(), mask);
  if (dy.num_elements() != kept.num_elements()) {
    Fail("reduce_grad: upstream " + dy.shape().ToString() +
         " does not match reduction of " + x.shape().ToString());
  }
  const bool mean = ctx.attrs.Get("mean").b();
  auto impl = Tensor::AllocateImpl(dy.dtype(), x.shape(), ctx.device);
  VisitNumeric(dy.dtype(), [&]<typename T>() {
    const T* in = dy.data<T>().data();
    T* out = MutableData<T>(*impl);
    const int64_t count =
        kept.num_elements() == 0 ? 0 : x.num_elements() / kept.num_elements();
    const T denom = static_cast<T>(count);
    ForEachBroadcast(x.shape(), kept, [&](int64_t i, int64_t o) {
      out[i] = mean ? in[o] / denom : in[o];
    });
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<TensorSpec> ReduceGradShape(const ShapeContext& ctx) {
  return One(ctx.inputs[0].dtype, ctx.inputs[1].shape);
}

std::vector<std::optional<Tensor>> ReduceGradGrad(GradContext& g) {
  const auto axes = AxesAttr(g.attrs());
  const bool keepdims = g.attrs().Get("keepdims").b();
  Tensor up = g.upstream(0);
  Tensor r = g.attrs().Get("mean").b() ? ops::ReduceMean(up, axes, keepdims)
                                       : ops::ReduceSum(up, axes, keepdims);
  return {ops::ReshapeLike(r, g.input(0)), std::nullopt};
}

// ---------------------------------------------------------------------------
// Shape manipulation.

Shape ResolveReshape(const Shape& requested, int64_t num_elements) {
  std::vector<int64_t> dims(requested.dims().begin(), requested.dims().end());
  int unknown = -1;
  int64_t known = 1;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 0) {
      if (unknown >= 0) Fail("reshape allows at most one unknown extent");
      unknown = static_cast<int>(i);
    } else {
      known *= dims[i];
    }
  }
  if (num_elements < 0) return Shape(std::move(dims));
  if (unknown >= 0) {
    if (known == 0 || num_elements % known != 0) {
      Fail("cannot reshape " + std::to_string(num_elements) +
           " elements into " + requested.ToString());
    }
    dims[static_cast<size_t>(unknown)] = num_elements / known;
  } else if (known != num_elements) {
    Fail("cannot reshape " + std::to_string(num_elements) + " elements into " +
         requested.ToString());
  }
  return Shape(std::move(dims));
}

Tensor CopyWithShape(const Tensor& x, Shape shape, int device) {
  auto impl = Tensor::AllocateImpl(x.dtype(), std::move(shape), device);
  if (x.num_bytes() > 0) std::memcpy(impl->data.get(), x.raw(), x.num_bytes());
  return Tensor(std::move(impl));
}

void ReshapeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  ctx.outputs.push_back(CopyWithShape(
      x, ResolveReshape(ctx.attrs.Get("shape").shape(), x.num_elements()),
      ctx.device));
}

std::vector<TensorSpec> ReshapeShape(const ShapeContext& ctx) {
  return One(ctx.inputs[0].dtype,
             ResolveReshape(ctx.attrs.Get("shape").shape(),
                            ctx.inputs[0].shape.num_elements()));
}

std::vector<std::optional<Tensor>> ReshapeGrad(GradContext& g) {
  return {ops::ReshapeLike(g.upstream(0), g.input(0))};
}

void ReshapeLikeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  const Tensor& like = ctx.inputs[1];
  if (x.num_elements() != like.num_elements()) {
    Fail("reshape_like: " + x.shape().ToString() + " vs " +
         like.shape().ToString());
  }
  ctx.outputs.push_back(CopyWithShape(x, like.shape(), ctx.device));
}

std::vector<TensorSpec> LikeShape(const ShapeContext& ctx) {
  return One(ctx.inputs[0].dtype, ctx.inputs[1].shape);
}

std::vector<std::optional<Tensor>> ReshapeLikeGrad(GradContext& g) {
  return {ops::ReshapeLike(g.upstream(0), g.input(0)), std::nullopt};
}

void BroadcastLikeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  const Shape& target = In(ctx, 1);
  if (BroadcastOrFail(x.shape(), target, "broadcast_like") != target) {
    Fail("broadcast_like: cannot broadcast " + x.shape().ToString() + " to " +
         target.ToString());
  }
  auto impl = Tensor::AllocateImpl(x.dtype(), target, ctx.device);
  VisitAny(x.dtype(), [&]<typename T>() {
    const T* in = x.data<T>().data();
    T* out = MutableData<T>(*impl);
    ForEachBroadcast(target, x.shape(),
                     [&](int64_t i, int64_t o) { out[i] = in[o]; });
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<std::optional<Tensor>> BroadcastLikeGrad(GradContext& g) {
  return {ops::SumToLike(g.upstream(0), g.input(0)), std::nullopt};
}

void SumToLikeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  const Shape& target = In(ctx, 1);
  if (BroadcastOrFail(x.shape(), target, "sum_to_like") != x.shape()) {
    Fail("sum_to_like: " + target.ToString() + " does not broadcast to " +
         x.shape().ToString());
  }
  auto impl = Tensor::AllocateImpl(x.dtype(), target, ctx.device);
  VisitNumeric(x.dtype(), [&]<typename T>() {
    const T* in = x.data<T>().data();
    T* out = MutableData<T>(*impl);
    std::fill_n(out, impl->shape.num_elements(), T(0));
    ForEachBroadcast(x.shape(), target,
                     [&](int64_t i, int64_t o) { out[o] += in[i]; });
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<std::optional<Tensor>> SumToLikeGrad(GradContext& g) {
  return {ops::BroadcastLike(g.upstream(0), g.input(0)), std::nullopt};
}

// ---------------------------------------------------------------------------
// Generators.

void ConstantKernel(KernelContext& ctx) {
  const Tensor& value = ctx.attrs.Get("value").tensor();
  ctx.outputs.push_back(CopyWithShape(value, value.shape(), ctx.device));
}

std::vector<TensorSpec> ConstantShape(const ShapeContext& ctx) {
  const Tensor& value = ctx.attrs.Get("value").tensor();
  if (!value.is_concrete()) Fail("constant value must be concrete");
  return One(value.dtype(), value.shape());
}

void EyeKernel(KernelContext& ctx) {
  const int64_t n = ctx.attrs.Get("num_rows").i();
  if (n < 0) Fail("eye: negative size");
  const DType dtype = ctx.attrs.Get("dtype").type();
  auto impl = Tensor::AllocateImpl(dtype, Shape{n, n}, ctx.device);
  VisitAny(dtype, [&]<typename T>() {
    T* out = MutableData<T>(*impl);
    for (int64_t i = 0; i < n * n; ++i) out[i] = T(0);
    for (int64_t i = 0; i < n; ++i) out[i * n + i] = T(1);
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<TensorSpec> EyeShape(const ShapeContext& ctx) {
  const int64_t n = ctx.attrs.Get("num_rows").i();
  if (n < 0) Fail("eye: negative size");
  return One(ctx.attrs.Get("dtype").type(), Shape{n, n});
}

void FillKernel(KernelContext& ctx) {
  const Shape& shape = ctx.attrs.Get("shape").shape();
  if (!shape.is_fully_defined()) Fail("fill requires a fully defined shape");
  ctx.outputs.push_back(FilledTensor(ctx.attrs.Get("dtype").type(), shape,
                                     ctx.attrs.Get("value").f(), ctx.device));
}

std::vector<TensorSpec> FillShape(const ShapeContext& ctx) {
  const Shape& shape = ctx.attrs.Get("shape").shape();
  if (!shape.is_fully_defined()) Fail("fill requires a fully defined shape");
  return One(ctx.attrs.Get("dtype").type(), shape);
}

void ZerosLikeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  ctx.outputs.push_back(FilledTensor(x.dtype(), x.shape(), 0.0, ctx.device));
}

void OnesLikeKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  ctx.outputs.push_back(FilledTensor(x.dtype(), x.shape(), 1.0, ctx.device));
}

// The outputs do not depend on the input values.
std::vector<std::optional<Tensor>> ZeroGrad(GradContext& g) {
  return std::vector<std::optional<Tensor>>(
      static_cast<size_t>(g.num_inputs()), std::nullopt);
}

// ---------------------------------------------------------------------------
// Randomness.

void RandomNormalKernel(KernelContext& ctx) {
  const Shape& shape = ctx.attrs.Get("shape").shape();
  if (!shape.is_fully_defined()) Fail("random_normal requires a fully defined shape");
  const DType dtype = ctx.attrs.Get("dtype").type();
  auto impl = Tensor::AllocateImpl(dtype, shape, ctx.device);
  auto& rt = Runtime::Get();
  VisitFloat(dtype, [&]<typename T>() {
    T* out = MutableData<T>(*impl);
    for (int64_t i = 0; i < impl->shape.num_elements(); ++i) {
      out[i] = static_cast<T>(rt.NextNormal());
    }
  });
  ctx.outputs.emplace_back(std::move(impl));
}

std::vector<TensorSpec> RandomNormalShape(const ShapeContext& ctx) {
  const DType dtype = ctx.attrs.Get("dtype").type();
  if (!IsFloating(dtype)) Fail("random_normal requires a floating dtype");
  return One(dtype, ctx.attrs.Get("shape").shape());
}

// Outputs the dropped tensor and the scaled keep-mask it was multiplied by.
void DropoutKernel(KernelContext& ctx) {
  const Tensor& x = ctx.inputs[0];
  const double rate = ctx.attrs.Get("rate").f();
  if (!(rate >= 0.0 && rate < 1.0)) Fail("dropout rate must be in [0, 1)");
  auto y = Tensor::AllocateImpl(x.dtype(), x.shape(), ctx.device);
  auto mask = Tensor::AllocateImpl(x.dtype(), x.shape(), ctx.device);
  auto& rt = Runtime::Get();
  VisitFloat(x.dtype(), [&]<typename T>() {
    const T* in = x.data<T>().data();
    T* out = MutableData<T>(*y);
    T* m = MutableData<T>(*mask);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (int64_t i = 0; i < x.num_elements(); ++i) {
      m[i] = rt.NextUniform() >= rate ? scale : T(0);
      out[i] = in[i] * m[i];
    }
  });
  ctx.outputs.emplace_back(std::move(y));
  ctx.outputs.emplace_back(std::move(mask));
}

std::vector<TensorSpec> DropoutShape(const ShapeContext& ctx) {
  const auto& x = ctx.inputs[0];
  if (!IsFloating(x.dtype)) Fail("dropout requires a floating input");
  return {TensorSpec{x.dtype, x.shape, false}, TensorSpec{x.dtype, x.shape, false}};
}

std::vector<std::optional<Tensor>> DropoutGrad(GradContext& g) {
  return {ops::Mul(g.upstream(0), g.output(1))};
}

OpDef Def(std::string name, int inputs, int outputs, KernelFn kernel,
          ShapeFn shape, GradientFn grad, std::vector<AttrSpec> attrs = {}) {
  OpDef def;
  def.name = std::move(name);
  def.input_arity = inputs;
  def.output_arity = outputs;
  def.kernel = kernel;
  def.shape_fn = shape;
  def.gradient = grad;
  def.attrs = std::move(attrs);
  return def;
}

std::vector<AttrSpec> ReduceAttrs() {
  return {AttrSpec{"axes", AttrKind::kIntList, AttrValue(std::vector<int64_t>{})},
          AttrSpec{"keepdims", AttrKind::kBool, AttrValue(false)}};
}

}  // namespace

void RegisterMathOps(OpRegistry& r) {
  r.Register(Def("constant", 0, 1, ConstantKernel, ConstantShape, nullptr,
                 {AttrSpec{"value", AttrKind::kTensor, std::nullopt}}));
  r.Register(Def("identity", 1, 1, IdentityKernel, SameAsInputShape, IdentityGrad));
  r.Register(Def("add", 2, 1, BinaryArithKernel<AddOp>, BinaryShape, AddGrad));
  r.Register(Def("sub", 2, 1, BinaryArithKernel<SubOp>, BinaryShape, SubGrad));
  r.Register(Def("mul", 2, 1, BinaryArithKernel<MulOp>, BinaryShape, MulGrad));
  r.Register(Def("div", 2, 1, BinaryArithKernel<DivOp>, BinaryShape, DivGrad));
  r.Register(Def("greater", 2, 1, CompareKernel<GreaterOp>, CompareShape, nullptr));
  r.Register(Def("less", 2, 1, CompareKernel<LessOp>, CompareShape, nullptr));
  r.Register(Def("neg", 1, 1, UnaryNumericKernel<NegOp>, UnaryNumericShape, NegGrad));
  r.Register(Def("exp", 1, 1, UnaryFloatKernel<ExpOp>, UnaryFloatShape, ExpGrad));
  r.Register(Def("log", 1, 1, UnaryFloatKernel<LogOp>, UnaryFloatShape, LogGrad));
  r.Register(Def("relu", 1, 1, UnaryNumericKernel<ReluOp>, UnaryNumericShape, ReluGradFn));
  r.Register(Def("softplus", 1, 1, UnaryFloatKernel<SoftplusOp>, UnaryFloatShape,
                 SoftplusGrad));
  r.Register(Def("sigmoid", 1, 1, UnaryFloatKernel<SigmoidOp>, UnaryFloatShape,
                 SigmoidGrad));
  r.Register(Def("relu_grad", 2, 1, ReluGradKernel, BinaryShape, ReluGradGrad));
  r.Register(Def("matmul", 2, 1, MatMulKernel, MatMulShape, MatMulGrad));
  r.Register(Def("transpose", 1, 1, TransposeKernel, TransposeShape, TransposeGrad));
  r.Register(Def("reduce_sum", 1, 1, ReduceKernel<false>, ReduceShape, ReduceSumGrad,
                 ReduceAttrs()));
  r.Register(Def("reduce_mean", 1, 1, ReduceKernel<true>, ReduceMeanShape,
                 ReduceMeanGrad, ReduceAttrs()));
  auto grad_attrs = ReduceAttrs();
  grad_attrs.push_back(AttrSpec{"mean", AttrKind::kBool, AttrValue(false)});
  r.Register(Def("reduce_grad", 2, 1, ReduceGradKernel, ReduceGradShape,
                 ReduceGradGrad, grad_attrs));
  r.Register(Def("reshape", 1, 1, ReshapeKernel, ReshapeShape, ReshapeGrad,
                 {AttrSpec{"shape", AttrKind::kShape, std::nullopt}}));
  r.Register(Def("reshape_like", 2, 1, ReshapeLikeKernel, LikeShape, ReshapeLikeGrad));
  r.Register(Def("broadcast_like", 2, 1, BroadcastLikeKernel, LikeShape,
                 BroadcastLikeGrad));
  r.Register(Def("sum_to_like", 2, 1, SumToLikeKernel, LikeShape, SumToLikeGrad));
  r.Register(Def("eye", 0, 1, EyeKernel, EyeShape, nullptr,
                 {AttrSpec{"num_rows", AttrKind::kInt, std::nullopt},
                  AttrSpec{"dtype", AttrKind::kDType, AttrValue(DType::kFloat32)}}));
  r.Register(Def("fill", 0, 1, FillKernel, FillShape, nullptr,
                 {AttrSpec{"shape", AttrKind::kShape, std::nullopt},
                  AttrSpec{"value", AttrKind::kFloat, AttrValue(0.0)},
                  AttrSpec{"dtype", AttrKind::kDType, AttrValue(DType::kFloat32)}}));
  r.Register(Def("zeros_like", 1, 1, ZerosLikeKernel, SameAsInputShape, ZeroGrad));
  r.Register(Def("ones_like", 1, 1, OnesLikeKernel, SameAsInputShape, ZeroGrad));

  OpDef normal = Def("random_normal", 0, 1, RandomNormalKernel, RandomNormalShape,
                     nullptr,
                     {AttrSpec{"shape", AttrKind::kShape, std::nullopt},
                      AttrSpec{"dtype", AttrKind::kDType, AttrValue(DType::kFloat32)}});
  normal.stateful = true;
  normal.resource = ResourceClass::kRng;
  r.Register(std::move(normal));

  OpDef dropout = Def("dropout", 1, 2, DropoutKernel, DropoutShape, DropoutGrad,
                      {AttrSpec{"rate", AttrKind::kFloat, std::nullopt}});
  dropout.stateful = true;
  dropout.resource = ResourceClass::kRng;
  r.Register(std::move(dropout));
}

}  // namespace kernels
}  // namespace stagehand
