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

#ifndef STAGEHAND_OPS_H_
#define STAGEHAND_OPS_H_

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "stagehand/op_registry.h"
#include "stagehand/tensor.h"

namespace stagehand {
namespace ops {

// Embeds `value` as a constant. Inside a trace the value is frozen into the
// graph.
Tensor Constant(const Tensor& value);
Tensor Constant(std::initializer_list<double> values, const Shape& shape,
                DType dtype = DType::kFloat32);
Tensor Scalar(double value, DType dtype = DType::kFloat32);

Tensor Identity(const Tensor& x);
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Div(const Tensor& a, const Tensor& b);
Tensor Neg(const Tensor& x);
Tensor Exp(const Tensor& x);
Tensor Log(const Tensor& x);
Tensor Relu(const Tensor& x);
Tensor Softplus(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
Tensor MatMul(const Tensor& a, const Tensor& b);
Tensor Transpose(const Tensor& x);
Tensor Greater(const Tensor& a, const Tensor& b);
Tensor Less(const Tensor& a, const Tensor& b);

// Empty `axes` reduces every dimension.
Tensor ReduceSum(const Tensor& x, std::vector<int64_t> axes = {},
                 bool keepdims = false);
Tensor ReduceMean(const Tensor& x, std::vector<int64_t> axes = {},
                  bool keepdims = false);

// One extent may be kUnknownDim and is inferred.
Tensor Reshape(const Tensor& x, const Shape& shape);
Tensor ReshapeLike(const Tensor& x, const Tensor& like);
Tensor BroadcastLike(const Tensor& x, const Tensor& like);
Tensor SumToLike(const Tensor& x, const Tensor& like);

Tensor Eye(int64_t num_rows, DType dtype = DType::kFloat32);
Tensor Fill(const Shape& shape, double value, DType dtype = DType::kFloat32);
Tensor ZerosLike(const Tensor& x);
Tensor OnesLike(const Tensor& x);

// Stateful: draws from the runtime random stream.
Tensor RandomNormal(const Shape& shape, DType dtype = DType::kFloat32);
// Zeroes each element with probability `rate`, scaling survivors by
// 1 / (1 - rate).
Tensor Dropout(const Tensor& x, double rate);

// Gradient helpers.
Tensor ReluGrad(const Tensor& dy, const Tensor& x);
Tensor ReduceGrad(const Tensor& dy, const Tensor& x,
                  const std::vector<int64_t>& axes, bool keepdims, bool mean);

// Executes the named graph function as a single op.
std::vector<Tensor> CallFunction(const std::string& name,
                                 std::vector<Tensor> inputs);

using BranchFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

// Tensor-dependent control flow. Branches, predicate and body are traced
// into graph functions and run by a single op in both modes.
std::vector<Tensor> Cond(const Tensor& pred, const BranchFn& then_fn,
                         const BranchFn& else_fn,
                         const std::vector<Tensor>& operands);
std::vector<Tensor> WhileLoop(const BranchFn& cond_fn, const BranchFn& body_fn,
                              const std::vector<Tensor>& loop_vars);

}  // namespace ops

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  return ops::Add(a, b);
}
inline Tensor operator-(const Tensor& a, const Tensor& b) {
  return ops::Sub(a, b);
}
inline Tensor operator*(const Tensor& a, const Tensor& b) {
  return ops::Mul(a, b);
}
inline Tensor operator/(const Tensor& a, const Tensor& b) {
  return ops::Div(a, b);
}
inline Tensor operator-(const Tensor& x) { return ops::Neg(x); }

}  // namespace stagehand

#endif  // STAGEHAND_OPS_H_
