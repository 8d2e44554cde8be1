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

#include "stagehand/ops.h"

#include "stagehand/context.h"

namespace stagehand {
namespace ops {

Tensor Constant(const Tensor& value) {
  if (!value.is_concrete()) {
    throw Error(ErrorCode::kSymbolicTensor, "constant value must be concrete");
  }
  return DispatchOne("constant", {}, {{"value", AttrValue(value)}});
}

Tensor Constant(std::initializer_list<double> values, const Shape& shape,
                DType dtype) {
  return Constant(TensorFromHost(values, shape, dtype));
}

Tensor Scalar(double value, DType dtype) {
  return Constant(ScalarTensor(value, dtype));
}

Tensor Identity(const Tensor& x) { return DispatchOne("identity", {x}); }
Tensor Add(const Tensor& a, const Tensor& b) {
  return DispatchOne("add", {a, b});
}
Tensor Sub(const Tensor& a, const Tensor& b) {
  return DispatchOne("sub", {a, b});
}
Tensor Mul(const Tensor& a, const Tensor& b) {
  return DispatchOne("mul", {a, b});
}
Tensor Div(const Tensor& a, const Tensor& b) {
  return DispatchOne("div", {a, b});
}
Tensor Neg(const Tensor& x) { return DispatchOne("neg", {x}); }
Tensor Exp(const Tensor& x) { return DispatchOne("exp", {x}); }
Tensor Log(const Tensor& x) { return DispatchOne("log", {x}); }
Tensor Relu(const Tensor& x) { return DispatchOne("relu", {x}); }
Tensor Softplus(const Tensor& x) { return DispatchOne("softplus", {x}); }
Tensor Sigmoid(const Tensor& x) { return DispatchOne("sigmoid", {x}); }
Tensor MatMul(const Tensor& a, const Tensor& b) {
  return DispatchOne("matmul", {a, b});
}
Tensor Transpose(const Tensor& x) { return DispatchOne("transpose", {x}); }
Tensor Greater(const Tensor& a, const Tensor& b) {
  return DispatchOne("greater", {a, b});
}
Tensor Less(const Tensor& a, const Tensor& b) {
  return DispatchOne("less", {a, b});
}

Tensor ReduceSum(const Tensor& x, std::vector<int64_t> axes, bool keepdims) {
  return DispatchOne("reduce_sum", {x},
                     {{"axes", AttrValue(std::move(axes))},
                      {"keepdims", AttrValue(keepdims)}});
}

Tensor ReduceMean(const Tensor& x, std::vector<int64_t> axes, bool keepdims) {
  return DispatchOne("reduce_mean", {x},
                     {{"axes", AttrValue(std::move(axes))},
                      {"keepdims", AttrValue(keepdims)}});
}

Tensor Reshape(const Tensor& x, const Shape& shape) {
  return DispatchOne("reshape", {x}, {{"shape", AttrValue(shape)}});
}
Tensor ReshapeLike(const Tensor& x, const Tensor& like) {
  return DispatchOne("reshape_like", {x, like});
}
Tensor BroadcastLike(const Tensor& x, const Tensor& like) {
  return DispatchOne("broadcast_like", {x, like});
}
Tensor SumToLike(const Tensor& x, const Tensor& like) {
  return DispatchOne("sum_to_like", {x, like});
}

Tensor Eye(int64_t num_rows, DType dtype) {
  return DispatchOne("eye", {},
                     {{"num_rows", AttrValue(num_rows)},
                      {"dtype", AttrValue(dtype)}});
}

Tensor Fill(const Shape& shape, double value, DType dtype) {
  return DispatchOne("fill", {},
                     {{"shape", AttrValue(shape)},
                      {"value", AttrValue(value)},
                      {"dtype", AttrValue(dtype)}});
}

Tensor ZerosLike(const Tensor& x) { return DispatchOne("zeros_like", {x}); }
Tensor OnesLike(const Tensor& x) { return DispatchOne("ones_like", {x}); }

Tensor RandomNormal(const Shape& shape, DType dtype) {
  return DispatchOne("random_normal", {},
                     {{"shape", AttrValue(shape)}, {"dtype", AttrValue(dtype)}});
}

Tensor Dropout(const Tensor& x, double rate) {
  return Dispatch("dropout", {x}, {{"rate", AttrValue(rate)}})[0];
}

Tensor ReluGrad(const Tensor& dy, const Tensor& x) {
  return DispatchOne("relu_grad", {dy, x});
}

Tensor ReduceGrad(const Tensor& dy, const Tensor& x,
                  const std::vector<int64_t>& axes, bool keepdims, bool mean) {
  return DispatchOne("reduce_grad", {dy, x},
                     {{"axes", AttrValue(axes)},
                      {"keepdims", AttrValue(keepdims)},
                      {"mean", AttrValue(mean)}});
}

std::vector<Tensor> CallFunction(const std::string& name,
                                 std::vector<Tensor> inputs) {
  return Dispatch("call_function", std::move(inputs),
                  {{"f", AttrValue(FunctionRef{name})}});
}

}  // namespace ops
}  // namespace stagehand
