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

#include "stagehand/variable.h"

#include <cstring>

#include "kernel_util.h"
#include "stagehand/context.h"
#include "stagehand/device.h"
#include "stagehand/op_registry.h"
#include "stagehand/trace.h"

namespace stagehand {

VariableStorage::VariableStorage(Tensor initial, int device)
    : dtype_(initial.dtype()),
      shape_(initial.shape()),
      device_(device),
      value_(CopyTo(initial, device)) {
  if (value_.id() == initial.id()) {
    // Own a private buffer even when no device copy was needed.
    auto impl = Tensor::AllocateImpl(dtype_, shape_, device_);
    if (initial.num_bytes() > 0) {
      std::memcpy(impl->data.get(), initial.raw(), initial.num_bytes());
    }
    value_ = Tensor(std::move(impl));
  }
}

Tensor VariableStorage::Read() const {
  auto impl = Tensor::AllocateImpl(dtype_, shape_, device_);
  std::lock_guard<std::mutex> lock(mu_);
  if (value_.num_bytes() > 0) {
    std::memcpy(impl->data.get(), value_.raw(), value_.num_bytes());
  }
  return Tensor(std::move(impl));
}

void VariableStorage::Check(const Tensor& value) const {
  if (!value.is_concrete()) {
    throw Error(ErrorCode::kSymbolicTensor, "variable values must be concrete");
  }
  if (value.dtype() != dtype_ || value.shape() != shape_) {
    throw Error(ErrorCode::kShapeMismatch,
                "variable holds " + std::string(DTypeName(dtype_)) +
                    shape_.ToString() + ", got " +
                    std::string(DTypeName(value.dtype())) +
                    value.shape().ToString());
  }
}

void VariableStorage::Assign(const Tensor& value) {
  Check(value);
  auto impl = Tensor::AllocateImpl(dtype_, shape_, device_);
  if (value.num_bytes() > 0) {
    std::memcpy(impl->data.get(), value.raw(), value.num_bytes());
  }
  Tensor fresh(std::move(impl));
  std::lock_guard<std::mutex> lock(mu_);
  value_ = std::move(fresh);
}

void VariableStorage::AssignAdd(const Tensor& value) {
  Check(value);
  auto impl = Tensor::AllocateImpl(dtype_, shape_, device_);
  std::lock_guard<std::mutex> lock(mu_);
  kernels::VisitNumeric(dtype_, [&]<typename T>() {
    const T* a = value_.data<T>().data();
    const T* b = value.data<T>().data();
    T* out = kernels::MutableData<T>(*impl);
    for (int64_t i = 0; i < shape_.num_elements(); ++i) out[i] = a[i] + b[i];
  });
  value_ = Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------

Variable::Variable(const Tensor& initial) {
  if (!initial.is_concrete()) {
    throw Error(ErrorCode::kSymbolicTensor,
                "a variable's initial value must be concrete");
  }
  const int device =
      ExecutionContext::ScopeDevice().value_or(initial.device());
  storage_ = std::make_shared<VariableStorage>(initial, device);
  handle_ = Tensor::ResourceHandle(initial.dtype(), initial.shape(), device,
                                   storage_);
  if (TraceState* trace = ExecutionContext::InnermostTrace()) {
    trace->NoteVariableCreated();
  }
}

Variable Variable::FromInitializer(const std::function<Tensor()>& init) {
  EscapeTrace escape;
  return Variable(init());
}

Tensor Variable::Read() const {
  return DispatchOne("read_variable", {handle_});
}

void Variable::Assign(const Tensor& value) const {
  Dispatch("assign_variable", {handle_, value});
}

void Variable::AssignAdd(const Tensor& value) const {
  Dispatch("assign_add_variable", {handle_, value});
}

// ---------------------------------------------------------------------------
// Kernels.

namespace kernels {
namespace {

std::shared_ptr<VariableStorage> Storage(const Tensor& handle) {
  if (!handle.is_resource()) {
    Fail("expected a variable handle, got " + handle.DebugString());
  }
  auto storage = handle.variable().lock();
  if (storage == nullptr) {
    throw Error(ErrorCode::kDeadVariable,
                "the variable referenced by this graph no longer exists");
  }
  return storage;
}

void ReadKernel(KernelContext& ctx) {
  ctx.outputs.push_back(Storage(ctx.inputs[0])->Read());
}

void AssignKernel(KernelContext& ctx) {
  Storage(ctx.inputs[0])->Assign(ctx.inputs[1]);
}

void AssignAddKernel(KernelContext& ctx) {
  Storage(ctx.inputs[0])->AssignAdd(ctx.inputs[1]);
}

std::vector<TensorSpec> ReadShape(const ShapeContext& ctx) {
  const TensorSpec& h = ctx.inputs[0];
  if (!h.is_resource) Fail("read_variable expects a variable handle");
  return {TensorSpec{h.dtype, h.shape, false}};
}

std::vector<TensorSpec> AssignShape(const ShapeContext& ctx) {
  const TensorSpec& h = ctx.inputs[0];
  const TensorSpec& v = ctx.inputs[1];
  if (!h.is_resource) Fail("assignment expects a variable handle");
  if (h.dtype != v.dtype || !h.shape.IsCompatibleWith(v.shape)) {
    throw Error(ErrorCode::kShapeMismatch,
                "variable holds " + std::string(DTypeName(h.dtype)) +
                    h.shape.ToString() + ", got " +
                    std::string(DTypeName(v.dtype)) + v.shape.ToString());
  }
  return {};
}

std::vector<std::optional<Tensor>> ReadGrad(GradContext& g) {
  return {g.upstream(0)};
}

OpDef StateOp(std::string name, int inputs, int outputs, KernelFn kernel,
              ShapeFn shape, GradientFn grad) {
  OpDef def;
  def.name = std::move(name);
  def.input_arity = inputs;
  def.output_arity = outputs;
  def.kernel = kernel;
  def.shape_fn = shape;
  def.gradient = grad;
  def.stateful = true;
  def.resource = ResourceClass::kVariable;
  return def;
}

}  // namespace

void RegisterStateOps(OpRegistry& r) {
  OpDef read = StateOp("read_variable", 1, 1, ReadKernel, ReadShape, ReadGrad);
  read.watches_resources = true;
  r.Register(std::move(read));
  r.Register(
      StateOp("assign_variable", 2, 0, AssignKernel, AssignShape, nullptr));
  r.Register(StateOp("assign_add_variable", 2, 0, AssignAddKernel, AssignShape,
                     nullptr));
}

}  // namespace kernels
}  // namespace stagehand
