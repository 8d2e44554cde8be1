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

#include "stagehand/op_registry.h"

#include <algorithm>
#include <chrono>
#include <mutex>

#include "kernel_util.h"
#include "stagehand/context.h"
#include "stagehand/device.h"
#include "stagehand/graph.h"
#include "stagehand/ops.h"
#include "stagehand/runtime.h"
#include "stagehand/tape.h"
#include "stagehand/trace.h"

namespace stagehand {

std::shared_ptr<const GraphFunction> FunctionResolver::Find(
    const std::string& name) const {
  for (const FunctionResolver* r = this; r != nullptr; r = r->parent_) {
    if (r->library_ != nullptr) {
      auto it = r->library_->find(name);
      if (it != r->library_->end()) return it->second;
    }
  }
  return Runtime::Get().FindFunction(name);
}

std::shared_ptr<const GraphFunction> FunctionResolver::Resolve(
    const std::string& name) const {
  auto fn = Find(name);
  if (fn == nullptr) {
    throw Error(ErrorCode::kMissingFunction,
                "function '" + name + "' is not in the library");
  }
  return fn;
}

Tensor GradContext::upstream(int i) const {
  if (has_upstream(i)) return *upstream_[static_cast<size_t>(i)];
  const TensorSpec& spec = output_spec(i);
  if (ExecutionContext::IsBuildingGraph()) {
    if (spec.shape.is_fully_defined()) {
      return ops::Fill(spec.shape, 0.0, spec.dtype);
    }
    return ops::ZerosLike(output(i));
  }
  Tensor out = output(i);
  return FilledTensor(out.dtype(), out.shape(), 0.0, out.device());
}

// ---------------------------------------------------------------------------
// Registry.

OpRegistry& OpRegistry::Global() {
  static OpRegistry* registry = [] {
    auto* r = new OpRegistry();
    RegisterBuiltinOps(*r);
    return r;
  }();
  return *registry;
}

void OpRegistry::Register(OpDef def) {
  std::unique_lock lock(mu_);
  if (ops_.count(def.name) != 0) {
    throw Error(ErrorCode::kDuplicateOp,
                "op '" + def.name + "' is already registered");
  }
  auto name = def.name;
  ops_.emplace(std::move(name), std::make_unique<OpDef>(std::move(def)));
}

const OpDef* OpRegistry::Find(std::string_view name) const {
  std::shared_lock lock(mu_);
  auto it = ops_.find(std::string(name));
  return it == ops_.end() ? nullptr : it->second.get();
}

const OpDef& OpRegistry::Lookup(std::string_view name) const {
  const OpDef* def = Find(name);
  if (def == nullptr) {
    throw Error(ErrorCode::kUnknownOp, "no op named '" + std::string(name) + "'");
  }
  return *def;
}

std::vector<const OpDef*> OpRegistry::List() const {
  std::vector<const OpDef*> out;
  {
    std::shared_lock lock(mu_);
    for (const auto& [name, def] : ops_) out.push_back(def.get());
  }
  std::sort(out.begin(), out.end(),
            [](const OpDef* a, const OpDef* b) { return a->name < b->name; });
  return out;
}

void RegisterOp(OpDef def) { OpRegistry::Global().Register(std::move(def)); }

std::vector<const OpDef*> KernelTable() { return OpRegistry::Global().List(); }

void RegisterBuiltinOps(OpRegistry& registry) {
  kernels::RegisterMathOps(registry);
  kernels::RegisterStateOps(registry);
  kernels::RegisterFunctionOps(registry);
  kernels::RegisterHostOps(registry);
}

// ---------------------------------------------------------------------------
// Validation.

void ValidateInvocation(const OpDef& def, size_t num_inputs, AttrMap& attrs) {
  if (def.input_arity != kVariadic &&
      num_inputs != static_cast<size_t>(def.input_arity)) {
    throw Error(ErrorCode::kArityMismatch,
                def.name + " takes " + std::to_string(def.input_arity) +
                    " inputs, got " + std::to_string(num_inputs));
  }
  for (const auto& [name, value] : attrs.entries()) {
    auto it = std::find_if(def.attrs.begin(), def.attrs.end(),
                           [&](const AttrSpec& s) { return s.name == name; });
    if (it == def.attrs.end()) {
      throw Error(ErrorCode::kAttrMismatch,
                  def.name + " has no attr '" + name + "'");
    }
    if (value.kind() != it->kind) {
      if (it->kind == AttrKind::kFloat && value.kind() == AttrKind::kInt) {
        attrs.Set(name, AttrValue(static_cast<double>(value.i())));
        continue;
      }
      throw Error(ErrorCode::kAttrMismatch,
                  def.name + " attr '" + name + "' expects " +
                      std::string(AttrKindName(it->kind)) + ", got " +
                      std::string(AttrKindName(value.kind())));
    }
  }
  for (const AttrSpec& spec : def.attrs) {
    if (attrs.Has(spec.name)) continue;
    if (!spec.default_value.has_value()) {
      throw Error(ErrorCode::kAttrMismatch,
                  def.name + " requires attr '" + spec.name + "'");
    }
    attrs.Set(spec.name, *spec.default_value);
  }
}

// ---------------------------------------------------------------------------
// Kernels.

namespace {

void SimulateLatency(int device) {
  const int64_t ns = Runtime::Get().options().accel_op_latency_ns;
  if (ns <= 0 || device == 0) return;
  const auto until =
      std::chrono::steady_clock::now() + std::chrono::nanoseconds(ns);
  while (std::chrono::steady_clock::now() < until) {
  }
}

}  // namespace

void RunKernelInto(const OpDef& def, std::span<const Tensor> inputs,
                   const AttrMap& attrs, int device,
                   const FunctionResolver& functions,
                   std::vector<Tensor>& outputs) {
  outputs.clear();
  KernelContext ctx{inputs, attrs, device, functions, std::move(outputs)};
  SimulateLatency(device);
  try {
    def.kernel(ctx);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kKernelError, def.name + ": " + e.what());
  }
  outputs = std::move(ctx.outputs);
  if (def.output_arity != kVariadic &&
      outputs.size() != static_cast<size_t>(def.output_arity)) {
    throw Error(ErrorCode::kKernelError,
                def.name + " kernel produced the wrong number of outputs");
  }
}

std::vector<Tensor> RunKernel(const OpDef& def, std::span<const Tensor> inputs,
                              const AttrMap& attrs, int device,
                              const FunctionResolver& functions) {
  std::vector<Tensor> outputs;
  RunKernelInto(def, inputs, attrs, device, functions, outputs);
  return outputs;
}

std::vector<TensorSpec> InferOutputSpecs(const OpDef& def,
                                         std::span<const TensorSpec> inputs,
                                         const AttrMap& attrs,
                                         const FunctionResolver& functions) {
  ShapeContext ctx{inputs, attrs, functions};
  auto specs = def.shape_fn(ctx);
  if (def.output_arity != kVariadic &&
      specs.size() != static_cast<size_t>(def.output_arity)) {
    throw Error(ErrorCode::kKernelError,
                def.name + " shape function produced the wrong output count");
  }
  return specs;
}

// ---------------------------------------------------------------------------
// Dispatch.

namespace {

// Graph-function calls switched to their forward variant return extra
// outputs that only the tape sees.
void TrimToPrimalOutputs(const AttrMap& attrs, std::vector<Tensor>& outputs) {
  const AttrValue* n = attrs.Find("num_primal_outputs");
  if (n != nullptr && n->i() >= 0 &&
      static_cast<size_t>(n->i()) < outputs.size()) {
    outputs.resize(static_cast<size_t>(n->i()));
  }
}

void WatchResourceInputs(std::span<const Tensor> inputs) {
  for (const Tensor& t : inputs) {
    if (t.is_resource()) WatchOnActiveTapes(t);
  }
}

}  // namespace

std::vector<Tensor> Dispatch(std::string_view op, std::vector<Tensor> inputs,
                             AttrMap attrs) {
  const OpDef& def = OpRegistry::Global().Lookup(op);
  ValidateInvocation(def, inputs.size(), attrs);
  for (const Tensor& t : inputs) {
    if (!t.defined()) {
      throw Error(ErrorCode::kArityMismatch,
                  def.name + " received an undefined tensor");
    }
  }

  const bool taped = !ExecutionContext::Current().tapes.empty();
  if (taped && def.watches_resources) WatchResourceInputs(inputs);
  const bool variant =
      taped && def.tape_variant != nullptr && AnyActiveTapeTracks(inputs);
  // May trace, which can reallocate the frame stack.
  if (variant) def.tape_variant(attrs);
  ContextFrame& frame = ExecutionContext::Current();

  std::vector<Tensor> outputs;
  if (frame.trace != nullptr) {
    outputs = frame.trace->RecordNode(def, inputs, attrs);
  } else {
    for (const Tensor& t : inputs) {
      if (t.is_symbolic()) {
        throw Error(ErrorCode::kSymbolicTensor,
                    def.name + ": symbolic tensor used outside its trace");
      }
    }
    auto& metrics = Runtime::Get().metrics();
    metrics.eager_dispatches.fetch_add(1, std::memory_order_relaxed);
    if (def.eager != nullptr) {
      return def.eager(inputs, attrs);
    }
    if (def.name != "call_function") {
      metrics.eager_primitive_dispatches.fetch_add(1,
                                                   std::memory_order_relaxed);
    }
    Placement placement =
        ResolvePlacement(inputs, ExecutionContext::ScopeDevice());
    outputs = RunKernel(def, placement.inputs, attrs, placement.device,
                        FunctionResolver());
  }
  if (taped) RecordOnActiveTapes(def, attrs, inputs, outputs);
  if (variant) TrimToPrimalOutputs(attrs, outputs);
  return outputs;
}

Tensor DispatchOne(std::string_view op, std::vector<Tensor> inputs,
                   AttrMap attrs) {
  auto outputs = Dispatch(op, std::move(inputs), std::move(attrs));
  if (outputs.size() != 1) {
    throw Error(ErrorCode::kArityMismatch,
                std::string(op) + " does not have exactly one output");
  }
  return std::move(outputs[0]);
}

}  // namespace stagehand
