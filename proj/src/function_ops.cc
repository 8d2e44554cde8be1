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

// Higher-order ops: graph-function calls and tensor-dependent control flow.
// Each names its callee(s) through function attrs and runs them with the
// graph executor in both eager and staged modes.

#include <cstring>
#include <unordered_set>

#include "function_grad.h"
#include "kernel_util.h"
#include "stagehand/ops.h"
#include "stagehand/trace.h"

namespace stagehand {

namespace kernels {
namespace {

size_t IntAttr(const AttrMap& attrs, std::string_view name) {
  const int64_t v = attrs.Get(name).i();
  if (v < 0) Fail(std::string(name) + " must be non-negative");
  return static_cast<size_t>(v);
}

void CheckCallInputs(const GraphFunction& fn,
                     std::span<const TensorSpec> inputs) {
  const auto& params = fn.inputs();
  if (params.size() != inputs.size()) {
    throw Error(ErrorCode::kInputMismatch,
                fn.name() + " takes " + std::to_string(params.size()) +
                    " inputs, got " + std::to_string(inputs.size()));
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    const TensorSpec& p = params[i].spec;
    if (p.dtype != inputs[i].dtype || p.is_resource != inputs[i].is_resource ||
        !p.shape.IsCompatibleWith(inputs[i].shape)) {
      throw Error(ErrorCode::kInputMismatch,
                  fn.name() + " input " + std::to_string(i) + " expects " +
                      p.ToString() + ", got " + inputs[i].ToString());
    }
  }
}

std::vector<Tensor> Run(const GraphFunction& fn, std::span<const Tensor> inputs,
                        const KernelContext& ctx) {
  ExecuteOptions options;
  options.device = ctx.device;
  return Execute(fn, inputs, options, &ctx.functions);
}

// call_function ---------------------------------------------------------

// A function may return one of its inputs, or one value twice. Tapes key
// values by id, so every output gets an identity of its own.
void MakeOutputsDistinct(std::span<const Tensor> inputs,
                         std::vector<Tensor>& outputs) {
  std::unordered_set<uint64_t> seen;
  for (const Tensor& t : inputs) seen.insert(t.id());
  for (Tensor& t : outputs) {
    if (seen.insert(t.id()).second || t.is_resource()) continue;
    auto impl = Tensor::AllocateImpl(t.dtype(), t.shape(), t.device());
    if (t.num_bytes() > 0) std::memcpy(impl->data.get(), t.raw(), t.num_bytes());
    t = Tensor(std::move(impl));
    seen.insert(t.id());
  }
}

void CallKernel(KernelContext& ctx) {
  auto fn = ctx.functions.Resolve(ctx.attrs.Get("f").func());
  ctx.outputs = Run(*fn, ctx.inputs, ctx);
  MakeOutputsDistinct(ctx.inputs, ctx.outputs);
}

std::vector<TensorSpec> CallShape(const ShapeContext& ctx) {
  auto fn = ctx.functions.Resolve(ctx.attrs.Get("f").func());
  CheckCallInputs(*fn, ctx.inputs);
  return fn->output_specs();
}

std::vector<std::optional<Tensor>> CallGrad(GradContext& g) {
  const std::string& backward = g.attrs().Get("backward").func();
  const int64_t n = g.attrs().Get("num_primal_outputs").i();
  if (backward.empty() || n < 0) {
    throw Error(ErrorCode::kNoGradient,
                "call to '" + g.attrs().Get("f").func() +
                    "' was not recorded with a backward function");
  }
  bool saved_grads = false;
  for (int i = static_cast<int>(n); i < g.num_outputs(); ++i) {
    saved_grads = saved_grads || (g.has_upstream(i) &&
                                  IsFloating(g.output_spec(i).dtype));
  }
  std::vector<Tensor> inputs;
  if (saved_grads) {
    // Higher-order case: gradient also reaches the saved intermediates.
    auto fn = FunctionResolver().Resolve(g.attrs().Get("f").func());
    for (int i = 0; i < g.num_inputs(); ++i) inputs.push_back(g.input(i));
    for (int i = 0; i < g.num_outputs(); ++i) inputs.push_back(g.upstream(i));
    auto grads = ops::CallFunction(GetRecomputeVjp(fn), std::move(inputs));
    return {grads.begin(), grads.end()};
  }
  for (int i = 0; i < n; ++i) inputs.push_back(g.upstream(i));
  for (int i = static_cast<int>(n); i < g.num_outputs(); ++i) {
    inputs.push_back(g.output(i));
  }
  std::vector<bool> keep;
  for (int i = 0; i < g.num_inputs(); ++i) keep.push_back(g.needs_input(i));
  auto grads =
      ops::CallFunction(GetOutputSubset(backward, keep), std::move(inputs));
  std::vector<std::optional<Tensor>> result(static_cast<size_t>(g.num_inputs()));
  for (size_t i = 0, k = 0; i < keep.size(); ++i) {
    if (keep[i]) result[i] = grads[k++];
  }
  return result;
}

void CallTapeVariant(AttrMap& attrs) {
  const AttrValue* backward = attrs.Find("backward");
  if (backward != nullptr && !backward->func().empty()) return;
  auto fn = FunctionResolver().Resolve(attrs.Get("f").func());
  ForwardBackward fb = GetForwardBackward(fn);
  attrs.Set("f", AttrValue(FunctionRef{fb.forward}));
  attrs.Set("backward", AttrValue(FunctionRef{fb.backward}));
  attrs.Set("num_primal_outputs",
            AttrValue(static_cast<int64_t>(fb.num_outputs)));
}

// cond ------------------------------------------------------------------

bool ScalarPredicate(const Tensor& pred, std::string_view op) {
  if (pred.dtype() != DType::kBool || pred.num_elements() != 1) {
    Fail(std::string(op) + " predicate must be a single boolean, got " +
         pred.DebugString());
  }
  return pred.data<bool>()[0];
}

void CondKernel(KernelContext& ctx) {
  const size_t num_operands = IntAttr(ctx.attrs, "num_operands");
  const size_t num_then = IntAttr(ctx.attrs, "num_then_captures");
  if (ctx.inputs.size() < 1 + num_operands + num_then) {
    Fail("cond has fewer inputs than its attrs declare");
  }
  const bool take_then = ScalarPredicate(ctx.inputs[0], "cond");
  auto fn = ctx.functions.Resolve(
      ctx.attrs.Get(take_then ? "then_branch" : "else_branch").func());
  std::vector<Tensor> inputs(ctx.inputs.begin() + 1,
                             ctx.inputs.begin() + 1 +
                                 static_cast<std::ptrdiff_t>(num_operands));
  auto caps = take_then
                  ? ctx.inputs.subspan(1 + num_operands, num_then)
                  : ctx.inputs.subspan(1 + num_operands + num_then);
  inputs.insert(inputs.end(), caps.begin(), caps.end());
  ctx.outputs = Run(*fn, inputs, ctx);
}

std::vector<TensorSpec> CondShape(const ShapeContext& ctx) {
  const size_t num_operands = IntAttr(ctx.attrs, "num_operands");
  const size_t num_then = IntAttr(ctx.attrs, "num_then_captures");
  if (ctx.inputs.size() < 1 + num_operands + num_then) {
    Fail("cond has fewer inputs than its attrs declare");
  }
  const TensorSpec& pred = ctx.inputs[0];
  if (pred.dtype != DType::kBool ||
      (pred.shape.is_fully_defined() && pred.shape.num_elements() != 1)) {
    Fail("cond predicate must be a single boolean");
  }
  auto then_fn = ctx.functions.Resolve(ctx.attrs.Get("then_branch").func());
  auto else_fn = ctx.functions.Resolve(ctx.attrs.Get("else_branch").func());
  std::vector<TensorSpec> then_in(ctx.inputs.begin() + 1,
                                  ctx.inputs.begin() + 1 +
                                      static_cast<std::ptrdiff_t>(num_operands));
  std::vector<TensorSpec> else_in = then_in;
  auto then_caps = ctx.inputs.subspan(1 + num_operands, num_then);
  auto else_caps = ctx.inputs.subspan(1 + num_operands + num_then);
  then_in.insert(then_in.end(), then_caps.begin(), then_caps.end());
  else_in.insert(else_in.end(), else_caps.begin(), else_caps.end());
  CheckCallInputs(*then_fn, then_in);
  CheckCallInputs(*else_fn, else_in);

  auto a = then_fn->output_specs();
  auto b = else_fn->output_specs();
  if (a.size() != b.size()) Fail("cond branches return different arity");
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].dtype != b[i].dtype) Fail("cond branches return different dtypes");
    if (a[i].shape == b[i].shape) continue;
    if (a[i].shape.rank() != b[i].shape.rank()) {
      Fail("cond branches return different ranks");
    }
    std::vector<int64_t> dims(a[i].shape.dims().begin(), a[i].shape.dims().end());
    for (int d = 0; d < a[i].shape.rank(); ++d) {
      if (dims[static_cast<size_t>(d)] != b[i].shape.dim(d)) {
        dims[static_cast<size_t>(d)] = kUnknownDim;
      }
    }
    a[i].shape = Shape(std::move(dims));
  }
  return a;
}

// while_loop ------------------------------------------------------------

void WhileKernel(KernelContext& ctx) {
  const size_t n = IntAttr(ctx.attrs, "num_loop_vars");
  const size_t num_cond = IntAttr(ctx.attrs, "num_cond_captures");
  if (ctx.inputs.size() < n + num_cond) {
    Fail("while_loop has fewer inputs than its attrs declare");
  }
  auto cond_fn = ctx.functions.Resolve(ctx.attrs.Get("cond_fn").func());
  auto body_fn = ctx.functions.Resolve(ctx.attrs.Get("body_fn").func());
  auto cond_caps = ctx.inputs.subspan(n, num_cond);
  auto body_caps = ctx.inputs.subspan(n + num_cond);
  std::vector<Tensor> vars(ctx.inputs.begin(),
                           ctx.inputs.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<Tensor> args;
  for (;;) {
    args = vars;
    args.insert(args.end(), cond_caps.begin(), cond_caps.end());
    auto c = Run(*cond_fn, args, ctx);
    if (c.size() != 1 || !ScalarPredicate(c[0], "while_loop")) break;
    args = std::move(vars);
    args.insert(args.end(), body_caps.begin(), body_caps.end());
    vars = Run(*body_fn, args, ctx);
    if (vars.size() != n) Fail("while_loop body changed the loop arity");
  }
  ctx.outputs = std::move(vars);
}

std::vector<TensorSpec> WhileShape(const ShapeContext& ctx) {
  const size_t n = IntAttr(ctx.attrs, "num_loop_vars");
  const size_t num_cond = IntAttr(ctx.attrs, "num_cond_captures");
  if (ctx.inputs.size() < n + num_cond) {
    Fail("while_loop has fewer inputs than its attrs declare");
  }
  auto cond_fn = ctx.functions.Resolve(ctx.attrs.Get("cond_fn").func());
  auto body_fn = ctx.functions.Resolve(ctx.attrs.Get("body_fn").func());
  std::vector<TensorSpec> vars(ctx.inputs.begin(),
                               ctx.inputs.begin() +
                                   static_cast<std::ptrdiff_t>(n));
  std::vector<TensorSpec> cond_in = vars;
  auto cond_caps = ctx.inputs.subspan(n, num_cond);
  cond_in.insert(cond_in.end(), cond_caps.begin(), cond_caps.end());
  std::vector<TensorSpec> body_in = vars;
  auto body_caps = ctx.inputs.subspan(n + num_cond);
  body_in.insert(body_in.end(), body_caps.begin(), body_caps.end());
  CheckCallInputs(*cond_fn, cond_in);
  CheckCallInputs(*body_fn, body_in);
  auto c = cond_fn->output_specs();
  if (c.size() != 1 || c[0].dtype != DType::kBool) {
    Fail("while_loop condition must return one boolean");
  }
  auto out = body_fn->output_specs();
  if (out.size() != n) Fail("while_loop body changed the loop arity");
  for (size_t i = 0; i < n; ++i) {
    if (out[i].dtype != vars[i].dtype ||
        !out[i].shape.IsCompatibleWith(vars[i].shape)) {
      Fail("while_loop body changed loop variable " + std::to_string(i) +
           " from " + vars[i].ToString() + " to " + out[i].ToString());
    }
  }
  return vars;
}

OpDef HigherOrder(std::string name, KernelFn kernel, ShapeFn shape,
                  std::vector<AttrSpec> attrs) {
  OpDef def;
  def.name = std::move(name);
  def.input_arity = kVariadic;
  def.output_arity = kVariadic;
  def.kernel = kernel;
  def.shape_fn = shape;
  def.attrs = std::move(attrs);
  return def;
}

}  // namespace

void RegisterFunctionOps(OpRegistry& r) {
  OpDef call = HigherOrder(
      "call_function", CallKernel, CallShape,
      {AttrSpec{"f", AttrKind::kFunc, std::nullopt},
       AttrSpec{"backward", AttrKind::kFunc, AttrValue(FunctionRef{""})},
       AttrSpec{"num_primal_outputs", AttrKind::kInt, AttrValue(-1)}});
  call.gradient = CallGrad;
  call.tape_variant = CallTapeVariant;
  call.watches_resources = true;
  r.Register(std::move(call));

  r.Register(HigherOrder("cond", CondKernel, CondShape,
                         {AttrSpec{"then_branch", AttrKind::kFunc, std::nullopt},
                          AttrSpec{"else_branch", AttrKind::kFunc, std::nullopt},
                          AttrSpec{"num_operands", AttrKind::kInt, std::nullopt},
                          AttrSpec{"num_then_captures", AttrKind::kInt,
                                   std::nullopt}}));
  r.Register(HigherOrder(
      "while_loop", WhileKernel, WhileShape,
      {AttrSpec{"cond_fn", AttrKind::kFunc, std::nullopt},
       AttrSpec{"body_fn", AttrKind::kFunc, std::nullopt},
       AttrSpec{"num_loop_vars", AttrKind::kInt, std::nullopt},
       AttrSpec{"num_cond_captures", AttrKind::kInt, std::nullopt}}));
}

}  // namespace kernels

namespace ops {

namespace {

std::vector<TensorSpec> SpecsOf(const std::vector<Tensor>& values) {
  std::vector<TensorSpec> specs;
  for (const Tensor& t : values) specs.push_back(t.spec());
  return specs;
}

}  // namespace

std::vector<Tensor> Cond(const Tensor& pred, const BranchFn& then_fn,
                         const BranchFn& else_fn,
                         const std::vector<Tensor>& operands) {
  const auto specs = SpecsOf(operands);
  ConcreteFunction then_cf = TraceFunction("cond_then", specs, then_fn);
  ConcreteFunction else_cf = TraceFunction("cond_else", specs, else_fn);
  std::vector<Tensor> inputs{pred};
  inputs.insert(inputs.end(), operands.begin(), operands.end());
  inputs.insert(inputs.end(), then_cf.captures.begin(), then_cf.captures.end());
  inputs.insert(inputs.end(), else_cf.captures.begin(), else_cf.captures.end());
  return Dispatch(
      "cond", std::move(inputs),
      {{"then_branch", AttrValue(FunctionRef{then_cf.graph->name()})},
       {"else_branch", AttrValue(FunctionRef{else_cf.graph->name()})},
       {"num_operands", AttrValue(static_cast<int64_t>(operands.size()))},
       {"num_then_captures",
        AttrValue(static_cast<int64_t>(then_cf.captures.size()))}});
}

std::vector<Tensor> WhileLoop(const BranchFn& cond_fn, const BranchFn& body_fn,
                              const std::vector<Tensor>& loop_vars) {
  const auto specs = SpecsOf(loop_vars);
  ConcreteFunction cond_cf = TraceFunction("while_cond", specs, cond_fn);
  ConcreteFunction body_cf = TraceFunction("while_body", specs, body_fn);
  std::vector<Tensor> inputs = loop_vars;
  inputs.insert(inputs.end(), cond_cf.captures.begin(), cond_cf.captures.end());
  inputs.insert(inputs.end(), body_cf.captures.begin(), body_cf.captures.end());
  return Dispatch(
      "while_loop", std::move(inputs),
      {{"cond_fn", AttrValue(FunctionRef{cond_cf.graph->name()})},
       {"body_fn", AttrValue(FunctionRef{body_cf.graph->name()})},
       {"num_loop_vars", AttrValue(static_cast<int64_t>(loop_vars.size()))},
       {"num_cond_captures",
        AttrValue(static_cast<int64_t>(cond_cf.captures.size()))}});
}

}  // namespace ops
}  // namespace stagehand
