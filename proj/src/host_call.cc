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

#include "stagehand/host_call.h"

#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>

#include "kernel_util.h"
#include "stagehand/context.h"
#include "stagehand/ops.h"
#include "stagehand/runtime.h"
#include "stagehand/tape.h"

namespace stagehand {

namespace {

std::vector<TensorSpec> SpecsOf(std::span<const Tensor> tensors) {
  std::vector<TensorSpec> specs;
  for (const Tensor& t : tensors) specs.push_back(t.spec());
  return specs;
}

struct HostCallback {
  HostCallbackFn fn;
  std::vector<TensorSpec> signature;
  // Set for callbacks whose output specs depend on their inputs.
  std::function<std::vector<TensorSpec>(const std::vector<TensorSpec>&)>
      derive_signature;

  std::vector<TensorSpec> SignatureFor(
      const std::vector<TensorSpec>& inputs) const {
    return derive_signature ? derive_signature(inputs) : signature;
  }
};

struct CallbackRegistry {
  std::shared_mutex mu;
  std::map<int64_t, std::shared_ptr<const HostCallback>> entries;
  // Callback id to the id of its derived gradient callback.
  std::map<int64_t, int64_t> vjps;
  int64_t next_id = 1;
};

CallbackRegistry& Callbacks() {
  static auto* registry = new CallbackRegistry;
  return *registry;
}

std::shared_ptr<const HostCallback> FindCallback(int64_t id) {
  auto& r = Callbacks();
  std::shared_lock lock(r.mu);
  auto it = r.entries.find(id);
  if (it == r.entries.end()) {
    throw Error(ErrorCode::kCallbackError,
                "no host callback with id " + std::to_string(id));
  }
  return it->second;
}

// The single host-callback slot. Recursive: a callback may run a graph that
// itself calls back into the host.
std::recursive_mutex& HostSlot() {
  static std::recursive_mutex mu;
  return mu;
}

template <typename F>
auto InHostSlot(F&& f) {
  if (Runtime::Get().options().serialize_host_calls) {
    std::lock_guard lock(HostSlot());
    return f();
  }
  return f();
}

void CheckSignature(const std::vector<Tensor>& outputs,
                    const std::vector<TensorSpec>& signature) {
  if (outputs.size() != signature.size()) {
    throw Error(ErrorCode::kSignatureViolation,
                "host callback returned " + std::to_string(outputs.size()) +
                    " values, declared " + std::to_string(signature.size()));
  }
  for (size_t i = 0; i < outputs.size(); ++i) {
    if (!outputs[i].defined() || outputs[i].is_resource() ||
        outputs[i].dtype() != signature[i].dtype ||
        !outputs[i].shape().IsCompatibleWith(signature[i].shape)) {
      throw Error(ErrorCode::kSignatureViolation,
                  "host callback output " + std::to_string(i) + " is " +
                      (outputs[i].defined() ? outputs[i].spec().ToString()
                                            : std::string("undefined")) +
                      ", declared " + signature[i].ToString());
    }
  }
}

// Runs the callback in a fresh eager frame that hides any enclosing trace,
// as graph execution does.
std::vector<Tensor> InvokeIsolated(const HostCallback& cb,
                                   const std::vector<Tensor>& inputs) {
  Runtime::Get().metrics().host_calls.fetch_add(1, std::memory_order_relaxed);
  return InHostSlot([&] {
    ContextFrame isolated;
    isolated.isolated = true;
    FrameGuard frame(std::move(isolated));
    std::vector<Tensor> outputs;
    try {
      outputs = cb.fn(inputs);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kCallbackError) throw;
      throw Error(ErrorCode::kCallbackError, e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kCallbackError, e.what());
    }
    for (Tensor& t : outputs) {
      if (t.defined() && t.is_symbolic()) {
        throw Error(ErrorCode::kSignatureViolation,
                    "host callback returned a symbolic tensor");
      }
    }
    CheckSignature(outputs, cb.SignatureFor(SpecsOf(inputs)));
    return outputs;
  });
}

int64_t Register(std::shared_ptr<HostCallback> cb) {
  auto& r = Callbacks();
  std::unique_lock lock(r.mu);
  const int64_t id = r.next_id++;
  r.entries.emplace(id, std::move(cb));
  return id;
}

// Runs `cb` on `inputs` under a tape and pulls `upstream` back to the
// floating inputs. Other inputs get zeros.
std::vector<Tensor> PullBack(const HostCallback& cb,
                             std::span<const Tensor> upstream,
                             const std::vector<Tensor>& inputs) {
  GradientTape tape;
  std::vector<Tensor> sources;
  std::vector<size_t> source_index;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!IsFloating(inputs[i].dtype()) || inputs[i].is_resource()) continue;
    tape.Watch(inputs[i]);
    sources.push_back(inputs[i]);
    source_index.push_back(i);
  }
  std::vector<Tensor> outputs = cb.fn(inputs);
  CheckSignature(outputs, cb.SignatureFor(SpecsOf(inputs)));
  std::vector<Tensor> targets;
  std::vector<Tensor> seeds;
  for (size_t i = 0; i < outputs.size(); ++i) {
    if (!IsFloating(outputs[i].dtype())) continue;
    targets.push_back(outputs[i]);
    seeds.push_back(upstream[i]);
  }
  std::vector<Tensor> grads;
  if (!sources.empty() && !targets.empty()) {
    grads = tape.tape().ComputeGradients(targets, seeds, sources);
  }
  tape.Stop();
  std::vector<Tensor> result;
  for (const Tensor& a : inputs) result.push_back(ops::ZerosLike(a));
  for (size_t k = 0; k < grads.size(); ++k) {
    result[source_index[k]] = grads[k];
  }
  return result;
}

// A callback computing the vector-Jacobian product of `id`: it takes the
// upstream gradients for each output of `id`, then the inputs of `id`.
// Being a callback itself, its own gradient comes from the same rule.
int64_t VjpCallback(int64_t id) {
  {
    auto& r = Callbacks();
    std::shared_lock lock(r.mu);
    auto it = r.vjps.find(id);
    if (it != r.vjps.end()) return it->second;
  }
  std::shared_ptr<const HostCallback> base = FindCallback(id);
  auto vjp = std::make_shared<HostCallback>();
  vjp->fn = [base](const std::vector<Tensor>& args) {
    const size_t n = base->SignatureFor({}).size();
    if (args.size() < n) {
      throw Error(ErrorCode::kCallbackError,
                  "gradient callback is missing upstream values");
    }
    std::vector<Tensor> inputs(args.begin() + static_cast<std::ptrdiff_t>(n),
                               args.end());
    return PullBack(*base, std::span<const Tensor>(args).first(n), inputs);
  };
  vjp->derive_signature = [base](const std::vector<TensorSpec>& specs) {
    const size_t n = std::min(base->SignatureFor({}).size(), specs.size());
    std::vector<TensorSpec> out(specs.begin() + static_cast<std::ptrdiff_t>(n),
                                specs.end());
    for (TensorSpec& s : out) s.is_resource = false;
    return out;
  };
  const int64_t vjp_id = Register(std::move(vjp));
  auto& r = Callbacks();
  std::unique_lock lock(r.mu);
  return r.vjps.emplace(id, vjp_id).first->second;
}

}  // namespace

int64_t RegisterHostCallback(HostCallbackFn fn,
                             std::vector<TensorSpec> output_signature) {
  auto cb = std::make_shared<HostCallback>();
  cb->fn = std::move(fn);
  cb->signature = std::move(output_signature);
  return Register(std::move(cb));
}

std::vector<Tensor> HostCall(int64_t callback, std::vector<Tensor> inputs) {
  return Dispatch("host_call", std::move(inputs),
                  {{"callback", AttrValue(callback)}});
}

namespace kernels {
namespace {

// Eagerly the callback just runs here, so active tapes see its ops.
std::vector<Tensor> HostCallEager(std::span<const Tensor> inputs,
                                  const AttrMap& attrs) {
  auto cb = FindCallback(attrs.Get("callback").i());
  Runtime::Get().metrics().host_calls.fetch_add(1, std::memory_order_relaxed);
  std::vector<Tensor> args(inputs.begin(), inputs.end());
  return InHostSlot([&] {
    std::vector<Tensor> outputs;
    try {
      outputs = cb->fn(args);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kCallbackError) throw;
      throw Error(ErrorCode::kCallbackError, e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kCallbackError, e.what());
    }
    CheckSignature(outputs, cb->SignatureFor(SpecsOf(args)));
    return outputs;
  });
}

void HostCallKernel(KernelContext& ctx) {
  auto cb = FindCallback(ctx.attrs.Get("callback").i());
  ctx.outputs = InvokeIsolated(
      *cb, std::vector<Tensor>(ctx.inputs.begin(), ctx.inputs.end()));
}

std::vector<TensorSpec> HostCallShape(const ShapeContext& ctx) {
  return FindCallback(ctx.attrs.Get("callback").i())->SignatureFor(
      std::vector<TensorSpec>(ctx.inputs.begin(), ctx.inputs.end()));
}

std::vector<std::optional<Tensor>> HostCallGrad(GradContext& g) {
  std::vector<Tensor> inputs;
  for (int i = 0; i < g.num_outputs(); ++i) inputs.push_back(g.upstream(i));
  for (int i = 0; i < g.num_inputs(); ++i) inputs.push_back(g.input(i));
  auto grads = HostCall(VjpCallback(g.attrs().Get("callback").i()),
                        std::move(inputs));
  std::vector<std::optional<Tensor>> result;
  for (int i = 0; i < g.num_inputs(); ++i) {
    if (IsFloating(g.input_spec(i).dtype) && !g.input_spec(i).is_resource) {
      result.emplace_back(grads[static_cast<size_t>(i)]);
    } else {
      result.emplace_back(std::nullopt);
    }
  }
  return result;
}

}  // namespace

void RegisterHostOps(OpRegistry& r) {
  OpDef call;
  call.name = "host_call";
  call.input_arity = kVariadic;
  call.output_arity = kVariadic;
  call.attrs = {AttrSpec{"callback", AttrKind::kInt, std::nullopt}};
  call.stateful = true;
  call.resource = ResourceClass::kHost;
  call.kernel = HostCallKernel;
  call.shape_fn = HostCallShape;
  call.gradient = HostCallGrad;
  call.eager = HostCallEager;
  r.Register(std::move(call));

}

}  // namespace kernels
}  // namespace stagehand
