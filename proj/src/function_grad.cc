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

#include "function_grad.h"

#include <algorithm>
#include <map>
#include <mutex>

#include "stagehand/context.h"
#include "stagehand/ops.h"
#include "stagehand/runtime.h"
#include "stagehand/trace.h"

namespace stagehand {

namespace {

struct CacheEntry {
  std::shared_ptr<const GraphFunction> keep_alive;
  ForwardBackward result;
};

std::mutex& CacheMutex() {
  static std::mutex mu;
  return mu;
}

std::map<const GraphFunction*, CacheEntry>& Cache() {
  static std::map<const GraphFunction*, CacheEntry> cache;
  return cache;
}

bool CarriesGradient(const TensorSpec& spec) {
  return spec.is_resource || IsFloating(spec.dtype);
}

Tensor ZerosOfSpec(const TensorSpec& spec, const std::function<Tensor()>& like) {
  if (spec.shape.is_fully_defined()) {
    return ops::Fill(spec.shape, 0.0, spec.dtype);
  }
  return ops::ZerosLike(like());
}

ForwardBackward Build(const GraphFunction& f) {
  const FunctionResolver resolver(&f.library(), nullptr);

  // Calls inside f switch to their own forward variants so that their
  // intermediates are available to f's backward function.
  std::vector<Node> nodes = f.nodes();
  for (Node& node : nodes) {
    if (node.op != "call_function") continue;
    const AttrValue* backward = node.attrs.Find("backward");
    if (backward != nullptr && !backward->func().empty()) continue;
    auto callee = resolver.Resolve(node.attrs.Get("f").func());
    ForwardBackward inner = GetForwardBackward(callee);
    node.attrs.Set("f", AttrValue(FunctionRef{inner.forward}));
    node.attrs.Set("backward", AttrValue(FunctionRef{inner.backward}));
    node.attrs.Set("num_primal_outputs",
                   AttrValue(static_cast<int64_t>(inner.num_outputs)));
  }
  const std::string forward_name = f.name() + "_fwd";
  auto primal = std::make_shared<const GraphFunction>(
      forward_name, f.inputs(), nodes, f.outputs());

  TraceState trace(f.name() + "_bwd");
  std::map<Endpoint, Tensor> grads;
  auto accumulate = [&](const Endpoint& ep, Tensor g) {
    auto it = grads.find(ep);
    if (it == grads.end()) {
      grads.emplace(ep, std::move(g));
    } else {
      it->second = ops::Add(it->second, g);
    }
  };
  std::map<Endpoint, Tensor> saved;
  std::vector<Endpoint> saved_order;
  auto value = [&](const Endpoint& ep) {
    auto it = saved.find(ep);
    if (it != saved.end()) return it->second;
    TensorSpec spec = primal->SpecOf(ep);
    Tensor t = trace.AddInput(
        spec, "saved_" + std::to_string(saved_order.size()));
    saved.emplace(ep, t);
    saved_order.push_back(ep);
    return t;
  };

  std::vector<Tensor> outputs;
  {
    ContextFrame frame;
    frame.trace = &trace;
    FrameGuard guard(std::move(frame));

    std::vector<Tensor> upstream_inputs;
    for (size_t i = 0; i < f.outputs().size(); ++i) {
      TensorSpec spec = primal->SpecOf(f.outputs()[i].source);
      spec.is_resource = false;
      upstream_inputs.push_back(
          trace.AddInput(spec, "grad_" + std::to_string(i)));
    }
    for (size_t i = 0; i < f.outputs().size(); ++i) {
      accumulate(f.outputs()[i].source, upstream_inputs[i]);
    }

    const auto& pnodes = primal->nodes();
    for (size_t n = pnodes.size(); n-- > 0;) {
      const Node& node = pnodes[n];
      const int num_out = primal->num_outputs_of(static_cast<int>(n));
      std::vector<std::optional<Tensor>> upstream(static_cast<size_t>(num_out));
      bool any = false;
      for (int i = 0; i < num_out; ++i) {
        auto it = grads.find(Endpoint{static_cast<int32_t>(n), i});
        if (it != grads.end()) {
          upstream[static_cast<size_t>(i)] = it->second;
          any = true;
        }
      }
      if (!any) continue;
      const OpDef& def = OpRegistry::Global().Lookup(node.op);
      std::vector<TensorSpec> in_specs, out_specs;
      for (const Endpoint& ep : node.inputs) {
        in_specs.push_back(primal->SpecOf(ep));
      }
      for (int i = 0; i < num_out; ++i) {
        out_specs.push_back(
            primal->SpecOf(Endpoint{static_cast<int32_t>(n), i}));
      }
      if (!def.differentiable()) {
        for (const TensorSpec& s : in_specs) {
          if (CarriesGradient(s)) {
            throw Error(ErrorCode::kNoGradient,
                        "op '" + node.op + "' in '" + f.name() +
                            "' has no gradient");
          }
        }
        continue;
      }
      GradContext ctx(
          node.attrs, in_specs, std::move(out_specs),
          [&](int i) { return value(node.inputs[static_cast<size_t>(i)]); },
          [&](int i) {
            return value(Endpoint{static_cast<int32_t>(n), i});
          },
          std::move(upstream));
      auto input_grads = def.gradient(ctx);
      for (size_t i = 0; i < node.inputs.size() && i < input_grads.size();
           ++i) {
        if (!input_grads[i].has_value() || !CarriesGradient(in_specs[i])) {
          continue;
        }
        accumulate(node.inputs[i], std::move(*input_grads[i]));
      }
    }

    for (size_t j = 0; j < f.inputs().size(); ++j) {
      const Endpoint ep{Endpoint::kInputNode, static_cast<int32_t>(j)};
      auto it = grads.find(ep);
      if (it != grads.end()) {
        outputs.push_back(it->second);
      } else {
        TensorSpec spec = f.inputs()[j].spec;
        spec.is_resource = false;
        outputs.push_back(ZerosOfSpec(spec, [&] { return value(ep); }));
      }
    }
  }
  auto backward = trace.Finalize(outputs, /*optimize=*/true);
  if (!backward.captures.empty()) {
    throw Error(ErrorCode::kNoGradient,
                "backward function of '" + f.name() +
                    "' closes over external values");
  }

  std::vector<FunctionOutput> fwd_outputs = f.outputs();
  for (size_t k = 0; k < saved_order.size(); ++k) {
    fwd_outputs.push_back(
        FunctionOutput{"saved_" + std::to_string(k), saved_order[k]});
  }
  auto forward = std::make_shared<const GraphFunction>(
      forward_name, f.inputs(), primal->nodes(), std::move(fwd_outputs),
      primal->library());

  Runtime& rt = Runtime::Get();
  rt.RegisterFunction(forward);
  rt.RegisterFunction(backward.graph);
  rt.metrics().gradient_functions_built.fetch_add(2, std::memory_order_relaxed);
  return ForwardBackward{forward->name(), backward.graph->name(),
                         static_cast<int>(f.outputs().size())};
}

std::map<const GraphFunction*, std::pair<std::shared_ptr<const GraphFunction>,
                                         std::string>>&
VjpCache() {
  static std::map<const GraphFunction*,
                  std::pair<std::shared_ptr<const GraphFunction>, std::string>>
      cache;
  return cache;
}

std::string BuildRecomputeVjp(const std::shared_ptr<const GraphFunction>& f) {
  const ForwardBackward fb = GetForwardBackward(f);
  const size_t num_in = f->inputs().size();
  const size_t num_out = f->outputs().size();
  std::vector<TensorSpec> specs;
  for (const FunctionInput& in : f->inputs()) specs.push_back(in.spec);
  for (const FunctionOutput& out : f->outputs()) {
    TensorSpec spec = f->SpecOf(out.source);
    spec.is_resource = false;
    specs.push_back(spec);
  }
  ConcreteFunction vjp = TraceFunction(
      f->name() + "_vjp", specs, [&](const std::vector<Tensor>& args) {
        std::vector<Tensor> inputs(args.begin(),
                                   args.begin() + static_cast<std::ptrdiff_t>(num_in));
        AttrMap attrs;
        attrs.Set("f", AttrValue(FunctionRef{fb.forward}));
        attrs.Set("backward", AttrValue(FunctionRef{fb.backward}));
        attrs.Set("num_primal_outputs",
                  AttrValue(static_cast<int64_t>(fb.num_outputs)));
        auto outs = Dispatch("call_function", std::move(inputs), attrs);
        std::vector<Tensor> bwd_inputs(
            args.begin() + static_cast<std::ptrdiff_t>(num_in), args.end());
        bwd_inputs.insert(bwd_inputs.end(),
                          outs.begin() + static_cast<std::ptrdiff_t>(num_out),
                          outs.end());
        return ops::CallFunction(fb.backward, std::move(bwd_inputs));
      });
  if (!vjp.captures.empty()) {
    throw Error(ErrorCode::kNoGradient,
                "gradient function of '" + f->name() +
                    "' closes over external values");
  }
  return vjp.graph->name();
}

std::map<std::string, std::string>& SubsetCache() {
  static std::map<std::string, std::string> cache;
  return cache;
}

}  // namespace

std::string GetOutputSubset(const std::string& name,
                            const std::vector<bool>& keep) {
  if (std::find(keep.begin(), keep.end(), false) == keep.end()) return name;
  std::string key = name + "/";
  for (bool k : keep) key += k ? '1' : '0';
  {
    std::lock_guard<std::mutex> lock(CacheMutex());
    auto it = SubsetCache().find(key);
    if (it != SubsetCache().end()) return it->second;
  }
  auto f = FunctionResolver().Resolve(name);
  std::vector<FunctionOutput> outputs;
  for (size_t i = 0; i < f->outputs().size(); ++i) {
    if (i < keep.size() && keep[i]) outputs.push_back(f->outputs()[i]);
  }
  GraphFunction subset(UniqueFunctionName(name + "_partial"), f->inputs(),
                       f->nodes(), std::move(outputs), f->library());
  auto pruned = Prune(subset);
  Runtime::Get().RegisterFunction(pruned);
  std::lock_guard<std::mutex> lock(CacheMutex());
  return SubsetCache().emplace(key, pruned->name()).first->second;
}

std::string GetRecomputeVjp(const std::shared_ptr<const GraphFunction>& f) {
  {
    std::lock_guard<std::mutex> lock(CacheMutex());
    auto it = VjpCache().find(f.get());
    if (it != VjpCache().end()) return it->second.second;
  }
  std::string name = BuildRecomputeVjp(f);
  std::lock_guard<std::mutex> lock(CacheMutex());
  auto [it, inserted] = VjpCache().emplace(f.get(), std::make_pair(f, name));
  return it->second.second;
}

ForwardBackward GetForwardBackward(
    const std::shared_ptr<const GraphFunction>& f) {
  {
    std::lock_guard<std::mutex> lock(CacheMutex());
    auto it = Cache().find(f.get());
    if (it != Cache().end()) return it->second.result;
  }
  ForwardBackward built = Build(*f);
  std::lock_guard<std::mutex> lock(CacheMutex());
  auto [it, inserted] = Cache().emplace(f.get(), CacheEntry{f, built});
  return it->second.result;
}

}  // namespace stagehand
