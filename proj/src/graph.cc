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

#include "stagehand/graph.h"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "exec_plan.h"
#include "stagehand/runtime.h"

namespace stagehand {

namespace {

[[noreturn]] void Corrupt(const std::string& message) {
  throw Error(ErrorCode::kCorruptGraph, message);
}

template <typename F>
void ForEachFunctionAttr(const Node& node, F&& f) {
  for (const auto& [name, value] : node.attrs.entries()) {
    if (value.kind() == AttrKind::kFunc && !value.func().empty()) {
      f(value.func());
    }
  }
}

}  // namespace

GraphFunction::GraphFunction(std::string name,
                             std::vector<FunctionInput> inputs,
                             std::vector<Node> nodes,
                             std::vector<FunctionOutput> outputs,
                             FunctionLibrary library)
    : name_(std::move(name)),
      inputs_(std::move(inputs)),
      nodes_(std::move(nodes)),
      outputs_(std::move(outputs)),
      library_(std::move(library)) {
  // Complete the library so the function is self-contained.
  for (const Node& node : nodes_) {
    ForEachFunctionAttr(node, [&](const std::string& fn) {
      if (library_.count(fn) != 0) return;
      auto found = Runtime::Get().FindFunction(fn);
      if (found == nullptr) {
        throw Error(ErrorCode::kMissingFunction,
                    "function '" + fn + "' referenced by '" + name_ +
                        "' is not in the library");
      }
      library_.emplace(fn, std::move(found));
    });
  }

  const FunctionResolver resolver(&library_, nullptr);
  node_specs_.reserve(nodes_.size());
  for (size_t n = 0; n < nodes_.size(); ++n) {
    Node& node = nodes_[n];
    const OpDef* def = OpRegistry::Global().Find(node.op);
    if (def == nullptr) Corrupt("unknown op '" + node.op + "'");
    std::vector<TensorSpec> in_specs;
    for (const Endpoint& ep : node.inputs) {
      if (ep.is_input()) {
        if (ep.index < 0 || static_cast<size_t>(ep.index) >= inputs_.size()) {
          Corrupt("node " + std::to_string(n) + " reads a missing input");
        }
      } else if (ep.node < 0 || static_cast<size_t>(ep.node) >= n ||
                 ep.index < 0 ||
                 static_cast<size_t>(ep.index) >=
                     node_specs_[static_cast<size_t>(ep.node)].size()) {
        Corrupt("node " + std::to_string(n) +
                " reads a value that is not defined before it");
      }
      in_specs.push_back(SpecOf(ep));
    }
    try {
      ValidateInvocation(*def, node.inputs.size(), node.attrs);
      node_specs_.push_back(
          InferOutputSpecs(*def, in_specs, node.attrs, resolver));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kMissingFunction) throw;
      Corrupt("node " + std::to_string(n) + " (" + node.op +
              "): " + e.detail());
    }
  }
  for (const FunctionOutput& out : outputs_) {
    const Endpoint& ep = out.source;
    const bool ok =
        ep.is_input()
            ? ep.index >= 0 && static_cast<size_t>(ep.index) < inputs_.size()
            : ep.node >= 0 && static_cast<size_t>(ep.node) < nodes_.size() &&
                  ep.index >= 0 &&
                  static_cast<size_t>(ep.index) <
                      node_specs_[static_cast<size_t>(ep.node)].size();
    if (!ok) Corrupt("output '" + out.name + "' names a missing value");
  }
  Analyze();
}

GraphFunction::~GraphFunction() = default;

void GraphFunction::Analyze() {
  for (const auto& [fn_name, fn] : library_) {
    if (!fn->serializable()) serializable_ = false;
  }
  node_stateful_.assign(nodes_.size(), false);
  control_inputs_.assign(nodes_.size(), {});

  std::map<std::string, int> last_by_key;
  int last_all = -1;
  for (size_t n = 0; n < nodes_.size(); ++n) {
    const Node& node = nodes_[n];
    const OpDef& def = OpRegistry::Global().Lookup(node.op);
    if (node.op == "host_call") {
      serializable_ = false;
    }
    bool stateful = def.stateful;
    ResourceClass resource = def.resource;
    ForEachFunctionAttr(node, [&](const std::string& fn) {
      auto it = library_.find(fn);
      if (it != library_.end() && it->second->is_stateful()) {
        stateful = true;
        resource = ResourceClass::kAll;
      }
    });
    if (!stateful) continue;
    if (resource == ResourceClass::kNone) resource = ResourceClass::kAll;
    node_stateful_[n] = true;
    stateful_ = true;

    const int id = static_cast<int>(n);
    std::set<int> deps;
    if (last_all >= 0) deps.insert(last_all);
    if (resource == ResourceClass::kAll) {
      for (const auto& [key, last] : last_by_key) deps.insert(last);
      last_by_key.clear();
      last_all = id;
    } else {
      std::string key;
      switch (resource) {
        case ResourceClass::kVariable: {
          const Endpoint& ep = node.inputs.at(0);
          key = "var:" + std::to_string(ep.node) + ":" +
                std::to_string(ep.index);
          break;
        }
        case ResourceClass::kRng: key = "rng"; break;
        default: key = "host"; break;
      }
      auto it = last_by_key.find(key);
      if (it != last_by_key.end()) deps.insert(it->second);
      last_by_key[key] = id;
    }
    control_inputs_[n].assign(deps.begin(), deps.end());
  }
}

const TensorSpec& GraphFunction::SpecOf(const Endpoint& ep) const {
  if (ep.is_input()) return inputs_[static_cast<size_t>(ep.index)].spec;
  return node_specs_[static_cast<size_t>(ep.node)]
                    [static_cast<size_t>(ep.index)];
}

std::vector<TensorSpec> GraphFunction::input_specs() const {
  std::vector<TensorSpec> out;
  for (const auto& in : inputs_) out.push_back(in.spec);
  return out;
}

std::vector<TensorSpec> GraphFunction::output_specs() const {
  std::vector<TensorSpec> out;
  for (const auto& o : outputs_) out.push_back(SpecOf(o.source));
  return out;
}

bool GraphFunction::StructurallyEqual(const GraphFunction& other) const {
  if (name_ != other.name_ || nodes_ != other.nodes_ ||
      inputs_.size() != other.inputs_.size() ||
      outputs_.size() != other.outputs_.size() ||
      library_.size() != other.library_.size()) {
    return false;
  }
  for (size_t i = 0; i < inputs_.size(); ++i) {
    if (inputs_[i].name != other.inputs_[i].name ||
        !(inputs_[i].spec == other.inputs_[i].spec)) {
      return false;
    }
  }
  for (size_t i = 0; i < outputs_.size(); ++i) {
    if (outputs_[i].name != other.outputs_[i].name ||
        !(outputs_[i].source == other.outputs_[i].source)) {
      return false;
    }
  }
  auto a = library_.begin();
  auto b = other.library_.begin();
  for (; a != library_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second->StructurallyEqual(*b->second)) {
      return false;
    }
  }
  return true;
}

std::string GraphFunction::DebugString() const {
  std::ostringstream os;
  auto ref = [](const Endpoint& ep) {
    return ep.is_input() ? "in" + std::to_string(ep.index)
                         : "n" + std::to_string(ep.node) + ":" +
                               std::to_string(ep.index);
  };
  os << "function " << name_ << "(";
  for (size_t i = 0; i < inputs_.size(); ++i) {
    os << (i ? ", " : "") << inputs_[i].name << ": "
       << inputs_[i].spec.ToString();
  }
  os << ")\n";
  for (size_t n = 0; n < nodes_.size(); ++n) {
    const Node& node = nodes_[n];
    os << "  n" << n << " = " << node.op << "(";
    for (size_t i = 0; i < node.inputs.size(); ++i) {
      os << (i ? ", " : "") << ref(node.inputs[i]);
    }
    os << ")";
    if (node.attrs.size() > 0) os << " " << node.attrs.Canonical();
    if (!node.device.empty()) os << " @" << node.device;
    os << "\n";
  }
  for (const auto& o : outputs_) {
    os << "  return " << o.name << " = " << ref(o.source) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Optimizer.

namespace {

// Keeps only the library entries still referenced by `nodes`.
FunctionLibrary Referenced(const FunctionLibrary& library,
                           const std::vector<Node>& nodes) {
  FunctionLibrary out;
  for (const Node& node : nodes) {
    ForEachFunctionAttr(node, [&](const std::string& fn) {
      auto it = library.find(fn);
      if (it != library.end()) out.emplace(it->first, it->second);
    });
  }
  return out;
}

// Same signature as `g`, new body.
std::shared_ptr<const GraphFunction> Rebuild(
    const GraphFunction& g, std::vector<Node> nodes,
    std::vector<FunctionOutput> outputs) {
  auto library = Referenced(g.library(), nodes);
  return std::make_shared<const GraphFunction>(
      g.name(), g.inputs(), std::move(nodes), std::move(outputs),
      std::move(library));
}

}  // namespace

std::shared_ptr<const GraphFunction> Prune(const GraphFunction& g) {
  const auto& nodes = g.nodes();
  std::vector<bool> keep(nodes.size(), false);
  std::vector<int> stack;
  auto mark = [&](const Endpoint& ep) {
    if (!ep.is_input() && !keep[static_cast<size_t>(ep.node)]) {
      keep[static_cast<size_t>(ep.node)] = true;
      stack.push_back(ep.node);
    }
  };
  for (const auto& out : g.outputs()) mark(out.source);
  for (size_t n = 0; n < nodes.size(); ++n) {
    if (g.NodeIsStateful(static_cast<int>(n))) {
      mark(Endpoint{static_cast<int32_t>(n), 0});
    }
  }
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    for (const Endpoint& ep : nodes[static_cast<size_t>(n)].inputs) mark(ep);
  }

  std::vector<int32_t> new_id(nodes.size(), -1);
  std::vector<Node> kept;
  for (size_t n = 0; n < nodes.size(); ++n) {
    if (!keep[n]) continue;
    new_id[n] = static_cast<int32_t>(kept.size());
    Node node = nodes[n];
    for (Endpoint& ep : node.inputs) {
      if (!ep.is_input()) ep.node = new_id[static_cast<size_t>(ep.node)];
    }
    kept.push_back(std::move(node));
  }
  auto outputs = g.outputs();
  for (auto& out : outputs) {
    if (!out.source.is_input()) {
      out.source.node = new_id[static_cast<size_t>(out.source.node)];
    }
  }
  return Rebuild(g, std::move(kept), std::move(outputs));
}

std::shared_ptr<const GraphFunction> ConstantFold(const GraphFunction& g) {
  const auto& nodes = g.nodes();
  const FunctionResolver resolver(&g.library(), nullptr);

  std::vector<Node> out_nodes;
  // Old endpoint -> new endpoint, per node output.
  std::vector<std::vector<Endpoint>> remap(nodes.size());
  // Values of constant nodes in the output graph.
  std::map<int32_t, Tensor> constant_value;
  std::vector<bool> was_used;

  auto map_ep = [&](const Endpoint& ep) {
    if (ep.is_input()) return ep;
    return remap[static_cast<size_t>(ep.node)][static_cast<size_t>(ep.index)];
  };

  for (size_t n = 0; n < nodes.size(); ++n) {
    const Node& node = nodes[n];
    Node mapped = node;
    for (Endpoint& ep : mapped.inputs) ep = map_ep(ep);

    bool foldable = node.op != "constant" &&
                    !g.NodeIsStateful(static_cast<int>(n));
    std::vector<Tensor> inputs;
    if (foldable) {
      for (const Endpoint& ep : mapped.inputs) {
        auto it = ep.is_input() ? constant_value.end()
                                : constant_value.find(ep.node);
        if (it == constant_value.end()) {
          foldable = false;
          break;
        }
        inputs.push_back(it->second);
      }
    }
    if (foldable) {
      try {
        const OpDef& def = OpRegistry::Global().Lookup(node.op);
        auto values = RunKernel(def, inputs, node.attrs, 0, resolver);
        for (size_t i = 0; i < values.size(); ++i) {
          const auto id = static_cast<int32_t>(out_nodes.size());
          Node c;
          c.op = "constant";
          c.attrs.Set("value", AttrValue(values[i]));
          c.device = node.device;
          out_nodes.push_back(std::move(c));
          was_used.push_back(false);
          constant_value.emplace(id, values[i]);
          remap[n].push_back(Endpoint{id, 0});
        }
        for (const Endpoint& ep : mapped.inputs) {
          was_used[static_cast<size_t>(ep.node)] = true;
        }
        continue;
      } catch (const Error&) {
        // Left in place; the error surfaces when the graph runs.
      }
    }
    const auto id = static_cast<int32_t>(out_nodes.size());
    if (node.op == "constant") {
      constant_value.emplace(id, node.attrs.Get("value").tensor());
    }
    for (int i = 0; i < g.num_outputs_of(static_cast<int>(n)); ++i) {
      remap[n].push_back(Endpoint{id, i});
    }
    out_nodes.push_back(std::move(mapped));
    was_used.push_back(false);
  }

  auto outputs = g.outputs();
  for (auto& out : outputs) out.source = map_ep(out.source);

  // Drop constants whose only consumers were folded away.
  std::vector<bool> used(out_nodes.size(), false);
  for (const Node& node : out_nodes) {
    for (const Endpoint& ep : node.inputs) {
      if (!ep.is_input()) used[static_cast<size_t>(ep.node)] = true;
    }
  }
  for (const auto& out : outputs) {
    if (!out.source.is_input()) {
      used[static_cast<size_t>(out.source.node)] = true;
    }
  }
  std::vector<int32_t> new_id(out_nodes.size(), -1);
  std::vector<Node> final_nodes;
  for (size_t n = 0; n < out_nodes.size(); ++n) {
    if (out_nodes[n].op == "constant" && was_used[n] && !used[n]) continue;
    new_id[n] = static_cast<int32_t>(final_nodes.size());
    Node node = std::move(out_nodes[n]);
    for (Endpoint& ep : node.inputs) {
      if (!ep.is_input()) ep.node = new_id[static_cast<size_t>(ep.node)];
    }
    final_nodes.push_back(std::move(node));
  }
  for (auto& out : outputs) {
    if (!out.source.is_input()) {
      out.source.node = new_id[static_cast<size_t>(out.source.node)];
    }
  }
  return Rebuild(g, std::move(final_nodes), std::move(outputs));
}

std::shared_ptr<const GraphFunction> Optimize(const GraphFunction& g) {
  return Prune(*ConstantFold(g));
}

}  // namespace stagehand
