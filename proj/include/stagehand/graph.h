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

#ifndef STAGEHAND_GRAPH_H_
#define STAGEHAND_GRAPH_H_

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "stagehand/attr.h"
#include "stagehand/op_registry.h"
#include "stagehand/tensor.h"

namespace stagehand {

struct Node {
  std::string op;
  std::vector<Endpoint> inputs;
  AttrMap attrs;
  // Rendered DeviceName; empty means "wherever the function runs".
  std::string device;

  friend bool operator==(const Node& a, const Node& b) {
    return a.op == b.op && a.inputs == b.inputs && a.attrs == b.attrs &&
           a.device == b.device;
  }
};

struct FunctionInput {
  std::string name;
  TensorSpec spec;
};

struct FunctionOutput {
  std::string name;
  Endpoint source;
};

struct ExecPlan;

// Immutable dataflow graph with named inputs and outputs. Nodes are stored in
// topological order; node inputs refer to function inputs or to earlier
// nodes. The library holds every function reachable through call nodes.
class GraphFunction {
 public:
  // Validates structure and infers every node's output specs.
  // Throws kCorruptGraph.
  GraphFunction(std::string name, std::vector<FunctionInput> inputs,
                std::vector<Node> nodes, std::vector<FunctionOutput> outputs,
                FunctionLibrary library = {});
  ~GraphFunction();

  const std::string& name() const { return name_; }
  const std::vector<FunctionInput>& inputs() const { return inputs_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<FunctionOutput>& outputs() const { return outputs_; }
  const FunctionLibrary& library() const { return library_; }

  const TensorSpec& SpecOf(const Endpoint& ep) const;
  std::vector<TensorSpec> input_specs() const;
  std::vector<TensorSpec> output_specs() const;
  int num_outputs_of(int node) const {
    return static_cast<int>(node_specs_[static_cast<size_t>(node)].size());
  }

  // False when any node (here or in the library) is a host callback.
  bool serializable() const { return serializable_; }
  // True when any node, here or in a called function, is stateful.
  bool is_stateful() const { return stateful_; }
  bool NodeIsStateful(int node) const {
    return node_stateful_[static_cast<size_t>(node)];
  }
  // Stateful nodes this node must wait for (per-resource program order).
  const std::vector<int>& ControlInputs(int node) const {
    return control_inputs_[static_cast<size_t>(node)];
  }

  // Compiled once, on first execution.
  const ExecPlan& plan() const;

  // Same name, signature, nodes, outputs and (recursively) library.
  bool StructurallyEqual(const GraphFunction& other) const;
  std::string DebugString() const;

 private:
  void Analyze();

  std::string name_;
  std::vector<FunctionInput> inputs_;
  std::vector<Node> nodes_;
  std::vector<FunctionOutput> outputs_;
  FunctionLibrary library_;

  std::vector<std::vector<TensorSpec>> node_specs_;
  std::vector<bool> node_stateful_;
  std::vector<std::vector<int>> control_inputs_;
  bool serializable_ = true;
  bool stateful_ = false;

  mutable std::once_flag plan_once_;
  mutable std::unique_ptr<ExecPlan> plan_;
};

// Removes stateless nodes that neither reach an output nor feed a stateful
// node. Stateful nodes are always kept.
std::shared_ptr<const GraphFunction> Prune(const GraphFunction& g);

// Replaces stateless nodes whose inputs are all constants with constants
// holding the computed values. Constants orphaned by folding are dropped.
// A node whose kernel fails is left in place.
std::shared_ptr<const GraphFunction> ConstantFold(const GraphFunction& g);

// ConstantFold followed by Prune.
std::shared_ptr<const GraphFunction> Optimize(const GraphFunction& g);

// Versioned little-endian container ("SGF1").
inline constexpr uint32_t kGraphFormatVersion = 1;
std::vector<uint8_t> Serialize(const GraphFunction& g);
// Throws kFormatVersionMismatch or kCorruptGraph.
std::shared_ptr<const GraphFunction> Deserialize(std::span<const uint8_t> bytes);

struct ExecuteOptions {
  // Device for nodes without an override.
  int device = 0;
  // 0 means the runtime's worker count.
  int workers = 0;
};

// Runs `g` on concrete inputs (captured values already appended).
// Throws kInputMismatch, kKernelError (with node id), kMissingFunction.
std::vector<Tensor> Execute(const GraphFunction& g,
                            std::span<const Tensor> inputs,
                            const ExecuteOptions& options = {},
                            const FunctionResolver* parent = nullptr);

}  // namespace stagehand

#endif  // STAGEHAND_GRAPH_H_
