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

#ifndef STAGEHAND_TRACE_H_
#define STAGEHAND_TRACE_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagehand/graph.h"
#include "stagehand/op_registry.h"
#include "stagehand/tensor.h"

namespace stagehand {

// A graph under construction. Dispatches made while the trace is the
// current frame's trace append nodes here instead of running kernels.
class TraceState {
 public:
  explicit TraceState(std::string name);
  ~TraceState();
  TraceState(const TraceState&) = delete;
  TraceState& operator=(const TraceState&) = delete;

  uint64_t id() const { return id_; }
  const std::string& name() const { return name_; }
  size_t num_nodes() const { return nodes_.size(); }

  // Declares an explicit function input. Explicit inputs precede captures in
  // the finalized signature.
  Tensor AddInput(const TensorSpec& spec, std::string name);

  // Placeholder standing in for a value from outside this trace. Repeated
  // captures of one value return the same placeholder.
  Tensor Capture(const Tensor& external);
  const std::vector<Tensor>& captures() const { return captures_; }

  // Maps `value` to a symbolic tensor of this trace, capturing if needed.
  Tensor Resolve(const Tensor& value);

  std::vector<Tensor> RecordNode(const OpDef& def,
                                 std::span<const Tensor> inputs,
                                 AttrMap attrs);

  void NoteVariableCreated() { ++variables_created_; }
  int variables_created() const { return variables_created_; }

  struct Result {
    std::shared_ptr<const GraphFunction> graph;
    // External values to append to the explicit inputs at call time.
    std::vector<Tensor> captures;
  };
  // Builds the function, optionally running the optimizer.
  Result Finalize(std::span<const Tensor> outputs, bool optimize = true);

  static bool IsOpen(uint64_t trace_id);

 private:
  Endpoint FinalEndpoint(const Endpoint& ep) const;

  uint64_t id_;
  std::string name_;
  std::vector<FunctionInput> explicit_inputs_;
  std::vector<Tensor> captures_;
  std::vector<Tensor> capture_placeholders_;
  std::unordered_map<uint64_t, size_t> capture_index_;
  std::vector<Node> nodes_;
  int variables_created_ = 0;
};

// A traced function together with the values it closes over.
struct ConcreteFunction {
  std::shared_ptr<const GraphFunction> graph;
  std::vector<Tensor> captures;

  // Runs through call_function; `args` are the explicit inputs.
  std::vector<Tensor> operator()(std::vector<Tensor> args) const;
};

using TensorFn =
    std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

// Traces `fn` on placeholders of `arg_specs` into a uniquely named graph
// function registered with the runtime. Exceptions from `fn` propagate
// unchanged.
ConcreteFunction TraceFunction(const std::string& base_name,
                               const std::vector<TensorSpec>& arg_specs,
                               const TensorFn& fn, bool optimize = true,
                               int* variables_created = nullptr);

// Process-unique function name built from `base`.
std::string UniqueFunctionName(const std::string& base);

}  // namespace stagehand

#endif  // STAGEHAND_TRACE_H_
