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

#include "stagehand/trace.h"

#include <atomic>
#include <mutex>
#include <unordered_set>

#include "stagehand/context.h"
#include "stagehand/device.h"
#include "stagehand/ops.h"
#include "stagehand/runtime.h"

namespace stagehand {

namespace {

// Captures get provisional input indices above this until finalization,
// when they move after the explicit inputs.
constexpr int32_t kCaptureBase = 1 << 28;

std::mutex& OpenMutex() {
  static std::mutex mu;
  return mu;
}

std::unordered_set<uint64_t>& OpenTraces() {
  static std::unordered_set<uint64_t> open;
  return open;
}

}  // namespace

TraceState::TraceState(std::string name)
    : id_(detail::NextTensorId()), name_(std::move(name)) {
  std::lock_guard<std::mutex> lock(OpenMutex());
  OpenTraces().insert(id_);
}

TraceState::~TraceState() {
  std::lock_guard<std::mutex> lock(OpenMutex());
  OpenTraces().erase(id_);
}

bool TraceState::IsOpen(uint64_t trace_id) {
  std::lock_guard<std::mutex> lock(OpenMutex());
  return OpenTraces().count(trace_id) != 0;
}

Tensor TraceState::AddInput(const TensorSpec& spec, std::string name) {
  const auto index = static_cast<int32_t>(explicit_inputs_.size());
  explicit_inputs_.push_back(FunctionInput{std::move(name), spec});
  return Tensor::Symbolic(spec, id_, Endpoint{Endpoint::kInputNode, index});
}

Tensor TraceState::Capture(const Tensor& external) {
  auto it = capture_index_.find(external.id());
  if (it != capture_index_.end()) return capture_placeholders_[it->second];
  const size_t j = captures_.size();
  captures_.push_back(external);
  capture_placeholders_.push_back(Tensor::Symbolic(
      external.spec(), id_,
      Endpoint{Endpoint::kInputNode, kCaptureBase + static_cast<int32_t>(j)}));
  capture_index_.emplace(external.id(), j);
  return capture_placeholders_.back();
}

Tensor TraceState::Resolve(const Tensor& value) {
  if (value.is_symbolic()) {
    if (value.trace_id() == id_) return value;
    if (!IsOpen(value.trace_id())) {
      throw Error(ErrorCode::kSymbolicTensor,
                  "symbolic tensor used outside the trace that created it");
    }
  }
  return Capture(value);
}

std::vector<Tensor> TraceState::RecordNode(const OpDef& def,
                                           std::span<const Tensor> inputs,
                                           AttrMap attrs) {
  Node node;
  node.op = def.name;
  std::vector<TensorSpec> specs;
  specs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    Tensor r = Resolve(in);
    node.inputs.push_back(r.endpoint());
    specs.push_back(r.spec());
  }
  auto out_specs = InferOutputSpecs(def, specs, attrs, FunctionResolver());
  if (auto scope = ExecutionContext::ScopeDevice()) {
    node.device = DeviceAt(*scope).ToString();
  }
  node.attrs = std::move(attrs);
  const auto index = static_cast<int32_t>(nodes_.size());
  nodes_.push_back(std::move(node));
  std::vector<Tensor> outputs;
  outputs.reserve(out_specs.size());
  for (size_t i = 0; i < out_specs.size(); ++i) {
    outputs.push_back(Tensor::Symbolic(
        std::move(out_specs[i]), id_,
        Endpoint{index, static_cast<int32_t>(i)}));
  }
  return outputs;
}

Endpoint TraceState::FinalEndpoint(const Endpoint& ep) const {
  if (ep.is_input() && ep.index >= kCaptureBase) {
    return Endpoint{Endpoint::kInputNode,
                    ep.index - kCaptureBase +
                        static_cast<int32_t>(explicit_inputs_.size())};
  }
  return ep;
}

TraceState::Result TraceState::Finalize(std::span<const Tensor> outputs,
                                        bool optimize) {
  std::vector<FunctionOutput> outs;
  for (size_t i = 0; i < outputs.size(); ++i) {
    outs.push_back(FunctionOutput{"output_" + std::to_string(i),
                                  Resolve(outputs[i]).endpoint()});
  }
  std::vector<FunctionInput> inputs = explicit_inputs_;
  for (size_t j = 0; j < captures_.size(); ++j) {
    inputs.push_back(
        FunctionInput{"capture_" + std::to_string(j), captures_[j].spec()});
  }
  std::vector<Node> nodes = nodes_;
  for (Node& n : nodes) {
    for (Endpoint& ep : n.inputs) ep = FinalEndpoint(ep);
  }
  for (FunctionOutput& o : outs) o.source = FinalEndpoint(o.source);
  auto graph = std::make_shared<const GraphFunction>(
      name_, std::move(inputs), std::move(nodes), std::move(outs));
  if (optimize) graph = Optimize(*graph);
  return Result{std::move(graph), captures_};
}

// ---------------------------------------------------------------------------

std::vector<Tensor> ConcreteFunction::operator()(
    std::vector<Tensor> args) const {
  args.insert(args.end(), captures.begin(), captures.end());
  return ops::CallFunction(graph->name(), std::move(args));
}

std::string UniqueFunctionName(const std::string& base) {
  static std::atomic<uint64_t> counter{0};
  return base + "_" + std::to_string(counter.fetch_add(1) + 1);
}

ConcreteFunction TraceFunction(const std::string& base_name,
                               const std::vector<TensorSpec>& arg_specs,
                               const TensorFn& fn, bool optimize,
                               int* variables_created) {
  TraceState trace(UniqueFunctionName(base_name));
  std::vector<Tensor> args;
  args.reserve(arg_specs.size());
  for (size_t i = 0; i < arg_specs.size(); ++i) {
    args.push_back(trace.AddInput(arg_specs[i], "arg_" + std::to_string(i)));
  }
  std::vector<Tensor> outputs;
  {
    ContextFrame frame;
    frame.trace = &trace;
    FrameGuard guard(std::move(frame));
    outputs = fn(args);
  }
  Runtime::Get().metrics().traces.fetch_add(1, std::memory_order_relaxed);
  if (variables_created != nullptr) {
    *variables_created = trace.variables_created();
  }
  auto result = trace.Finalize(outputs, optimize);
  Runtime::Get().RegisterFunction(result.graph);
  return ConcreteFunction{std::move(result.graph), std::move(result.captures)};
}

}  // namespace stagehand
