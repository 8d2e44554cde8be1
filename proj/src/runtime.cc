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

#include "stagehand/runtime.h"

#include <cmath>
#include <thread>

#include "stagehand/context.h"
#include "stagehand/graph.h"
#include "thread_pool.h"

namespace stagehand {

MetricsSnapshot Metrics::Snapshot() const {
  MetricsSnapshot s;
  s.eager_dispatches = eager_dispatches.load();
  s.eager_primitive_dispatches = eager_primitive_dispatches.load();
  s.transparent_copies = transparent_copies.load();
  s.traces = traces.load();
  s.gradient_functions_built = gradient_functions_built.load();
  s.graph_executions = graph_executions.load();
  s.nodes_executed = nodes_executed.load();
  s.host_calls = host_calls.load();
  return s;
}

void Metrics::Reset() {
  eager_dispatches = 0;
  eager_primitive_dispatches = 0;
  transparent_copies = 0;
  traces = 0;
  gradient_functions_built = 0;
  graph_executions = 0;
  nodes_executed = 0;
  host_calls = 0;
}

namespace {
Runtime*& Instance() {
  static Runtime* instance = nullptr;
  return instance;
}
std::mutex& InstanceMutex() {
  static std::mutex mu;
  return mu;
}
}  // namespace

Runtime& Runtime::Get() {
  Runtime*& instance = Instance();
  if (instance == nullptr) {
    std::lock_guard<std::mutex> lock(InstanceMutex());
    if (instance == nullptr) instance = new Runtime(RuntimeOptions{});
  }
  return *instance;
}

void Runtime::Reset(const RuntimeOptions& options) {
  Get().Configure(options);
}

Runtime::Runtime(const RuntimeOptions& options) { Configure(options); }

Runtime::~Runtime() = default;

void Runtime::Configure(const RuntimeOptions& options) {
  if (options.num_accelerators < 0 || options.executor_workers < 0) {
    throw Error(ErrorCode::kConfigError, "negative runtime option");
  }
  options_ = options;
  devices_.clear();
  devices_.push_back(DeviceName{"local", 0, "CPU", 0});
  for (int i = 0; i < options.num_accelerators; ++i) {
    devices_.push_back(DeviceName{"local", 0, "ACCEL", i});
  }
  pool_.reset();
  workers_ = options.executor_workers > 0
                 ? options.executor_workers
                 : std::max(1u, std::thread::hardware_concurrency());
  if (workers_ > 1) pool_ = std::make_unique<ThreadPool>(workers_ - 1);
  metrics_.Reset();
  SeedRng(options.seed);
}

void Runtime::RegisterFunction(std::shared_ptr<const GraphFunction> fn) {
  std::lock_guard<std::mutex> lock(library_mu_);
  library_[fn->name()] = std::move(fn);
}

std::shared_ptr<const GraphFunction> Runtime::FindFunction(
    const std::string& name) const {
  std::lock_guard<std::mutex> lock(library_mu_);
  auto it = library_.find(name);
  return it == library_.end() ? nullptr : it->second;
}

void Runtime::SeedRng(uint64_t seed) {
  std::lock_guard<std::mutex> lock(rng_mu_);
  rng_.seed(seed);
}

double Runtime::NextNormal() {
  std::lock_guard<std::mutex> lock(rng_mu_);
  // Box-Muller on the raw engine keeps the stream identical across standard
  // library implementations.
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  double u1 = static_cast<double>(rng_() >> 11) * kScale;
  double u2 = static_cast<double>(rng_() >> 11) * kScale;
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

double Runtime::NextUniform() {
  std::lock_guard<std::mutex> lock(rng_mu_);
  return static_cast<double>(rng_() >> 11) * (1.0 / 9007199254740992.0);
}

// ---------------------------------------------------------------------------
// Execution context.

namespace {
std::vector<ContextFrame>& ThreadFrames() {
  thread_local std::vector<ContextFrame> frames(1);
  return frames;
}
}  // namespace

ContextFrame& ExecutionContext::Current() { return ThreadFrames().back(); }

const std::vector<ContextFrame>& ExecutionContext::Frames() {
  return ThreadFrames();
}

std::vector<ContextFrame>& ExecutionContext::MutableFrames() {
  return ThreadFrames();
}

std::optional<int> ExecutionContext::ScopeDevice() {
  const auto& stack = Current().device_stack;
  if (stack.empty()) return std::nullopt;
  return stack.back();
}

TraceState* ExecutionContext::InnermostTrace() {
  auto& frames = ThreadFrames();
  for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
    if (it->trace != nullptr) return it->trace;
    if (it->isolated) return nullptr;
  }
  return nullptr;
}

void ExecutionContext::Push(ContextFrame frame) {
  ThreadFrames().push_back(std::move(frame));
}

void ExecutionContext::Pop() {
  auto& frames = ThreadFrames();
  if (frames.size() > 1) frames.pop_back();
}

EscapeTrace::EscapeTrace() {
  auto& frames = ThreadFrames();
  if (frames.back().trace == nullptr) return;
  // Resume the nearest enclosing eager frame.
  for (auto it = frames.rbegin(); it != frames.rend(); ++it) {
    if (it->trace == nullptr) {
      ContextFrame eager;
      eager.tapes = it->tapes;
      eager.device_stack = it->device_stack;
      frames.push_back(std::move(eager));
      pushed_ = true;
      return;
    }
  }
}

EscapeTrace::~EscapeTrace() {
  if (pushed_) ExecutionContext::Pop();
}

}  // namespace stagehand
