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

#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <set>

#include "exec_plan.h"
#include "stagehand/device.h"
#include "stagehand/graph.h"
#include "stagehand/runtime.h"
#include "thread_pool.h"

namespace stagehand {

const ExecPlan& GraphFunction::plan() const {
  std::call_once(plan_once_, [this] {
    auto plan = std::make_unique<ExecPlan>();
    plan->num_inputs = static_cast<int>(inputs_.size());
    std::vector<int> first_slot(nodes_.size());
    int slot = plan->num_inputs;
    for (size_t n = 0; n < nodes_.size(); ++n) {
      first_slot[n] = slot;
      slot += num_outputs_of(static_cast<int>(n));
    }
    plan->num_slots = slot;
    auto slot_of = [&](const Endpoint& ep) {
      return ep.is_input() ? ep.index
                           : first_slot[static_cast<size_t>(ep.node)] + ep.index;
    };
    plan->steps.resize(nodes_.size());
    for (size_t n = 0; n < nodes_.size(); ++n) {
      const Node& node = nodes_[n];
      ExecPlan::Step& step = plan->steps[n];
      step.def = &OpRegistry::Global().Lookup(node.op);
      step.attrs = &node.attrs;
      step.device_name = node.device;
      step.out_slot = first_slot[n];
      step.num_outputs = num_outputs_of(static_cast<int>(n));
      std::set<int> preds(control_inputs_[n].begin(),
                          control_inputs_[n].end());
      for (const Endpoint& ep : node.inputs) {
        step.in_slots.push_back(slot_of(ep));
        if (!ep.is_input()) preds.insert(ep.node);
      }
      plan->max_arity = std::max(plan->max_arity, step.in_slots.size());
      step.num_predecessors = static_cast<int>(preds.size());
      for (int p : preds) {
        plan->steps[static_cast<size_t>(p)].successors.push_back(
            static_cast<int>(n));
      }
      if (preds.empty()) plan->roots.push_back(static_cast<int>(n));
    }
    for (const auto& out : outputs_) {
      plan->output_slots.push_back(slot_of(out.source));
    }
    constexpr int kUnused = -1, kKeep = -2;
    std::vector<int> last_use(static_cast<size_t>(plan->num_slots), kUnused);
    for (size_t n = 0; n < plan->steps.size(); ++n) {
      for (int s : plan->steps[n].in_slots) {
        last_use[static_cast<size_t>(s)] = static_cast<int>(n);
      }
    }
    for (int s : plan->output_slots) last_use[static_cast<size_t>(s)] = kKeep;
    for (size_t n = 0; n < plan->steps.size(); ++n) {
      const ExecPlan::Step& step = plan->steps[n];
      for (int i = 0; i < step.num_outputs; ++i) {
        auto& u = last_use[static_cast<size_t>(step.out_slot + i)];
        if (u == kUnused) u = static_cast<int>(n);
      }
    }
    for (size_t s = 0; s < last_use.size(); ++s) {
      if (last_use[s] >= 0) {
        plan->steps[static_cast<size_t>(last_use[s])].release.push_back(
            static_cast<int>(s));
      }
    }
    plan_ = std::move(plan);
  });
  return *plan_;
}

namespace {

int StepDevice(const ExecPlan::Step& step, int caller_device) {
  if (step.device_name.empty()) return caller_device;
  return DeviceIndex(step.device_name);
}

void RunStep(const ExecPlan& plan, int n, std::vector<Tensor>& slots,
             std::vector<Tensor>& scratch, std::vector<Tensor>& outputs,
             int caller_device,
             const FunctionResolver& resolver) {
  const ExecPlan::Step& step = plan.steps[static_cast<size_t>(n)];
  int device = StepDevice(step, caller_device);
  scratch.clear();
  for (int s : step.in_slots) scratch.push_back(slots[static_cast<size_t>(s)]);
  if (!scratch.empty() && scratch[0].is_resource()) {
    device = scratch[0].device();
  }
  int copies = 0;
  for (Tensor& t : scratch) {
    if (t.is_concrete() && t.device() != device) {
      t = CopyTo(t, device);
      ++copies;
    }
  }
  if (copies > 0) {
    Runtime::Get().metrics().transparent_copies.fetch_add(
        static_cast<uint64_t>(copies), std::memory_order_relaxed);
  }
  try {
    RunKernelInto(*step.def, scratch, *step.attrs, device, resolver, outputs);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kKernelError) throw;
    throw Error(ErrorCode::kKernelError,
                "node " + std::to_string(n) + " (" + step.def->name +
                    "): " + e.detail());
  }
  for (size_t i = 0; i < outputs.size(); ++i) {
    slots[static_cast<size_t>(step.out_slot) + i] = std::move(outputs[i]);
  }
  outputs.clear();
}

// Shared between the calling thread and pool helpers; helpers may outlive
// the call, so the state is reference counted.
struct ParallelRun {
  const ExecPlan* plan;
  const FunctionResolver* resolver;
  int device;
  ThreadPool* pool;
  std::vector<Tensor> slots;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<int> ready;
  std::vector<int> pending;
  size_t remaining = 0;
  int in_flight = 0;
  std::exception_ptr error;

  bool finished() const {
    return remaining == 0 || (error != nullptr && in_flight == 0);
  }
};

void Work(const std::shared_ptr<ParallelRun>& run, bool caller);

void Spawn(const std::shared_ptr<ParallelRun>& run, size_t count) {
  for (size_t i = 0; i < count; ++i) {
    run->pool->Schedule([run] { Work(run, false); });
  }
}

void Work(const std::shared_ptr<ParallelRun>& run, bool caller) {
  std::vector<Tensor> scratch;
  std::vector<Tensor> outputs;
  scratch.reserve(run->plan->max_arity);
  std::unique_lock<std::mutex> lock(run->mu);
  for (;;) {
    if (caller) {
      run->cv.wait(lock, [&] {
        return run->finished() || (!run->ready.empty() && !run->error);
      });
      if (run->finished()) return;
    } else if (run->ready.empty() || run->error) {
      return;
    }
    const int n = run->ready.front();
    run->ready.pop_front();
    ++run->in_flight;
    lock.unlock();

    std::exception_ptr error;
    try {
      RunStep(*run->plan, n, run->slots, scratch, outputs, run->device,
              *run->resolver);
    } catch (...) {
      error = std::current_exception();
    }

    lock.lock();
    --run->in_flight;
    --run->remaining;
    size_t released = 0;
    if (error != nullptr) {
      if (run->error == nullptr) run->error = error;
    } else {
      for (int s : run->plan->steps[static_cast<size_t>(n)].successors) {
        if (--run->pending[static_cast<size_t>(s)] == 0) {
          run->ready.push_back(s);
          ++released;
        }
      }
    }
    if (released > 1 && run->pool != nullptr) Spawn(run, released - 1);
    run->cv.notify_all();
  }
}

void CheckInputs(const GraphFunction& g, std::span<const Tensor> inputs) {
  if (inputs.size() != g.inputs().size()) {
    throw Error(ErrorCode::kInputMismatch,
                g.name() + " takes " + std::to_string(g.inputs().size()) +
                    " inputs, got " + std::to_string(inputs.size()));
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    const TensorSpec& spec = g.inputs()[i].spec;
    const Tensor& t = inputs[i];
    if (!t.defined() || t.is_symbolic() || t.is_resource() != spec.is_resource ||
        t.dtype() != spec.dtype || !spec.shape.IsCompatibleWith(t.shape())) {
      throw Error(ErrorCode::kInputMismatch,
                  g.name() + " input " + std::to_string(i) + " ('" +
                      g.inputs()[i].name + "') expects " + spec.ToString() +
                      ", got " + (t.defined() ? t.DebugString() : "nothing"));
    }
  }
}

}  // namespace

std::vector<Tensor> Execute(const GraphFunction& g,
                            std::span<const Tensor> inputs,
                            const ExecuteOptions& options,
                            const FunctionResolver* parent) {
  CheckInputs(g, inputs);
  const ExecPlan& plan = g.plan();
  const FunctionResolver resolver(&g.library(), parent);
  Runtime& rt = Runtime::Get();
  auto& metrics = rt.metrics();
  metrics.graph_executions.fetch_add(1, std::memory_order_relaxed);
  metrics.nodes_executed.fetch_add(plan.steps.size(),
                                   std::memory_order_relaxed);

  const int workers = options.workers > 0 ? options.workers : rt.workers();
  std::vector<Tensor> slots;
  if (workers <= 1 || rt.pool() == nullptr || plan.steps.size() < 2) {
    slots.resize(static_cast<size_t>(plan.num_slots));
    std::copy(inputs.begin(), inputs.end(), slots.begin());
    std::vector<Tensor> scratch;
    std::vector<Tensor> outputs;
    scratch.reserve(plan.max_arity);
    for (size_t n = 0; n < plan.steps.size(); ++n) {
      RunStep(plan, static_cast<int>(n), slots, scratch, outputs,
              options.device, resolver);
      for (int s : plan.steps[n].release) {
        slots[static_cast<size_t>(s)] = Tensor();
      }
    }
  } else {
    auto run = std::make_shared<ParallelRun>();
    run->plan = &plan;
    run->resolver = &resolver;
    run->device = options.device;
    run->pool = rt.pool();
    run->slots.resize(static_cast<size_t>(plan.num_slots));
    std::copy(inputs.begin(), inputs.end(), run->slots.begin());
    run->pending.reserve(plan.steps.size());
    for (const auto& step : plan.steps) {
      run->pending.push_back(step.num_predecessors);
    }
    run->remaining = plan.steps.size();
    run->ready.assign(plan.roots.begin(), plan.roots.end());
    if (run->ready.size() > 1) {
      Spawn(run, std::min<size_t>(run->ready.size() - 1,
                                  static_cast<size_t>(workers - 1)));
    }
    Work(run, true);
    std::lock_guard<std::mutex> lock(run->mu);
    if (run->error != nullptr) std::rethrow_exception(run->error);
    slots = std::move(run->slots);
  }

  std::vector<Tensor> outputs;
  outputs.reserve(plan.output_slots.size());
  for (int s : plan.output_slots) {
    outputs.push_back(slots[static_cast<size_t>(s)]);
  }
  return outputs;
}

}  // namespace stagehand
