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

#ifndef STAGEHAND_RUNTIME_H_
#define STAGEHAND_RUNTIME_H_

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "stagehand/device.h"

namespace stagehand {

class GraphFunction;
class ThreadPool;

// Startup configuration.
struct RuntimeOptions {
  // Simulated accelerators, listed after CPU:0 as ACCEL:0..n-1.
  int num_accelerators = 0;
  // Graph executor worker count; 0 selects the hardware parallelism.
  int executor_workers = 0;
  // Busy-wait added to every kernel placed on a simulated accelerator.
  int64_t accel_op_latency_ns = 0;
  // Host callbacks run one at a time when set.
  bool serialize_host_calls = true;
  uint64_t seed = 0x5eed;
};

struct MetricsSnapshot {
  uint64_t eager_dispatches = 0;
  // Eager dispatches excluding graph-function calls.
  uint64_t eager_primitive_dispatches = 0;
  uint64_t transparent_copies = 0;
  uint64_t traces = 0;
  uint64_t gradient_functions_built = 0;
  uint64_t graph_executions = 0;
  uint64_t nodes_executed = 0;
  uint64_t host_calls = 0;
};

struct Metrics {
  std::atomic<uint64_t> eager_dispatches{0};
  std::atomic<uint64_t> eager_primitive_dispatches{0};
  std::atomic<uint64_t> transparent_copies{0};
  std::atomic<uint64_t> traces{0};
  std::atomic<uint64_t> gradient_functions_built{0};
  std::atomic<uint64_t> graph_executions{0};
  std::atomic<uint64_t> nodes_executed{0};
  std::atomic<uint64_t> host_calls{0};

  MetricsSnapshot Snapshot() const;
  void Reset();
};

// Process-wide state: device list, worker pool, function library, RNG.
class Runtime {
 public:
  static Runtime& Get();

  // Rebuilds devices, worker pool and metrics. Must not race with any
  // in-flight execution; tensors placed on removed devices become invalid.
  static void Reset(const RuntimeOptions& options);

  const RuntimeOptions& options() const { return options_; }
  const std::vector<DeviceName>& devices() const { return devices_; }
  Metrics& metrics() { return metrics_; }

  int workers() const { return workers_; }
  // Null when workers() == 1.
  ThreadPool* pool() { return pool_.get(); }

  // Graph functions addressable by name from eager call_function dispatch.
  void RegisterFunction(std::shared_ptr<const GraphFunction> fn);
  std::shared_ptr<const GraphFunction> FindFunction(
      const std::string& name) const;

  // Stateful random draws share one stream.
  void SeedRng(uint64_t seed);
  double NextNormal();
  double NextUniform();

  ~Runtime();

 private:
  explicit Runtime(const RuntimeOptions& options);
  void Configure(const RuntimeOptions& options);

  RuntimeOptions options_;
  std::vector<DeviceName> devices_;
  Metrics metrics_;
  int workers_ = 1;
  std::unique_ptr<ThreadPool> pool_;

  mutable std::mutex library_mu_;
  std::map<std::string, std::shared_ptr<const GraphFunction>> library_;

  std::mutex rng_mu_;
  std::mt19937_64 rng_;
};

}  // namespace stagehand

#endif  // STAGEHAND_RUNTIME_H_
