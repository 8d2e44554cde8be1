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

#ifndef STAGEHAND_BENCH_H_
#define STAGEHAND_BENCH_H_

#include <cstdint>
#include <string>
#include <vector>

namespace stagehand {

struct BenchConfig {
  std::string workload = "microop_loop";  // mlp_train | leapfrog | microop_loop
  std::string mode = "staged";            // eager | staged
  int64_t batch = 8;
  int iters = 10;
  int warmup = 2;
  int repeats = 3;
  // Executor workers; 0 keeps the runtime's setting.
  int workers = 0;
  uint64_t seed = 0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<double> run_seconds;
  std::vector<double> examples_per_sec;
  double mean_examples_per_sec = 0;
  double stddev_examples_per_sec = 0;
  // Warmup time, which includes tracing for staged runs.
  double warmup_seconds = 0;
  // Traces of the workload's staged functions (0 when eager).
  int trace_count = 0;
  size_t cache_size = 0;
  uint64_t copies = 0;
  // Largest per-iteration difference between eager and staged values seen
  // by the equivalence gate.
  double max_divergence = 0;
};

// Throws kConfigError.
void ValidateBenchConfig(const BenchConfig& config);

// Per-iteration values (losses, or the integrator state for leapfrog) of
// `iters` steps in one mode, starting from the seeded initial state.
std::vector<std::vector<double>> RunTrajectory(const BenchConfig& config);

// Checks eager and staged trajectories agree within 1e-5, then times the
// requested mode. Throws kConfigError or kNumericalDivergence.
BenchReport RunBenchmark(const BenchConfig& config);

inline constexpr char kBenchCsvHeader[] =
    "workload,mode,batch,iters,examples_per_sec,stddev,trace_count,copies";
// One row per repeat (stddev left empty) and a final row with the mean and
// stddev.
std::string FormatCsv(const BenchReport& report);
// Throws kStorageError.
void EmitCsv(const BenchReport& report, const std::string& path);

}  // namespace stagehand

#endif  // STAGEHAND_BENCH_H_
