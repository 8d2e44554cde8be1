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

// Command-line driver: benchmarks and device listing.
//
//   stagehand bench --workload leapfrog --mode staged --out leapfrog.csv
//   stagehand bench --workload mlp_train --batch 512 --json
//   stagehand devices --accelerators 1

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "stagehand/bench.h"
#include "stagehand/device.h"
#include "stagehand/runtime.h"

namespace {

nlohmann::json ReportJson(const stagehand::BenchReport& r) {
  const auto& c = r.config;
  return {
      {"workload", c.workload},
      {"mode", c.mode},
      {"batch", c.batch},
      {"iters", c.iters},
      {"warmup", c.warmup},
      {"repeats", c.repeats},
      {"seed", c.seed},
      {"examples_per_sec", r.examples_per_sec},
      {"run_seconds", r.run_seconds},
      {"mean_examples_per_sec", r.mean_examples_per_sec},
      {"stddev_examples_per_sec", r.stddev_examples_per_sec},
      {"warmup_seconds", r.warmup_seconds},
      {"trace_count", r.trace_count},
      {"cache_size", r.cache_size},
      {"copies", r.copies},
      {"max_divergence", r.max_divergence},
  };
}

int RunBench(const stagehand::BenchConfig& config, const std::string& out,
             bool json) {
  try {
    auto report = stagehand::RunBenchmark(config);
    if (json) {
      std::cout << ReportJson(report).dump(2) << "\n";
    } else if (out.empty() || out == "-") {
      std::cout << stagehand::FormatCsv(report);
    } else {
      stagehand::EmitCsv(report, out);
    }
    std::fprintf(stderr,
                 "%s/%s: %.1f examples/sec (stddev %.1f), warmup %.3fs, "
                 "%d traces, max eager/staged divergence %.3g\n",
                 config.workload.c_str(), config.mode.c_str(),
                 report.mean_examples_per_sec, report.stddev_examples_per_sec,
                 report.warmup_seconds, report.trace_count,
                 report.max_divergence);
    return 0;
  } catch (const stagehand::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return e.code() == stagehand::ErrorCode::kNumericalDivergence ? 2 : 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stagehand runtime tools"};
  app.require_subcommand(1);

  stagehand::BenchConfig config;
  std::string out;
  auto* bench = app.add_subcommand("bench", "eager vs staged throughput");
  bench->add_option("--workload", config.workload,
                    "mlp_train, leapfrog or microop_loop")
      ->capture_default_str();
  bench->add_option("--mode", config.mode, "eager or staged")
      ->capture_default_str();
  bench->add_option("--batch", config.batch)->capture_default_str();
  bench->add_option("--iters", config.iters)->capture_default_str();
  bench->add_option("--warmup", config.warmup)->capture_default_str();
  bench->add_option("--repeats", config.repeats)->capture_default_str();
  bench->add_option("--workers", config.workers,
                    "executor workers, 0 keeps the default")
      ->capture_default_str();
  bench->add_option("--seed", config.seed)->capture_default_str();
  bench->add_option("--out", out, "CSV path; stdout when omitted");
  bool json = false;
  bench->add_flag("--json", json, "print the report as JSON instead of CSV")
      ->excludes("--out");

  int accelerators = 0;
  auto* devices = app.add_subcommand("devices", "list devices");
  devices->add_option("--accelerators", accelerators,
                      "simulated accelerators to configure");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*bench) return RunBench(config, out, json);
  stagehand::RuntimeOptions options;
  options.num_accelerators = accelerators;
  try {
    stagehand::Runtime::Reset(options);
  } catch (const stagehand::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
  for (const auto& d : stagehand::ListDevices()) {
    std::cout << d.ToString() << "\n";
  }
  return 0;
}
