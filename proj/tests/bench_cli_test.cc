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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "stagehand/bench.h"
#include "stagehand/runtime.h"
#include "test_util.h"

namespace stagehand {
namespace {

using testing::ErrorOf;
using testing::Name;

BenchConfig Small(const std::string& workload, const std::string& mode) {
  BenchConfig c;
  c.workload = workload;
  c.mode = mode;
  c.batch = 4;
  c.iters = 3;
  c.warmup = 1;
  c.repeats = 3;
  c.seed = 7;
  return c;
}

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> Fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

TEST_CASE("config validation") {
  testing::ResetRuntime();
  auto bad = [](auto mutate) {
    BenchConfig c = Small("leapfrog", "eager");
    mutate(c);
    return ErrorOf([&] { ValidateBenchConfig(c); });
  };
  const std::string config_error = Name(ErrorCode::kConfigError);
  CHECK(bad([](BenchConfig&) {}) == "no error");
  CHECK(bad([](BenchConfig& c) { c.workload = "resnet50"; }) == config_error);
  CHECK(bad([](BenchConfig& c) { c.mode = "lazy"; }) == config_error);
  CHECK(bad([](BenchConfig& c) { c.batch = 0; }) == config_error);
  CHECK(bad([](BenchConfig& c) { c.iters = 0; }) == config_error);
  CHECK(bad([](BenchConfig& c) { c.warmup = -1; }) == config_error);
  CHECK(bad([](BenchConfig& c) { c.repeats = 0; }) == config_error);
  CHECK(bad([](BenchConfig& c) { c.workers = -2; }) == config_error);
  BenchConfig c = Small("leapfrog", "eager");
  c.iters = 0;
  CHECK(ErrorOf([&] { RunBenchmark(c); }) == config_error);
  CHECK(ErrorOf([&] { RunTrajectory(c); }) == config_error);
}

TEST_CASE("leapfrog follows the exact 10-step propagator") {
  testing::ResetRuntime();
  // numpy: matrix_power(kick @ drift @ kick, 10) for precisions 1 and 4.
  const double m[2][4] = {
      {0.5399512509335087, 0.8427503884058642, -0.8406435124348496,
       0.5399512509335083},
      {-0.41918921058156033, 0.45623636155954617, -1.806695991775803,
       -0.4191892105815602}};
  for (const char* mode : {"eager", "staged"}) {
    BenchConfig c = Small("leapfrog", mode);
    c.iters = 4;
    auto traj = RunTrajectory(c);
    REQUIRE(traj.size() == 4);
    const size_t half = traj[0].size() / 2;
    REQUIRE(half == 8);
    for (size_t it = 0; it + 1 < traj.size(); ++it) {
      for (size_t i = 0; i < half; ++i) {
        const double* a = m[i % 2];
        const double q = traj[it][i], p = traj[it][half + i];
        CHECK(traj[it + 1][i] == doctest::Approx(a[0] * q + a[1] * p)
                                     .epsilon(1e-5));
        CHECK(traj[it + 1][half + i] ==
              doctest::Approx(a[2] * q + a[3] * p).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("eager and staged trajectories agree") {
  testing::ResetRuntime();
  for (const char* w : {"leapfrog", "mlp_train", "microop_loop"}) {
    INFO(w);
    auto a = RunTrajectory(Small(w, "eager"));
    auto b = RunTrajectory(Small(w, "staged"));
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      testing::CheckClose(b[i], a[i], 1e-6);
    }
  }
}

TEST_CASE("trajectories are reproducible from the seed") {
  testing::ResetRuntime();
  BenchConfig c = Small("mlp_train", "staged");
  CHECK(RunTrajectory(c) == RunTrajectory(c));
  BenchConfig other = c;
  other.seed = 8;
  CHECK(RunTrajectory(c) != RunTrajectory(other));
}

TEST_CASE("mlp training lowers the loss") {
  testing::ResetRuntime();
  BenchConfig c = Small("mlp_train", "eager");
  c.iters = 30;
  auto traj = RunTrajectory(c);
  CHECK(traj.back()[0] < traj.front()[0]);
}

TEST_CASE("microop loop adds one per iteration") {
  testing::ResetRuntime();
  auto traj = RunTrajectory(Small("microop_loop", "staged"));
  for (size_t i = 0; i + 1 < traj.size(); ++i) {
    for (size_t j = 0; j < traj[i].size(); ++j) {
      CHECK(traj[i + 1][j] - traj[i][j] == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
}

TEST_CASE("staged mlp traces forward and update once each") {
  testing::ResetRuntime();
  BenchConfig c = Small("mlp_train", "staged");
  auto report = RunBenchmark(c);
  CHECK(report.trace_count == 2);
  CHECK(report.cache_size == 2);
  c.repeats = 5;
  c.iters = 6;
  report = RunBenchmark(c);
  CHECK(report.trace_count == 2);
  CHECK(report.cache_size == 2);
  CHECK(RunBenchmark(Small("mlp_train", "eager")).trace_count == 0);
}

TEST_CASE("report fields") {
  testing::ResetRuntime();
  BenchConfig c = Small("leapfrog", "staged");
  auto report = RunBenchmark(c);
  REQUIRE(report.run_seconds.size() == 3);
  REQUIRE(report.examples_per_sec.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(report.run_seconds[i] > 0);
    CHECK(report.examples_per_sec[i] ==
          doctest::Approx(c.batch * c.iters / report.run_seconds[i]));
  }
  CHECK(report.mean_examples_per_sec > 0);
  CHECK(report.stddev_examples_per_sec >= 0);
  CHECK(report.warmup_seconds > 0);
  CHECK(report.trace_count == 1);
  CHECK(report.copies == 0);
  CHECK(report.max_divergence <= 1e-5);
}

TEST_CASE("workers option resizes the executor") {
  testing::ResetRuntime();
  BenchConfig c = Small("microop_loop", "staged");
  c.workers = 3;
  RunBenchmark(c);
  CHECK(Runtime::Get().workers() == 3);
}

TEST_CASE("csv layout") {
  testing::ResetRuntime();
  BenchConfig c = Small("leapfrog", "eager");
  auto report = RunBenchmark(c);
  const std::string csv = FormatCsv(report);
  CHECK(csv.find('\r') == std::string::npos);
  CHECK(csv.back() == '\n');
  auto lines = Lines(csv);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "workload,mode,batch,iters,examples_per_sec,stddev,trace_count,copies");
  for (size_t i = 1; i < lines.size(); ++i) {
    auto f = Fields(lines[i]);
    REQUIRE(f.size() == 8);
    CHECK(f[0] == "leapfrog");
    CHECK(f[1] == "eager");
    CHECK(f[2] == "4");
    CHECK(f[3] == "3");
    CHECK(std::stod(f[4]) > 0);
    CHECK(f[5].empty() == (i < 4));
    CHECK(f[6] == "0");
    CHECK(f[7] == "0");
  }
}

TEST_CASE("reruns agree on every non-timing column") {
  testing::ResetRuntime();
  auto strip = [](const std::string& csv) {
    std::vector<std::string> rows;
    for (const auto& line : Lines(csv)) {
      auto f = Fields(line);
      f[4] = f[5] = "";
      std::string row;
      for (const auto& cell : f) row += cell + ",";
      rows.push_back(row);
    }
    return rows;
  };
  BenchConfig c = Small("mlp_train", "staged");
  CHECK(strip(FormatCsv(RunBenchmark(c))) ==
        strip(FormatCsv(RunBenchmark(c))));
}

TEST_CASE("emit csv") {
  testing::ResetRuntime();
  auto report = RunBenchmark(Small("microop_loop", "staged"));
  const auto path =
      std::filesystem::temp_directory_path() / "stagehand_bench_test.csv";
  EmitCsv(report, path.string());
  std::ifstream in(path, std::ios::binary);
  std::stringstream text;
  text << in.rdbuf();
  CHECK(text.str() == FormatCsv(report));
  std::filesystem::remove(path);
  CHECK(ErrorOf([&] {
          EmitCsv(report, "/nonexistent-dir/stagehand/out.csv");
        }) == Name(ErrorCode::kStorageError));
  CHECK(ErrorOf([&] {
          EmitCsv(report, std::filesystem::temp_directory_path().string());
        }) == Name(ErrorCode::kStorageError));
}

}  // namespace
}  // namespace stagehand
