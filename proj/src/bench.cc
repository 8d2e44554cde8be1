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

#include "stagehand/bench.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <memory>
#include <random>
#include <sstream>

#include "stagehand/ops.h"
#include "stagehand/runtime.h"
#include "stagehand/staging.h"
#include "stagehand/tape.h"
#include "stagehand/variable.h"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace stagehand {

namespace {

// glibc returns freed arenas to the OS eagerly, which charges page faults
// to whichever mode churns larger buffers. Pin it once so timings compare.
void StabilizeAllocator() {
#ifdef __GLIBC__
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
  });
#endif
}

constexpr double kGateTolerance = 1e-5;

class Workload {
 public:
  virtual ~Workload() = default;
  // One training or integration step; returns the values the equivalence
  // gate compares.
  virtual std::vector<double> Step() = 0;
  virtual int trace_count() const { return 0; }
  virtual size_t cache_size() const { return 0; }
};

Tensor RandomTensor(std::mt19937_64& rng, const Shape& shape, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(static_cast<size_t>(shape.num_elements()));
  for (double& x : v) x = normal(rng);
  return TensorFromHost(v, shape, DType::kFloat32);
}

std::vector<double> Values(const Tensor& t) { return ToHost(t).values; }

// Two-layer regression MLP trained by plain gradient descent.
class MlpTrain : public Workload {
 public:
  static constexpr int64_t kIn = 16;
  static constexpr int64_t kHidden = 32;

  MlpTrain(int64_t batch, uint64_t seed, bool staged) : staged_(staged) {
    std::mt19937_64 rng(seed);
    x_ = RandomTensor(rng, Shape{batch, kIn}, 1.0);
    Tensor w_true = RandomTensor(rng, Shape{kIn, 1}, 1.0);
    y_ = ops::MatMul(x_, w_true);
    vars_ = {Variable(RandomTensor(rng, Shape{kIn, kHidden}, 0.25)),
             Variable(FilledTensor(DType::kFloat32, Shape{kHidden}, 0.0)),
             Variable(RandomTensor(rng, Shape{kHidden, 1}, 0.25)),
             Variable(FilledTensor(DType::kFloat32, Shape{1}, 0.0))};
    neg_lr_ = ScalarTensor(-0.01);
    if (staged_) {
      forward_ = Stage("mlp_forward", [this](const std::vector<Arg>& a) {
        return std::vector<Tensor>{Loss(a[0].tensor(), a[1].tensor())};
      });
      update_ = Stage("mlp_update", [this](const std::vector<Arg>& a) {
        std::vector<Tensor> grads;
        for (const Arg& g : a) grads.push_back(g.tensor());
        Update(grads);
        return std::vector<Tensor>{};
      });
    }
  }

  std::vector<double> Step() override {
    GradientTape tape;
    Tensor loss = staged_ ? forward_({x_, y_})[0] : Loss(x_, y_);
    auto grads = tape.Gradient(
        loss, std::vector<GradSource>(vars_.begin(), vars_.end()));
    if (staged_) {
      update_(std::vector<Arg>(grads.begin(), grads.end()));
    } else {
      Update(grads);
    }
    return Values(loss);
  }

  int trace_count() const override {
    return staged_ ? forward_.trace_count() + update_.trace_count() : 0;
  }
  size_t cache_size() const override {
    return staged_ ? forward_.cache_size() + update_.cache_size() : 0;
  }

 private:
  Tensor Loss(const Tensor& x, const Tensor& y) const {
    Tensor h = ops::Relu(ops::MatMul(x, vars_[0].Read()) + vars_[1].Read());
    Tensor d = ops::MatMul(h, vars_[2].Read()) + vars_[3].Read() - y;
    return ops::ReduceMean(d * d);
  }

  void Update(const std::vector<Tensor>& grads) const {
    for (size_t i = 0; i < vars_.size(); ++i) {
      vars_[i].AssignAdd(neg_lr_ * grads[i]);
    }
  }

  bool staged_;
  Tensor x_, y_, neg_lr_;
  std::vector<Variable> vars_;
  PolymorphicFunction forward_, update_;
};

// Leapfrog integration of Hamiltonian dynamics for a 2-d Gaussian with
// precisions (1, 4); the potential's gradient comes from a tape.
class Leapfrog : public Workload {
 public:
  static constexpr int kSteps = 10;

  Leapfrog(int64_t batch, uint64_t seed, bool staged) : staged_(staged) {
    std::mt19937_64 rng(seed);
    q_ = RandomTensor(rng, Shape{batch, 2}, 1.0);
    p_ = RandomTensor(rng, Shape{batch, 2}, 1.0);
    precision_ = TensorFromHost({1.0, 4.0}, Shape{2});
    half_ = ScalarTensor(0.5);
    eps_ = ScalarTensor(0.1);
    half_eps_ = ScalarTensor(0.05);
    if (staged_) {
      integrate_ = Stage("leapfrog", [this](const std::vector<Arg>& a) {
        return Integrate(a[0].tensor(), a[1].tensor());
      });
    }
  }

  std::vector<double> Step() override {
    auto out = staged_ ? integrate_({q_, p_}) : Integrate(q_, p_);
    q_ = out[0];
    p_ = out[1];
    std::vector<double> v = Values(q_);
    auto pv = Values(p_);
    v.insert(v.end(), pv.begin(), pv.end());
    return v;
  }

  int trace_count() const override {
    return staged_ ? integrate_.trace_count() : 0;
  }
  size_t cache_size() const override {
    return staged_ ? integrate_.cache_size() : 0;
  }

 private:
  Tensor GradPotential(const Tensor& q) const {
    GradientTape tape;
    tape.Watch(q);
    Tensor u = half_ * ops::ReduceSum(precision_ * q * q);
    return tape.Gradient(u, q);
  }

  std::vector<Tensor> Integrate(Tensor q, Tensor p) const {
    for (int i = 0; i < kSteps; ++i) {
      p = p - half_eps_ * GradPotential(q);
      q = q + eps_ * p;
      p = p - half_eps_ * GradPotential(q);
    }
    return {q, p};
  }

  bool staged_;
  Tensor q_, p_, precision_, half_, eps_, half_eps_;
  PolymorphicFunction integrate_;
};

// 1000 dependent scalar-sized adds: all dispatch overhead, no arithmetic.
class MicroOpLoop : public Workload {
 public:
  static constexpr int kOps = 1000;

  MicroOpLoop(int64_t batch, uint64_t seed, bool staged) : staged_(staged) {
    std::mt19937_64 rng(seed);
    x_ = RandomTensor(rng, Shape{batch}, 1.0);
    step_ = ScalarTensor(1e-3);
    if (staged_) {
      chain_ = Stage("microop_loop", [this](const std::vector<Arg>& a) {
        return std::vector<Tensor>{Chain(a[0].tensor())};
      });
    }
  }

  std::vector<double> Step() override {
    x_ = staged_ ? chain_({x_})[0] : Chain(x_);
    return Values(x_);
  }

  int trace_count() const override {
    return staged_ ? chain_.trace_count() : 0;
  }
  size_t cache_size() const override {
    return staged_ ? chain_.cache_size() : 0;
  }

 private:
  Tensor Chain(Tensor x) const {
    for (int i = 0; i < kOps; ++i) x = x + step_;
    return x;
  }

  bool staged_;
  Tensor x_, step_;
  PolymorphicFunction chain_;
};

std::unique_ptr<Workload> MakeWorkload(const BenchConfig& c) {
  const bool staged = c.mode == "staged";
  if (c.workload == "mlp_train") {
    return std::make_unique<MlpTrain>(c.batch, c.seed, staged);
  }
  if (c.workload == "leapfrog") {
    return std::make_unique<Leapfrog>(c.batch, c.seed, staged);
  }
  return std::make_unique<MicroOpLoop>(c.batch, c.seed, staged);
}

void ApplyWorkers(int workers) {
  if (workers <= 0 || Runtime::Get().workers() == workers) return;
  RuntimeOptions options = Runtime::Get().options();
  options.executor_workers = workers;
  Runtime::Reset(options);
}

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

}  // namespace

void ValidateBenchConfig(const BenchConfig& c) {
  auto fail = [](const std::string& m) {
    throw Error(ErrorCode::kConfigError, m);
  };
  if (c.workload != "mlp_train" && c.workload != "leapfrog" &&
      c.workload != "microop_loop") {
    fail("unknown workload '" + c.workload + "'");
  }
  if (c.mode != "eager" && c.mode != "staged") {
    fail("unknown mode '" + c.mode + "'");
  }
  if (c.batch < 1) fail("batch must be at least 1");
  if (c.iters < 1) fail("iters must be at least 1");
  if (c.warmup < 0) fail("warmup must be non-negative");
  if (c.repeats < 1) fail("repeats must be at least 1");
  if (c.workers < 0) fail("workers must be non-negative");
}

std::vector<std::vector<double>> RunTrajectory(const BenchConfig& config) {
  ValidateBenchConfig(config);
  auto w = MakeWorkload(config);
  std::vector<std::vector<double>> out;
  for (int i = 0; i < config.iters; ++i) out.push_back(w->Step());
  return out;
}

BenchReport RunBenchmark(const BenchConfig& config) {
  ValidateBenchConfig(config);
  ApplyWorkers(config.workers);
  StabilizeAllocator();
  BenchReport report;
  report.config = config;

  BenchConfig eager = config;
  eager.mode = "eager";
  BenchConfig staged = config;
  staged.mode = "staged";
  const auto a = RunTrajectory(eager);
  const auto b = RunTrajectory(staged);
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) {
      throw Error(ErrorCode::kNumericalDivergence,
                  "eager and staged iteration " + std::to_string(i) +
                      " produced different value counts");
    }
    for (size_t j = 0; j < a[i].size(); ++j) {
      const double d = std::abs(a[i][j] - b[i][j]) /
                       std::max(1.0, std::abs(a[i][j]));
      if (!(d <= kGateTolerance)) {
        throw Error(ErrorCode::kNumericalDivergence,
                    config.workload + " iteration " + std::to_string(i) +
                        ": eager " + std::to_string(a[i][j]) + " vs staged " +
                        std::to_string(b[i][j]));
      }
      report.max_divergence = std::max(report.max_divergence, d);
    }
  }

  auto w = MakeWorkload(config);
  auto& metrics = Runtime::Get().metrics();
  const uint64_t copies0 = metrics.transparent_copies.load();
  auto t0 = Clock::now();
  for (int i = 0; i < config.warmup; ++i) w->Step();
  report.warmup_seconds = Seconds(t0, Clock::now());
  // A zero-warmup staged run still must not time its first trace.
  if (config.warmup == 0 && config.mode == "staged") w->Step();
  for (int r = 0; r < config.repeats; ++r) {
    auto start = Clock::now();
    for (int i = 0; i < config.iters; ++i) w->Step();
    const double s = Seconds(start, Clock::now());
    report.run_seconds.push_back(s);
    report.examples_per_sec.push_back(
        static_cast<double>(config.batch * config.iters) / s);
  }
  double sum = 0;
  for (double e : report.examples_per_sec) sum += e;
  report.mean_examples_per_sec = sum / config.repeats;
  double sq = 0;
  for (double e : report.examples_per_sec) {
    sq += (e - report.mean_examples_per_sec) *
          (e - report.mean_examples_per_sec);
  }
  report.stddev_examples_per_sec =
      config.repeats > 1 ? std::sqrt(sq / (config.repeats - 1)) : 0.0;
  report.trace_count = w->trace_count();
  report.cache_size = w->cache_size();
  report.copies = metrics.transparent_copies.load() - copies0;
  return report;
}

std::string FormatCsv(const BenchReport& report) {
  const BenchConfig& c = report.config;
  std::ostringstream out;
  out << kBenchCsvHeader << "\n";
  auto row = [&](double eps, const std::string& stddev) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", eps);
    out << c.workload << "," << c.mode << "," << c.batch << "," << c.iters
        << "," << buf << "," << stddev << "," << report.trace_count << ","
        << report.copies << "\n";
  };
  for (double eps : report.examples_per_sec) row(eps, "");
  char sd[64];
  std::snprintf(sd, sizeof sd, "%.3f", report.stddev_examples_per_sec);
  row(report.mean_examples_per_sec, sd);
  return out.str();
}

void EmitCsv(const BenchReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kStorageError, "cannot open " + path);
  out << FormatCsv(report);
  out.close();
  if (!out) throw Error(ErrorCode::kStorageError, "cannot write " + path);
}

}  // namespace stagehand
