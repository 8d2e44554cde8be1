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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stagehand/bench.h"
#include "stagehand/checkpoint.h"
#include "stagehand/device.h"
#include "stagehand/graph.h"
#include "stagehand/host_call.h"
#include "stagehand/op_registry.h"
#include "stagehand/ops.h"
#include "stagehand/runtime.h"
#include "stagehand/staging.h"
#include "stagehand/tape.h"
#include "stagehand/trace.h"
#include "stagehand/variable.h"

namespace stagehand {
namespace {

using Tensors = std::vector<Tensor>;
using Args = std::vector<Arg>;

struct Checker {
  std::vector<std::string> failures;
  std::string summary;

  void Expect(bool cond, const std::string& what) {
    if (!cond && failures.size() < 20) failures.push_back(what);
    if (!cond && failures.size() == 20) failures.push_back("...");
  }
  bool ok() const { return failures.empty(); }
};

std::vector<double> Values(const Tensor& t) { return ToHost(t).values; }

void ResetRuntime(int accelerators = 0, int workers = 1) {
  RuntimeOptions options;
  options.num_accelerators = accelerators;
  options.executor_workers = workers;
  Runtime::Reset(options);
}

Tensor Random(std::mt19937_64& rng, const Shape& s, DType dtype,
              double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> v(static_cast<size_t>(s.num_elements()));
  for (double& x : v) x = uni(rng);
  return TensorFromHost(v, s, dtype);
}

int CountOps(const GraphFunction& g, const std::string& op) {
  return static_cast<int>(std::count_if(
      g.nodes().begin(), g.nodes().end(),
      [&](const Node& n) { return n.op == op; }));
}

// 1 ------------------------------------------------------------------------

// Random expression over built-in stateless ops. The structure depends only
// on `seed`, so eager and traced runs build the same computation.
struct RandomProgram {
  uint64_t seed;
  int max_depth = 8;

  Tensors operator()(const Tensor& x, const Tensor& y) const {
    std::mt19937_64 rng(seed);
    Tensor a = Gen(rng, x, y, max_depth);
    Tensor b = Gen(rng, x, y, max_depth / 2);
    return {a, ops::ReduceSum(b, {1})};
  }

  // An expression shaped like `x`, at most `depth` ops deep.
  Tensor Gen(std::mt19937_64& rng, const Tensor& x, const Tensor& y,
             int depth) const {
    if (depth <= 1 || rng() % 6 == 0) return rng() % 2 ? x : y;
    auto sub = [&] { return Gen(rng, x, y, depth - 1); };
    switch (rng() % 14) {
      case 0: return ops::Add(sub(), sub());
      case 1: return ops::Sub(sub(), sub());
      case 2: return ops::Mul(sub(), sub());
      case 3: return ops::Div(sub(), ops::Add(ops::Sigmoid(sub()), ops::OnesLike(x)));
      case 4: return ops::Exp(ops::Neg(ops::Relu(sub())));
      case 5: return ops::Log(ops::Add(ops::Softplus(sub()), ops::OnesLike(x)));
      case 6: return ops::Sigmoid(sub());
      case 7: return ops::Softplus(sub());
      case 8:
        return ops::MatMul(ops::MatMul(sub(), ops::Transpose(sub())), sub());
      case 9:
        return ops::BroadcastLike(ops::ReduceSum(sub(), {0}, true), x);
      case 10:
        return ops::BroadcastLike(ops::ReduceMean(sub(), {1}, true), x);
      case 11:
        return ops::ReshapeLike(ops::Reshape(sub(), Shape{x.shape().num_elements()}), x);
      case 12: return ops::Transpose(ops::Transpose(sub()));
      default: return ops::Identity(ops::Neg(sub()));
    }
  }
};

Checker EagerStagedEquivalence() {
  Checker c;
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2026);
  constexpr int kFunctions = 64;
  int compared = 0;
  size_t max_nodes = 0;
  for (int i = 0; i < kFunctions; ++i) {
    const DType dtype = i % 2 ? DType::kFloat64 : DType::kFloat32;
    const int64_t m = 1 + static_cast<int64_t>(rng() % 16);
    const int64_t n = 1 + static_cast<int64_t>(rng() % 16);
    RandomProgram program{static_cast<uint64_t>(1000 + i)};
    auto staged = Stage("random_program", [program](const Args& a) {
      return program(a[0].tensor(), a[1].tensor());
    });
    for (int trial = 0; trial < 3; ++trial) {
      Tensor x = Random(rng, Shape{m, n}, dtype, -2, 2);
      Tensor y = Random(rng, Shape{m, n}, dtype, -2, 2);
      Tensors want = program(x, y);
      Tensors got = staged({x, y});
      for (size_t k = 0; k < want.size(); ++k) {
        c.Expect(BitwiseEqual(want[k], got[k]),
                 "function " + std::to_string(i) + " output " +
                     std::to_string(k) + " differs");
        ++compared;
      }
    }
    max_nodes = std::max(max_nodes, staged.GetConcrete(Args{
        Random(rng, Shape{m, n}, dtype), Random(rng, Shape{m, n}, dtype)})
                                        ->nodes().size());
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start).count();
  c.Expect(secs < 30.0, "took " + std::to_string(secs) + "s");
  std::ostringstream s;
  s << kFunctions << " functions, " << compared
    << " outputs bit-exact, largest graph " << max_nodes << " nodes, "
    << secs << "s";
  c.summary = s.str();
  return c;
}

// 2 ------------------------------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensors&)>;

Tensor Contract(const Tensor& y) {
  std::vector<double> w(static_cast<size_t>(y.num_elements()));
  for (size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.25 * (i % 5);
  return ops::ReduceSum(y * TensorFromHost(w, y.shape(), y.dtype()));
}

struct GradCase {
  std::string op;
  std::vector<Shape> shapes;
  ScalarFn f;
  // Inputs drawn from [1, 2] instead of [-1, 1].
  bool positive = false;
};

std::vector<GradCase> GradCases() {
  using V = Tensors;
  const Shape s33{3, 3};
  static const int64_t square_cb = RegisterHostCallback(
      [](const Tensors& a) { return Tensors{ops::Sigmoid(a[0]) * a[0]}; },
      {{DType::kFloat64, Shape{3, 3}}});
  static const int64_t square_cb32 = RegisterHostCallback(
      [](const Tensors& a) { return Tensors{ops::Sigmoid(a[0]) * a[0]}; },
      {{DType::kFloat32, Shape{3, 3}}});
  static const PolymorphicFunction staged =
      Stage("fd_staged", [](const Args& a) {
        return Tensors{ops::Softplus(a[0].tensor() * a[1].tensor())};
      });
  return {
      {"add", {s33, Shape{3}}, [](const V& v) { return Contract(v[0] + v[1]); }},
      {"sub", {s33, s33}, [](const V& v) { return Contract(v[0] - v[1]); }},
      {"mul", {Shape{3, 1}, Shape{1, 3}},
       [](const V& v) { return Contract(v[0] * v[1]); }},
      {"div", {s33, s33}, [](const V& v) { return Contract(v[0] / v[1]); },
       true},
      {"neg", {s33}, [](const V& v) { return Contract(ops::Neg(v[0])); }},
      {"exp", {s33}, [](const V& v) { return Contract(ops::Exp(v[0])); }},
      {"log", {s33}, [](const V& v) { return Contract(ops::Log(v[0])); },
       true},
      {"relu", {s33}, [](const V& v) { return Contract(ops::Relu(v[0])); }},
      {"softplus", {s33},
       [](const V& v) { return Contract(ops::Softplus(v[0])); }},
      {"sigmoid", {s33},
       [](const V& v) { return Contract(ops::Sigmoid(v[0])); }},
      {"identity", {s33},
       [](const V& v) { return Contract(ops::Identity(v[0])); }},
      {"matmul", {Shape{2, 3}, Shape{3, 4}},
       [](const V& v) { return Contract(ops::MatMul(v[0], v[1])); }},
      {"transpose", {Shape{2, 3}},
       [](const V& v) { return Contract(ops::Transpose(v[0])); }},
      {"reduce_sum", {s33},
       [](const V& v) { return Contract(ops::ReduceSum(v[0], {0})); }},
      {"reduce_mean", {s33},
       [](const V& v) { return Contract(ops::ReduceMean(v[0], {1}, true)); }},
      {"reshape", {s33},
       [](const V& v) { return Contract(ops::Reshape(v[0], Shape{9})); }},
      {"reshape_like", {s33},
       [](const V& v) {
         return Contract(ops::ReshapeLike(v[0], ops::Fill(Shape{1, 9}, 0, v[0].dtype())));
       }},
      {"broadcast_like", {Shape{3}},
       [](const V& v) {
         return Contract(ops::BroadcastLike(v[0], ops::Fill(Shape{2, 3}, 0, v[0].dtype())));
       }},
      {"sum_to_like", {s33},
       [](const V& v) {
         return Contract(ops::SumToLike(v[0], ops::Fill(Shape{3}, 0, v[0].dtype())));
       }},
      {"ones_like", {s33},
       [](const V& v) { return Contract(ops::OnesLike(v[0]) + v[0]); }},
      {"zeros_like", {s33},
       [](const V& v) { return Contract(ops::ZerosLike(v[0]) * v[0]); }},
      {"relu_grad", {s33, s33},
       [](const V& v) { return Contract(ops::ReluGrad(v[0], v[1])); }},
      {"reduce_grad", {Shape{3}, s33},
       [](const V& v) {
         return Contract(ops::ReduceGrad(v[0], v[1], {1}, false, true));
       }},
      {"call_function", {s33, s33},
       [](const V& v) { return Contract(staged({v[0], v[1]})[0]); }},
      {"host_call", {s33},
       [](const V& v) {
         const int64_t cb =
             v[0].dtype() == DType::kFloat64 ? square_cb : square_cb32;
         return Contract(HostCall(cb, {v[0]})[0]);
       }},
  };
}

struct GradStats {
  double max_error = 0;
  int points = 0;
};

// Central differences of `f` at `inputs` against the tape, elementwise
// relative error |g - fd| / max(1, |fd|).
double FiniteDifferenceError(const ScalarFn& f, const Tensors& inputs,
                             double h) {
  Tensors analytic;
  {
    GradientTape t;
    for (const Tensor& in : inputs) t.Watch(in);
    Tensor y = f(inputs);
    analytic = t.Gradient(y, std::vector<GradSource>(inputs.begin(), inputs.end()));
  }
  double worst = 0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> base = Values(inputs[k]);
    std::vector<double> got = Values(analytic[k]);
    for (size_t i = 0; i < base.size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<double> moved = base;
        moved[i] += delta;
        Tensors args = inputs;
        args[k] = TensorFromHost(moved, inputs[k].shape(), inputs[k].dtype());
        return Values(f(args))[0];
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      worst = std::max(worst,
                       std::abs(got[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

// Draws away from relu's kink: every element has |x| >= 0.1.
Tensor DrawSmooth(std::mt19937_64& rng, const Shape& s, DType dtype,
                  bool positive) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> v(static_cast<size_t>(s.num_elements()));
  for (double& x : v) {
    do {
      x = uni(rng);
    } while (std::abs(x) < 0.1);
    if (positive) x = 1.0 + std::abs(x);
  }
  return TensorFromHost(v, s, dtype);
}

Checker GradientCorrectness() {
  Checker c;
  constexpr int kPoints = 100;
  constexpr double kH = 1e-3;
  std::mt19937_64 rng(7);
  double worst32 = 0, worst64 = 0;
  std::string worst32_op, worst64_op;
  std::vector<std::string> covered;
  for (const GradCase& g : GradCases()) {
    covered.push_back(g.op);
    for (DType dtype : {DType::kFloat32, DType::kFloat64}) {
      const double tol = dtype == DType::kFloat32 ? 1e-3 : 1e-6;
      double worst = 0;
      for (int p = 0; p < kPoints; ++p) {
        Tensors in;
        for (const Shape& s : g.shapes) {
          in.push_back(DrawSmooth(rng, s, dtype, g.positive));
        }
        worst = std::max(worst, FiniteDifferenceError(g.f, in, kH));
      }
      c.Expect(worst < tol, g.op + " " + std::string(DTypeName(dtype)) +
                                ": relative error " + std::to_string(worst));
      double& top = dtype == DType::kFloat32 ? worst32 : worst64;
      if (worst > top) {
        top = worst;
        (dtype == DType::kFloat32 ? worst32_op : worst64_op) = g.op;
      }
    }
  }

  // read_variable: the source is the variable itself.
  for (DType dtype : {DType::kFloat32, DType::kFloat64}) {
    const double tol = dtype == DType::kFloat32 ? 1e-3 : 1e-6;
    double worst = 0;
    for (int p = 0; p < kPoints; ++p) {
      Tensor init = DrawSmooth(rng, Shape{3, 3}, dtype, false);
      Variable v(init);
      auto f = [&] { return Contract(ops::Softplus(v.Read()) * v.Read()); };
      Tensor grad;
      {
        GradientTape t;
        grad = t.Gradient(f(), v);
      }
      const auto base = Values(init);
      const auto got = Values(grad);
      for (size_t i = 0; i < base.size(); ++i) {
        auto eval = [&](double delta) {
          auto moved = base;
          moved[i] += delta;
          v.Assign(TensorFromHost(moved, init.shape(), dtype));
          return Values(f())[0];
        };
        const double fd = (eval(kH) - eval(-kH)) / (2 * kH);
        worst = std::max(worst, std::abs(got[i] - fd) / std::max(1.0, std::abs(fd)));
      }
    }
    c.Expect(worst < tol, "read_variable " + std::string(DTypeName(dtype)) +
                              ": relative error " + std::to_string(worst));
    (dtype == DType::kFloat32 ? worst32 : worst64) =
        std::max(dtype == DType::kFloat32 ? worst32 : worst64, worst);
  }
  covered.push_back("read_variable");

  // dropout draws a fresh mask per call, so differences are taken against
  // the mask of the recorded call: y = x * m, exactly linear in x.
  for (DType dtype : {DType::kFloat32, DType::kFloat64}) {
    for (int p = 0; p < kPoints; ++p) {
      Tensor x = DrawSmooth(rng, Shape{4, 4}, dtype, false);
      GradientTape t;
      t.Watch(x);
      Tensor y = ops::Dropout(x, 0.25);
      Tensor g = t.Gradient(Contract(y), x);
      const auto xv = Values(x), yv = Values(y), gv = Values(g);
      for (size_t i = 0; i < xv.size(); ++i) {
        const double scale = yv[i] / xv[i];
        const double w = 0.5 + 0.25 * (i % 5);
        const double tol = dtype == DType::kFloat32 ? 1e-3 : 1e-6;
        c.Expect(std::abs(gv[i] - w * scale) / std::max(1.0, std::abs(w * scale)) < tol,
                 "dropout gradient mismatch");
      }
    }
  }
  covered.push_back("dropout");

  for (const OpDef* def : KernelTable()) {
    if (!def->differentiable()) continue;
    c.Expect(std::find(covered.begin(), covered.end(), def->name) != covered.end(),
             "no gradient check for " + def->name);
  }

  // Nested tapes on y = x * x at x = 3.
  Tensor x = ScalarTensor(3.0);
  GradientTape t1;
  t1.Watch(x);
  Tensor dy_dx;
  {
    GradientTape t2;
    t2.Watch(x);
    Tensor y = x * x;
    dy_dx = t2.Gradient(y, x);
  }
  Tensor d2 = t1.Gradient(dy_dx, x);
  c.Expect(Values(dy_dx)[0] == 6.0, "dy/dx != 6");
  c.Expect(Values(d2)[0] == 2.0, "d2y/dx2 != 2");

  std::ostringstream s;
  s << covered.size() << " differentiable ops x " << kPoints
    << " points, h=" << kH << ": max rel error float32 " << worst32 << " ("
    << worst32_op << "), float64 " << worst64 << " (" << worst64_op
    << "); nested x*x at 3 gives " << Values(dy_dx)[0]
    << ", " << Values(d2)[0];
  c.summary = s.str();
  return c;
}

// 3 ------------------------------------------------------------------------

Tensors Mlp(const Tensor& x, const Variable& w1, const Variable& b1,
            const Variable& w2) {
  Tensor h = ops::Relu(ops::MatMul(x, w1.Read()) + b1.Read());
  return {ops::ReduceMean(ops::Softplus(ops::MatMul(h, w2.Read())))};
}

Checker StagedGradientParity() {
  Checker c;
  ResetRuntime();
  std::mt19937_64 rng(11);
  Variable w1(Random(rng, Shape{4, 8}, DType::kFloat32)),
      b1(Random(rng, Shape{8}, DType::kFloat32)),
      w2(Random(rng, Shape{8, 1}, DType::kFloat32));
  Tensor x = Random(rng, Shape{5, 4}, DType::kFloat32);

  Tensors eager;
  {
    GradientTape t;
    eager = t.Gradient(Mlp(x, w1, b1, w2)[0], {w1, b1, w2});
  }
  auto staged = Stage("mlp", [&](const Args& a) {
    return Mlp(a[0].tensor(), w1, b1, w2);
  });
  auto& m = Runtime::Get().metrics();
  const uint64_t traces0 = m.traces.load();
  const uint64_t built0 = m.gradient_functions_built.load();
  Tensors grads;
  uint64_t backward_primitives = 0;
  std::string backward_name;
  {
    GradientTape t;
    Tensor loss = staged({x})[0];
    if (t.tape().entries().size() == 1) {
      backward_name = t.tape().entries()[0].attrs.Get("backward").func();
    }
    const uint64_t before = m.eager_primitive_dispatches.load();
    grads = t.Gradient(loss, {w1, b1, w2});
    backward_primitives = m.eager_primitive_dispatches.load() - before;
  }
  double worst = 0;
  for (size_t i = 0; i < grads.size(); ++i) {
    auto a = Values(grads[i]), b = Values(eager[i]);
    for (size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  c.Expect(worst <= 1e-6, "gradient difference " + std::to_string(worst));
  c.Expect(!backward_name.empty() &&
               Runtime::Get().FindFunction(backward_name) != nullptr,
           "staged call has no registered backward function");
  const uint64_t traces = m.traces.load() - traces0;
  const uint64_t built = m.gradient_functions_built.load() - built0;
  c.Expect(traces >= 1 && built >= 1, "forward/backward functions not traced");
  c.Expect(backward_primitives == 0,
           std::to_string(backward_primitives) + " eager primitive dispatches in the backward pass");
  std::ostringstream s;
  s << "max |staged - eager| " << worst << "; " << traces << " traces, "
    << built << " gradient functions built ('" << backward_name << "'), "
    << backward_primitives << " eager primitive dispatches during backward";
  c.summary = s.str();
  return c;
}

// 4 ------------------------------------------------------------------------

Checker TraceCache() {
  Checker c;
  ResetRuntime();
  auto lossy_matmul = Stage("lossy_matmul", [](const Args& a) {
    Tensor out = ops::MatMul(a[0].tensor(), a[1].tensor());
    if (a[2].b()) out = ops::Dropout(out, 0.2);
    return Tensors{out};
  });
  Tensor w = TensorFromHost({1, 2, 3, 4}, Shape{2, 2}, DType::kFloat32);
  Tensor x = TensorFromHost({1, 1}, Shape{2, 1}, DType::kFloat32);
  lossy_matmul({w, x, true});
  lossy_matmul({w, x, false});
  const size_t cached = lossy_matmul.cache_size();
  c.Expect(cached == 2, "training flag cache size " + std::to_string(cached));
  c.Expect(CountOps(*lossy_matmul.GetConcrete(Args{w, x, true}), "dropout") == 1,
           "training graph lacks dropout");
  c.Expect(CountOps(*lossy_matmul.GetConcrete(Args{w, x, false}), "dropout") == 0,
           "inference graph has dropout");
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    lossy_matmul({Random(rng, Shape{2, 2}, DType::kFloat32),
                  Random(rng, Shape{2, 1}, DType::kFloat32), i % 2 == 0});
  }
  c.Expect(lossy_matmul.trace_count() == 2,
           "retraced on an equal key: " + std::to_string(lossy_matmul.trace_count()));

  auto pinned = Stage(
      "pinned",
      [](const Args& a) { return Tensors{ops::ReduceSum(a[0].tensor(), {1})}; },
      std::vector<TensorSpec>{{DType::kFloat32, Shape{kUnknownDim, 5}}});
  for (int64_t batch : {1, 2, 3, 8, 13}) {
    pinned({Random(rng, Shape{batch, 5}, DType::kFloat32)});
  }
  c.Expect(pinned.cache_size() <= 1, "pinned cache size " +
                                         std::to_string(pinned.cache_size()));

  std::mt19937 host_rng(3);
  auto add_noise = Stage("add_noise", [&](const Args& a) {
    std::normal_distribution<double> normal;
    return Tensors{a[0].tensor() + ops::Scalar(normal(host_rng))};
  });
  const auto first = Values(add_noise({ScalarTensor(0.0)})[0]);
  bool frozen = true;
  for (int i = 0; i < 10; ++i) {
    frozen = frozen && Values(add_noise({ScalarTensor(0.0)})[0]) == first;
  }
  c.Expect(frozen, "host randomness was not frozen");
  std::ostringstream s;
  s << "training flag cache " << cached << ", traces after 22 calls "
    << lossy_matmul.trace_count() << ", pinned cache " << pinned.cache_size()
    << ", host RNG frozen " << (frozen ? "yes" : "no");
  c.summary = s.str();
  return c;
}

// 5 ------------------------------------------------------------------------

Checker StateCreationContract() {
  Checker c;
  ResetRuntime();
  Variable created;
  auto lazy = Stage("lazy", [&](const Args& a) {
    if (!created) created = Variable(ScalarTensor(2.0));
    return Tensors{created.Read() * a[0].tensor()};
  });
  const double y = Values(lazy({ScalarTensor(3.0)})[0])[0];
  c.Expect(y == 6.0, "lazy result " + std::to_string(y));
  c.Expect(lazy.trace_count() == 2,
           "lazy traces " + std::to_string(lazy.trace_count()));

  std::vector<Variable> keep;
  auto greedy = Stage("greedy", [&](const Args& a) {
    keep.emplace_back(ScalarTensor(1.0));
    return Tensors{keep.back().Read() + a[0].tensor()};
  });
  std::string code = "no error";
  try {
    greedy({ScalarTensor(1.0)});
  } catch (const Error& e) {
    code = ErrorCodeName(e.code());
  }
  c.Expect(code == ErrorCodeName(ErrorCode::kVariableCreationError),
           "every-call creation gave " + code);
  c.summary = "lazy init returns " + std::to_string(y) + " after " +
              std::to_string(lazy.trace_count()) +
              " traces; creating on every call raises " + code;
  return c;
}

// 6 ------------------------------------------------------------------------

Checker ClosureCapture() {
  Checker c;
  ResetRuntime();
  Variable v(ScalarTensor(0.0));
  auto mutate = Stage("mutate", [&](const Args&) {
    v.AssignAdd(ScalarTensor(1.0));
    return Tensors{};
  });
  std::vector<double> seen;
  mutate({});
  seen.push_back(Values(v.Read())[0]);
  v.AssignAdd(ScalarTensor(1.0));
  seen.push_back(Values(v.Read())[0]);
  mutate({});
  seen.push_back(Values(v.Read())[0]);
  c.Expect(seen == std::vector<double>{1.0, 2.0, 3.0}, "values differ");
  std::ostringstream s;
  s << "staged, eager, staged mutation give " << seen[0] << ", " << seen[1]
    << ", " << seen[2];
  c.summary = s.str();
  return c;
}

// 7 ------------------------------------------------------------------------

const TensorSpec kVec{DType::kFloat64, Shape{3}};

// Random DAG of at most `max_nodes` nodes plus `dead` unused neg nodes. With
// `state`, also an unused random_normal and an assign_add.
ConcreteFunction RandomGraph(uint64_t seed, int max_nodes, int dead,
                             const Variable* state) {
  return TraceFunction(
      "random_dag", {kVec, kVec},
      [=](const Tensors& a) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> uni(-1, 1);
        Tensors pool{a[0], a[1]};
        pool.push_back(ops::Constant({uni(rng), uni(rng), uni(rng)}, Shape{3},
                                     DType::kFloat64));
        pool.push_back(ops::Constant({uni(rng), uni(rng), uni(rng)}, Shape{3},
                                     DType::kFloat64));
        auto pick = [&] { return pool[rng() % pool.size()]; };
        const int budget = max_nodes - 2 - dead - (state ? 3 : 0);
        int used = 2;
        while (used + 2 <= budget + 2) {
          Tensor x = pick(), y = pick();
          switch (rng() % 7) {
            case 0: pool.push_back(x + y); used += 1; break;
            case 1: pool.push_back(x - y); used += 1; break;
            case 2: pool.push_back(x * y); used += 1; break;
            case 3: pool.push_back(ops::Softplus(x)); used += 1; break;
            case 4: pool.push_back(ops::Sigmoid(x) * y); used += 2; break;
            case 5: pool.push_back(ops::Relu(x)); used += 1; break;
            default:
              pool.push_back(ops::BroadcastLike(ops::ReduceSum(x), y));
              used += 2;
              break;
          }
        }
        Tensor dead_value = pick();
        for (int i = 0; i < dead; ++i) {
          dead_value = ops::Neg(rng() % 2 ? dead_value : pick());
        }
        if (state) {
          ops::RandomNormal(Shape{3}, DType::kFloat64);
          state->AssignAdd(ops::ReduceSum(pick()));
        }
        return Tensors{pool.back(), pool[pool.size() / 2]};
      },
      /*optimize=*/false);
}

int CountStateful(const GraphFunction& g) {
  int n = 0;
  for (size_t i = 0; i < g.nodes().size(); ++i) {
    n += g.NodeIsStateful(static_cast<int>(i)) ? 1 : 0;
  }
  return n;
}

bool RoundTrips(const GraphFunction& g) {
  return Deserialize(Serialize(g))->StructurallyEqual(g);
}

Checker OptimizerSoundness() {
  Checker c;
  ResetRuntime();
  constexpr int kGraphs = 1000;
  constexpr int kMaxNodes = 40;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal;
  int injected_dead = 0, dead_left = 0, stateful_before = 0,
      stateful_after = 0, round_trips = 0;
  size_t largest = 0;
  Variable state(ScalarTensor(0.0, DType::kFloat64));
  for (int i = 0; i < kGraphs; ++i) {
    const int dead = 1 + static_cast<int>(rng() % 4);
    auto f = RandomGraph(static_cast<uint64_t>(i), kMaxNodes, dead, nullptr);
    const GraphFunction& g = *f.graph;
    largest = std::max(largest, g.nodes().size());
    c.Expect(!g.is_stateful(), "graph " + std::to_string(i) + " is stateful");
    c.Expect(g.nodes().size() <= kMaxNodes,
             "graph " + std::to_string(i) + " has " +
                 std::to_string(g.nodes().size()) + " nodes");
    Tensors in{TensorFromHost({normal(rng), normal(rng), normal(rng)}, Shape{3},
                              DType::kFloat64),
               TensorFromHost({normal(rng), normal(rng), normal(rng)}, Shape{3},
                              DType::kFloat64)};
    const Tensors want = Execute(g, in);
    auto folded = ConstantFold(g);
    auto both = Prune(*folded);
    const Tensors got = Execute(*both, in);
    for (size_t k = 0; k < want.size(); ++k) {
      c.Expect(BitwiseEqual(want[k], got[k]),
               "graph " + std::to_string(i) + " output " + std::to_string(k));
    }
    auto pruned = Prune(g);
    injected_dead += CountOps(g, "neg");
    dead_left += CountOps(*pruned, "neg") + CountOps(*both, "neg");
    for (const auto& out : {pruned, folded, both}) {
      const bool ok = RoundTrips(*out);
      c.Expect(ok, "graph " + std::to_string(i) + " failed to round trip");
      round_trips += ok ? 1 : 0;
    }

    if (i % 4 == 0) {
      auto s = RandomGraph(static_cast<uint64_t>(i), kMaxNodes, dead, &state);
      const int before = CountStateful(*s.graph);
      auto sp = Prune(*s.graph);
      auto so = Optimize(*s.graph);
      stateful_before += 2 * before;
      stateful_after += CountStateful(*sp) + CountStateful(*so);
      c.Expect(CountOps(*sp, "neg") == 0, "dead node kept beside state");
      const bool ok = RoundTrips(*sp) && RoundTrips(*so);
      c.Expect(ok, "stateful graph " + std::to_string(i) +
                       " failed to round trip");
      round_trips += ok ? 2 : 0;
    }
  }
  c.Expect(dead_left == 0, std::to_string(dead_left) + " dead nodes survived");
  c.Expect(stateful_after == stateful_before,
           std::to_string(stateful_before - stateful_after) +
               " stateful nodes removed");
  std::ostringstream s;
  s << kGraphs << " graphs (largest " << largest
    << " nodes) bit-exact after fold+prune; removed "
    << injected_dead << "/" << injected_dead << " injected dead nodes"
    << (dead_left ? " (not all)" : "") << ", kept " << stateful_after << "/"
    << stateful_before << " stateful; " << round_trips
    << " optimizer outputs round-tripped";
  c.summary = s.str();
  return c;
}

// 8 ------------------------------------------------------------------------

std::vector<std::string> Sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

Checker CheckpointMatching() {
  Checker c;
  ResetRuntime();
  Tensor probe = TensorFromHost({0.5, -1, 2}, Shape{1, 3}, DType::kFloat32);
  Net saved(3, /*seed=*/1);
  saved.v().Assign(ScalarTensor(0.75));
  const auto bytes = EncodeCheckpoint(saved);
  int matched_total = 0;
  for (bool out_first : {false, true}) {
    Net fresh(3, /*seed=*/42, out_first);
    MatchReport r = RestoreFromBytes(fresh, bytes);
    matched_total += static_cast<int>(r.matched.size());
    c.Expect(Sorted(r.matched) ==
                 std::vector<std::string>{"out/bias", "out/kernel", "v"},
             "not all variables matched");
    c.Expect(r.unmatched_in_checkpoint.empty() && r.unmatched_in_memory.empty() &&
                 r.conflicts.empty(),
             "unexpected unmatched or conflicting paths");
    c.Expect(BitwiseEqual(fresh(probe), saved(probe)),
             "restored model computes a different value");
  }

  Net missing(3, 1);
  missing.out().Untrack("kernel");
  Net target(3, 9);
  MatchReport partial = RestoreFromBytes(target, EncodeCheckpoint(missing));
  const size_t unmatched = partial.unmatched_in_memory.size() +
                           partial.unmatched_in_checkpoint.size();
  c.Expect(unmatched == 1 && partial.unmatched_in_memory ==
                                 std::vector<std::string>{"out/kernel"},
           "partial restore reported " + std::to_string(unmatched) +
               " unmatched paths");
  c.Expect(Sorted(partial.matched) == std::vector<std::string>{"out/bias", "v"},
           "partial restore did not restore the rest");
  c.Expect(BitwiseEqual(target.v().Read(), missing.v().Read()),
           "partial restore value differs");

  std::vector<uint8_t> payload(257);
  std::mt19937 rng(4);
  for (auto& b : payload) b = static_cast<uint8_t>(rng());
  Trackable root;
  root.Track("table", std::make_shared<Blob>(payload));
  Trackable other;
  auto blob = std::make_shared<Blob>();
  other.Track("table", blob);
  RestoreFromBytes(other, EncodeCheckpoint(root));
  c.Expect(blob->bytes() == payload, "blob bytes differ");

  std::ostringstream s;
  s << "both creation orders matched " << matched_total / 2
    << "/3 variables; missing edge leaves " << unmatched
    << " unmatched path ('" << (unmatched ? partial.unmatched_in_memory[0] : "")
    << "'); " << payload.size() << "-byte blob "
    << (blob->bytes() == payload ? "byte-exact" : "differs");
  c.summary = s.str();
  return c;
}

// 9 ------------------------------------------------------------------------

Checker DeviceSemantics() {
  Checker c;
  ResetRuntime(/*accelerators=*/1, /*workers=*/4);
  const int accel = DeviceIndex("/device:ACCEL:0");
  auto& copies = Runtime::Get().metrics().transparent_copies;
  Tensor a = ScalarTensor(1.0), b = ScalarTensor(2.0);
  const uint64_t before = copies.load();
  Tensor sum;
  {
    DeviceScope scope("/device:ACCEL:0");
    sum = a + b;
  }
  const uint64_t n_copies = copies.load() - before;
  c.Expect(Values(sum)[0] == 3.0, "cross-device add value");
  c.Expect(sum.device() == accel, "cross-device add not on ACCEL");
  c.Expect(n_copies == 2, "cross-device add copies " + std::to_string(n_copies));

  auto pinned = TraceFunction("pinned", {{DType::kFloat32, Shape{}}},
                              [](const Tensors& t) {
                                DeviceScope scope("/device:ACCEL:0");
                                return Tensors{t[0] + t[0]};
                              });
  int override_device = -1;
  {
    DeviceScope scope("/device:CPU:0");
    override_device = pinned({ScalarTensor(1.0)})[0].device();
  }
  c.Expect(override_device == accel, "node override lost to caller scope");

  int identical = 0, runs = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto f = RandomGraph(seed, 40, 0, nullptr);
    Tensors in{TensorFromHost({0.1, -0.2, 0.3}, Shape{3}, DType::kFloat64),
               TensorFromHost({1.5, 0.5, -2.0}, Shape{3}, DType::kFloat64)};
    auto one = Execute(*f.graph, in, {.device = 0, .workers = 1});
    for (int rep = 0; rep < 5; ++rep) {
      auto many = Execute(*f.graph, in, {.device = 0, .workers = 4});
      bool same = true;
      for (size_t i = 0; i < one.size(); ++i) same = same && BitwiseEqual(one[i], many[i]);
      identical += same ? 1 : 0;
      ++runs;
    }
  }
  c.Expect(identical == runs, "worker count changed results");
  ResetRuntime();
  std::ostringstream s;
  s << "cross-device add gives " << Values(sum)[0] << " with " << n_copies
    << " copies; node override places on "
    << (override_device == accel ? "ACCEL" : "CPU") << "; " << identical
    << "/" << runs << " 4-worker runs identical to 1 worker";
  c.summary = s.str();
  return c;
}

// 10 -----------------------------------------------------------------------

double Throughput(const std::string& workload, const std::string& mode,
                  int64_t batch, int iters) {
  BenchConfig config;
  config.workload = workload;
  config.mode = mode;
  config.batch = batch;
  config.iters = iters;
  config.warmup = 2;
  config.repeats = 1;
  return RunBenchmark(config).mean_examples_per_sec;
}

// Staged over eager throughput. Each round times the two modes back to back
// and the median round is reported, so load that drifts over the run hits
// both sides of a ratio alike.
double Ratio(const std::string& workload, int64_t batch, int iters,
             int rounds) {
  std::vector<double> ratios;
  for (int r = 0; r < rounds; ++r) {
    const double eager = Throughput(workload, "eager", batch, iters);
    ratios.push_back(Throughput(workload, "staged", batch, iters) / eager);
  }
  std::nth_element(ratios.begin(), ratios.begin() + rounds / 2, ratios.end());
  return ratios[static_cast<size_t>(rounds / 2)];
}

Checker PerformanceDirection() {
  Checker c;
  ResetRuntime();
  const double micro = Ratio("microop_loop", 8, 20, 11);
  c.Expect(micro >= 2.0, "microop ratio " + std::to_string(micro));

  BenchConfig lf;
  lf.workload = "leapfrog";
  lf.batch = 8;
  lf.iters = 10;
  lf.mode = "eager";
  const auto eager_traj = RunTrajectory(lf);
  lf.mode = "staged";
  const auto staged_traj = RunTrajectory(lf);
  double traj_diff = 0;
  for (size_t i = 0; i < eager_traj.size(); ++i) {
    for (size_t j = 0; j < eager_traj[i].size(); ++j) {
      traj_diff = std::max(traj_diff, std::abs(eager_traj[i][j] - staged_traj[i][j]));
    }
  }
  c.Expect(traj_diff <= 1e-6, "leapfrog trajectories differ by " +
                                  std::to_string(traj_diff));
  const double leap = Ratio("leapfrog", 8, 10, 11);
  c.Expect(leap > 1.0, "leapfrog ratio " + std::to_string(leap));

  const double small = Ratio("mlp_train", 8, 50, 11);
  const double large = Ratio("mlp_train", 512, 50, 11);
  c.Expect(large < small, "mlp ratio did not shrink: batch 8 " +
                              std::to_string(small) + ", batch 512 " +
                              std::to_string(large));
  std::ostringstream s;
  s.precision(3);
  s << "median staged/eager throughput over 11 paired rounds: microop_loop " << micro << "x, leapfrog "
    << leap << "x (trajectory diff " << traj_diff << "), mlp_train batch 8 "
    << small << "x vs batch 512 " << large << "x";
  c.summary = s.str();
  return c;
}

}  // namespace
}  // namespace stagehand

int main() {
  using stagehand::Checker;
  struct Criterion {
    const char* name;
    Checker (*run)();
  };
  const Criterion criteria[] = {
      {"eager/staged equivalence", stagehand::EagerStagedEquivalence},
      {"gradient correctness", stagehand::GradientCorrectness},
      {"staged-gradient parity", stagehand::StagedGradientParity},
      {"trace cache", stagehand::TraceCache},
      {"state-creation contract", stagehand::StateCreationContract},
      {"closure capture", stagehand::ClosureCapture},
      {"graph optimizer soundness", stagehand::OptimizerSoundness},
      {"checkpoint matching", stagehand::CheckpointMatching},
      {"device semantics", stagehand::DeviceSemantics},
      {"performance direction", stagehand::PerformanceDirection},
  };
  int failed = 0;
  int index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    Checker result;
    try {
      result = c.run();
    } catch (const std::exception& e) {
      result.failures.push_back(std::string("exception: ") + e.what());
    }
    std::printf("[%s] %2d %s: %s\n", result.ok() ? "PASS" : "FAIL", index,
                c.name, result.summary.c_str());
    for (const auto& f : result.failures) std::printf("       - %s\n", f.c_str());
    std::fflush(stdout);
    failed += result.ok() ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
