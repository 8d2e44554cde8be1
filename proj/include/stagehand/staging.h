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

#ifndef STAGEHAND_STAGING_H_
#define STAGEHAND_STAGING_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stagehand/graph.h"
#include "stagehand/tensor.h"
#include "stagehand/variable.h"

namespace stagehand {

// One argument to a staged function: a tensor, a variable, or a plain host
// value (number, boolean, string, nested list). Anything else is opaque and
// cannot be part of a trace key.
class Arg {
 public:
  enum class Kind { kTensor, kVariable, kInt, kFloat, kBool, kString, kList,
                    kOpaque };

  Arg(const Tensor& t) : value_(t) {}                  // NOLINT
  Arg(const Variable& v) : value_(v) {}                // NOLINT
  Arg(int v) : value_(static_cast<int64_t>(v)) {}      // NOLINT
  Arg(int64_t v) : value_(v) {}                        // NOLINT
  Arg(double v) : value_(v) {}                         // NOLINT
  Arg(bool v) : value_(v) {}                           // NOLINT
  Arg(const char* v) : value_(std::string(v)) {}       // NOLINT
  Arg(std::string v) : value_(std::move(v)) {}         // NOLINT
  Arg(std::vector<Arg> v) : value_(std::move(v)) {}    // NOLINT
  // A host object with no canonical encoding.
  static Arg Opaque(std::string description);

  Kind kind() const;
  const Tensor& tensor() const;
  const Variable& variable() const;
  int64_t i() const;
  double f() const;
  bool b() const;
  const std::string& s() const;
  const std::vector<Arg>& list() const;

 private:
  struct OpaqueValue {
    std::string description;
  };
  Arg() = default;

  std::variant<Tensor, Variable, int64_t, double, bool, std::string,
               std::vector<Arg>, OpaqueValue>
      value_;
};

// Canonical, payload-independent encoding of a call: device scope plus each
// argument's abstract type.
struct TraceKey {
  std::string encoding;

  friend bool operator==(const TraceKey& a, const TraceKey& b) {
    return a.encoding == b.encoding;
  }
  friend bool operator<(const TraceKey& a, const TraceKey& b) {
    return a.encoding < b.encoding;
  }
};

// Throws kUnencodableArgument.
TraceKey InferTraceKey(const std::vector<Arg>& args);

// The host function being staged. While tracing, tensor arguments arrive as
// symbolic placeholders; everything else is passed through unchanged.
using HostFunction = std::function<std::vector<Tensor>(const std::vector<Arg>&)>;

// Graph-function cache over one host function, keyed by TraceKey. Copies
// share the cache.
class PolymorphicFunction {
 public:
  // Traces on a cache miss, then runs the graph through call_function.
  // Throws kSignatureMismatch, kStagingError, kVariableCreationError,
  // kUnencodableArgument.
  std::vector<Tensor> operator()(const std::vector<Arg>& args) const;

  // Throws kMissingConcreteFunction.
  std::shared_ptr<const GraphFunction> GetConcrete(const TraceKey& key) const;
  std::shared_ptr<const GraphFunction> GetConcrete(
      const std::vector<Arg>& args) const;
  // Key the given call would use.
  TraceKey KeyFor(const std::vector<Arg>& args) const;

  const std::string& name() const;
  size_t cache_size() const;
  // Traces run so far, including re-traces demanded by the state contract.
  int trace_count() const;
  std::vector<TraceKey> keys() const;

 private:
  friend PolymorphicFunction Stage(std::string,
                                   HostFunction,
                                   std::optional<std::vector<TensorSpec>>);
  struct State;
  std::shared_ptr<State> state_;
};

// Nothing is traced until the first call. With `signature`, every call is
// checked against it and a single graph serves all of them; unknown dims
// accept any extent.
PolymorphicFunction Stage(
    std::string name, HostFunction f,
    std::optional<std::vector<TensorSpec>> signature = std::nullopt);

}  // namespace stagehand

#endif  // STAGEHAND_STAGING_H_
