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

#ifndef STAGEHAND_OP_REGISTRY_H_
#define STAGEHAND_OP_REGISTRY_H_

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stagehand/attr.h"
#include "stagehand/tensor.h"

namespace stagehand {

class GraphFunction;
using FunctionLibrary =
    std::map<std::string, std::shared_ptr<const GraphFunction>>;

// Resolves function-name attrs: the innermost library first, then enclosing
// libraries, then the runtime-wide library.
class FunctionResolver {
 public:
  FunctionResolver() = default;
  FunctionResolver(const FunctionLibrary* library,
                   const FunctionResolver* parent)
      : library_(library), parent_(parent) {}

  std::shared_ptr<const GraphFunction> Find(const std::string& name) const;
  // Throws kMissingFunction.
  std::shared_ptr<const GraphFunction> Resolve(const std::string& name) const;

 private:
  const FunctionLibrary* library_ = nullptr;
  const FunctionResolver* parent_ = nullptr;
};

inline constexpr int kVariadic = -1;

struct AttrSpec {
  std::string name;
  AttrKind kind;
  // Required when absent.
  std::optional<AttrValue> default_value;
};

// Which stateful resource an op touches; stateful nodes sharing a resource
// keep their recorded program order during graph execution.
enum class ResourceClass {
  kNone,
  kVariable,  // the resource handle at input 0
  kRng,
  kHost,
  kAll,  // orders against every other stateful node
};

struct KernelContext {
  std::span<const Tensor> inputs;
  const AttrMap& attrs;
  int device = 0;
  const FunctionResolver& functions;
  std::vector<Tensor> outputs;
};

struct ShapeContext {
  std::span<const TensorSpec> inputs;
  const AttrMap& attrs;
  const FunctionResolver& functions;
};

// What a gradient function sees of the forward op. Forward values are
// materialized on demand: under a staged backward pass, touching a value
// turns it into an input of the backward function.
class GradContext {
 public:
  using ValueFn = std::function<Tensor(int)>;

  GradContext(const AttrMap& attrs, std::vector<TensorSpec> input_specs,
              std::vector<TensorSpec> output_specs, ValueFn input,
              ValueFn output, std::vector<std::optional<Tensor>> upstream)
      : attrs_(attrs),
        input_specs_(std::move(input_specs)),
        output_specs_(std::move(output_specs)),
        input_(std::move(input)),
        output_(std::move(output)),
        upstream_(std::move(upstream)) {}

  const AttrMap& attrs() const { return attrs_; }
  int num_inputs() const { return static_cast<int>(input_specs_.size()); }
  int num_outputs() const { return static_cast<int>(output_specs_.size()); }
  const TensorSpec& input_spec(int i) const {
    return input_specs_[static_cast<size_t>(i)];
  }
  const TensorSpec& output_spec(int i) const {
    return output_specs_[static_cast<size_t>(i)];
  }
  Tensor input(int i) const { return input_(i); }
  Tensor output(int i) const { return output_(i); }

  bool has_upstream(int i) const {
    return static_cast<size_t>(i) < upstream_.size() &&
           upstream_[static_cast<size_t>(i)].has_value();
  }
  // Upstream gradient of output i; zeros shaped like the output when the
  // output is unconnected.
  Tensor upstream(int i) const;

  // False when nothing will read the gradient of input i, so a gradient
  // function may return nullopt for it instead of computing it.
  bool needs_input(int i) const {
    return needed_.empty() || needed_[static_cast<size_t>(i)];
  }
  void set_needed(std::vector<bool> needed) { needed_ = std::move(needed); }

 private:
  const AttrMap& attrs_;
  std::vector<TensorSpec> input_specs_;
  std::vector<TensorSpec> output_specs_;
  ValueFn input_;
  ValueFn output_;
  std::vector<std::optional<Tensor>> upstream_;
  std::vector<bool> needed_;
};

using KernelFn = void (*)(KernelContext&);
using ShapeFn = std::vector<TensorSpec> (*)(const ShapeContext&);
// Returns one entry per forward input; nullopt means no gradient flows.
using GradientFn = std::vector<std::optional<Tensor>> (*)(GradContext&);
// Replaces the kernel for eager dispatch (the op still runs as a kernel
// inside graphs).
using EagerFn = std::vector<Tensor> (*)(std::span<const Tensor> inputs,
                                        const AttrMap& attrs);
// Rewrites attrs when an active tape watches an input, e.g. to switch a
// function call to its forward variant.
using TapeVariantFn = void (*)(AttrMap& attrs);

struct OpDef {
  std::string name;
  int input_arity = 0;   // or kVariadic
  int output_arity = 1;  // or kVariadic; the shape function decides
  std::vector<AttrSpec> attrs;
  bool stateful = false;
  ResourceClass resource = ResourceClass::kNone;
  KernelFn kernel = nullptr;
  ShapeFn shape_fn = nullptr;
  GradientFn gradient = nullptr;
  EagerFn eager = nullptr;
  TapeVariantFn tape_variant = nullptr;
  // Resource inputs are watched on every active tape, as reading a variable
  // does.
  bool watches_resources = false;

  bool differentiable() const { return gradient != nullptr; }
};

class OpRegistry {
 public:
  // The process registry, pre-populated with the built-in kernel table.
  static OpRegistry& Global();

  // Throws kDuplicateOp.
  void Register(OpDef def);
  const OpDef* Find(std::string_view name) const;
  // Throws kUnknownOp.
  const OpDef& Lookup(std::string_view name) const;
  std::vector<const OpDef*> List() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::unique_ptr<OpDef>> ops_;
};

void RegisterOp(OpDef def);
// Sorted by name.
std::vector<const OpDef*> KernelTable();

// Checks arity and attr schema, filling defaults into `attrs`. Throws
// kArityMismatch or kAttrMismatch.
void ValidateInvocation(const OpDef& def, size_t num_inputs, AttrMap& attrs);

// Runs `op` in the current execution context: eagerly (kernel executes,
// active tapes record) or, while tracing, by appending a node to the open
// trace and returning symbolic outputs.
std::vector<Tensor> Dispatch(std::string_view op, std::vector<Tensor> inputs,
                             AttrMap attrs = {});
Tensor DispatchOne(std::string_view op, std::vector<Tensor> inputs,
                   AttrMap attrs = {});

// Runs the kernel of `def` on concrete inputs that already live on `device`.
// Shared by eager dispatch, constant folding and the graph executor.
std::vector<Tensor> RunKernel(const OpDef& def, std::span<const Tensor> inputs,
                              const AttrMap& attrs, int device,
                              const FunctionResolver& functions);
// Same, replacing the contents of `outputs` and reusing its capacity.
void RunKernelInto(const OpDef& def, std::span<const Tensor> inputs,
                   const AttrMap& attrs, int device,
                   const FunctionResolver& functions,
                   std::vector<Tensor>& outputs);

std::vector<TensorSpec> InferOutputSpecs(const OpDef& def,
                                         std::span<const TensorSpec> inputs,
                                         const AttrMap& attrs,
                                         const FunctionResolver& functions);

void RegisterBuiltinOps(OpRegistry& registry);

}  // namespace stagehand

#endif  // STAGEHAND_OP_REGISTRY_H_
