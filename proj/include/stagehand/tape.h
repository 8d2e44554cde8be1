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

#ifndef STAGEHAND_TAPE_H_
#define STAGEHAND_TAPE_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "stagehand/attr.h"
#include "stagehand/op_registry.h"
#include "stagehand/tensor.h"

namespace stagehand {

class Variable;

struct TapeEntry {
  const OpDef* def = nullptr;
  AttrMap attrs;
  // Values are kept whole: they are the saved intermediates.
  std::vector<Tensor> inputs;
  std::vector<Tensor> outputs;
};

// Recording of dispatched ops reachable from watched values. Owned by a
// GradientTape; the execution context only holds a pointer.
class Tape {
 public:
  explicit Tape(bool persistent) : persistent_(persistent) {}

  bool active() const { return active_; }
  bool recording() const { return active_ && !paused_; }
  bool persistent() const { return persistent_; }
  const std::vector<TapeEntry>& entries() const { return entries_; }

  void Watch(const Tensor& t);
  bool IsWatched(uint64_t id) const { return watched_.count(id) != 0; }
  bool IsTracked(uint64_t id) const { return tracked_.count(id) != 0; }
  bool TracksAny(std::span<const Tensor> values) const;

  // Appends an entry when any input is tracked.
  void Record(const OpDef& def, const AttrMap& attrs,
              std::span<const Tensor> inputs, std::span<const Tensor> outputs);

  // Reverse accumulation from `targets` seeded with `seeds`. Sources the
  // targets do not depend on get zeros.
  std::vector<Tensor> ComputeGradients(std::span<const Tensor> targets,
                                       std::span<const Tensor> seeds,
                                       std::span<const Tensor> sources);

  void Deactivate() { active_ = false; }

 private:
  friend class GradientTape;

  bool persistent_;
  bool active_ = true;
  bool consumed_ = false;
  // Set while this tape's own gradient is being computed.
  bool paused_ = false;
  std::unordered_set<uint64_t> watched_;
  std::unordered_set<uint64_t> tracked_;
  std::vector<TapeEntry> entries_;
};

// Something a gradient can be taken with respect to.
struct GradSource {
  GradSource(const Tensor& t) : tensor(t) {}  // NOLINT
  GradSource(const Variable& v);              // NOLINT
  Tensor tensor;
};

// Scoped tape. Begins recording on construction; Stop() ends it, as does
// destruction.
class GradientTape {
 public:
  explicit GradientTape(bool persistent = false);
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  // Throws kNonNestedEnd unless this is the innermost active tape.
  void Stop();
  bool active() const { return tape_->active(); }

  // Throws kInactiveTape.
  void Watch(const GradSource& source);

  // d(target)/d(source) for each source. Throws kNonScalarTarget,
  // kUnwatchedSource, kConsumedTape, kNoGradient.
  std::vector<Tensor> Gradient(const Tensor& target,
                               const std::vector<GradSource>& sources);
  Tensor Gradient(const Tensor& target, const GradSource& source);

  Tape& tape() { return *tape_; }

 private:
  std::unique_ptr<Tape> tape_;
};

// Records `def` on every active tape in the current frame that tracks an
// input.
void RecordOnActiveTapes(const OpDef& def, const AttrMap& attrs,
                         std::span<const Tensor> inputs,
                         std::span<const Tensor> outputs);
bool AnyActiveTapeTracks(std::span<const Tensor> inputs);
void WatchOnActiveTapes(const Tensor& t);

}  // namespace stagehand

#endif  // STAGEHAND_TAPE_H_
