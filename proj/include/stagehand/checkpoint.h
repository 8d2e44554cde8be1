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

#ifndef STAGEHAND_CHECKPOINT_H_
#define STAGEHAND_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stagehand/errors.h"
#include "stagehand/tensor.h"
#include "stagehand/variable.h"

namespace stagehand {

// A node of the object graph that checkpoints walk. Children are reached
// through named edges; the graph may share objects and contain cycles.
class Trackable {
 public:
  enum class Kind : uint8_t { kContainer = 0, kVariable = 1, kIterator = 2,
                              kBlob = 3 };

  virtual ~Trackable() = default;
  virtual Kind kind() const { return Kind::kContainer; }

  // Replaces any existing edge of the same name.
  void Track(const std::string& name, std::shared_ptr<Trackable> child);
  void Untrack(const std::string& name) { children_.erase(name); }
  std::shared_ptr<Trackable> Child(const std::string& name) const;
  // Sorted by edge name.
  const std::map<std::string, std::shared_ptr<Trackable>>& children() const {
    return children_;
  }

 private:
  std::map<std::string, std::shared_ptr<Trackable>> children_;
};

class TrackableVariable : public Trackable {
 public:
  explicit TrackableVariable(Variable v) : variable_(std::move(v)) {}
  Kind kind() const override { return Kind::kVariable; }
  const Variable& variable() const { return variable_; }

 private:
  Variable variable_;
};

// Cursor over an in-memory sequence; only the position is saved.
class DatasetIterator : public Trackable {
 public:
  explicit DatasetIterator(std::vector<Tensor> elements)
      : elements_(std::move(elements)) {}
  Kind kind() const override { return Kind::kIterator; }

  bool done() const { return cursor_ >= elements_.size(); }
  // Throws kStorageError past the end.
  Tensor Next();
  int64_t cursor() const { return static_cast<int64_t>(cursor_); }
  void set_cursor(int64_t c);
  size_t size() const { return elements_.size(); }

 private:
  std::vector<Tensor> elements_;
  size_t cursor_ = 0;
};

// Arbitrary host bytes saved verbatim.
class Blob : public Trackable {
 public:
  explicit Blob(std::vector<uint8_t> bytes = {}) : bytes_(std::move(bytes)) {}
  Kind kind() const override { return Kind::kBlob; }
  const std::vector<uint8_t>& bytes() const { return bytes_; }
  void set_bytes(std::vector<uint8_t> bytes) { bytes_ = std::move(bytes); }

 private:
  std::vector<uint8_t> bytes_;
};

// Fully connected layer, y = x . kernel + bias, with edges "kernel" and
// "bias".
class Dense : public Trackable {
 public:
  // Kernel entries are drawn from N(0, 1/input_dim) with `seed`; bias starts
  // at zero.
  Dense(int64_t input_dim, int64_t units, uint64_t seed,
        DType dtype = DType::kFloat32);
  Tensor operator()(const Tensor& x) const;
  const Variable& kernel() const { return kernel_->variable(); }
  const Variable& bias() const { return bias_->variable(); }

 private:
  std::shared_ptr<TrackableVariable> kernel_;
  std::shared_ptr<TrackableVariable> bias_;
};

// A scalar scale "v" and a Dense "out": out(softplus(x * v)).
class Net : public Trackable {
 public:
  // Builds "out" before "v" when `out_first`; edge names do not change.
  Net(int64_t input_dim, uint64_t seed, bool out_first = false);
  Tensor operator()(const Tensor& x) const;
  const Variable& v() const { return v_->variable(); }
  Dense& out() const { return *out_; }

 private:
  std::shared_ptr<TrackableVariable> v_;
  std::shared_ptr<Dense> out_;
};

// A matched pair whose saved value cannot be applied; the object keeps its
// current value.
struct MatchConflict {
  std::string path;
  std::string detail;
  ErrorCode code = ErrorCode::kDTypeOrShapeConflict;
};

// Paths are "/"-joined edge names from the root ("" is the root). Only
// stateful objects (variables, iterators, blobs) are listed.
struct MatchReport {
  std::vector<std::string> matched;
  std::vector<std::string> unmatched_in_checkpoint;
  std::vector<std::string> unmatched_in_memory;
  std::vector<MatchConflict> conflicts;
};

// "SCK1" container: skeleton of the object graph plus one payload record
// per stateful object. Deterministic for equal state.
inline constexpr uint32_t kCheckpointFormatVersion = 1;
std::vector<uint8_t> EncodeCheckpoint(const Trackable& root);
// Greedy matching by edge name, breadth first, lexicographic. Matched
// variables are assigned in place. Throws kStorageError for a malformed
// container.
MatchReport RestoreFromBytes(Trackable& root, std::span<const uint8_t> bytes);

// File wrappers. Throw kStorageError.
void SaveCheckpoint(const Trackable& root, const std::string& path);
MatchReport RestoreCheckpoint(Trackable& root, const std::string& path);

}  // namespace stagehand

#endif  // STAGEHAND_CHECKPOINT_H_
