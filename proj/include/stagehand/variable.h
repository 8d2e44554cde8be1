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

#ifndef STAGEHAND_VARIABLE_H_
#define STAGEHAND_VARIABLE_H_

#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include "stagehand/tensor.h"

namespace stagehand {

// Storage owned by a variable. Graphs hold it weakly through resource
// handles, so it dies with the last Variable referring to it.
class VariableStorage {
 public:
  VariableStorage(Tensor initial, int device);

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  int device() const { return device_; }

  // Snapshot copy with a fresh identity.
  Tensor Read() const;
  // Throws kShapeMismatch.
  void Assign(const Tensor& value);
  void AssignAdd(const Tensor& value);

 private:
  void Check(const Tensor& value) const;

  DType dtype_;
  Shape shape_;
  int device_;
  mutable std::mutex mu_;
  Tensor value_;
};

// Mutable named tensor storage referenced by identity. Copies of a Variable
// refer to the same storage, like references to one host object.
class Variable {
 public:
  Variable() = default;
  // `initial` must be concrete; the storage lives on the scope device if one
  // is active, else on the device of `initial`. Created inside a trace, the
  // trace is told so the state-creation contract can be enforced.
  explicit Variable(const Tensor& initial);
  // Runs `init` eagerly even while tracing.
  static Variable FromInitializer(const std::function<Tensor()>& init);

  bool valid() const { return storage_ != nullptr; }
  explicit operator bool() const { return valid(); }
  uint64_t id() const { return handle_.id(); }
  DType dtype() const { return storage_->dtype(); }
  const Shape& shape() const { return storage_->shape(); }
  int device() const { return storage_->device(); }
  const Tensor& handle() const { return handle_; }

  // Stateful ops; dispatched like any other op, so they are staged inside
  // traces and a read is watched by every active tape.
  Tensor Read() const;
  void Assign(const Tensor& value) const;
  void AssignAdd(const Tensor& value) const;

  // Direct storage access for checkpointing; bypasses dispatch.
  Tensor Value() const { return storage_->Read(); }
  void SetValue(const Tensor& value) const { storage_->Assign(value); }

 private:
  std::shared_ptr<VariableStorage> storage_;
  Tensor handle_;
};

}  // namespace stagehand

#endif  // STAGEHAND_VARIABLE_H_
