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

#ifndef STAGEHAND_ATTR_H_
#define STAGEHAND_ATTR_H_

#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "stagehand/tensor.h"

namespace stagehand {

enum class AttrKind : uint8_t {
  kInt = 0,
  kFloat = 1,
  kBool = 2,
  kString = 3,
  kDType = 4,
  kShape = 5,
  kFunc = 6,
  kTensor = 7,
  kIntList = 8,
};

std::string_view AttrKindName(AttrKind kind);

// Names a graph function; resolved against the enclosing function library
// when the op executes.
struct FunctionRef {
  std::string name;
  friend bool operator==(const FunctionRef& a, const FunctionRef& b) {
    return a.name == b.name;
  }
};

class AttrValue {
 public:
  AttrValue() = default;
  AttrValue(int64_t v) : value_(v) {}
  AttrValue(int v) : value_(static_cast<int64_t>(v)) {}
  AttrValue(double v) : value_(v) {}
  AttrValue(bool v) : value_(v) {}
  AttrValue(std::string v) : value_(std::move(v)) {}
  AttrValue(const char* v) : value_(std::string(v)) {}
  AttrValue(DType v) : value_(v) {}
  AttrValue(Shape v) : value_(std::move(v)) {}
  AttrValue(FunctionRef v) : value_(std::move(v)) {}
  AttrValue(Tensor v) : value_(std::move(v)) {}
  AttrValue(std::vector<int64_t> v) : value_(std::move(v)) {}

  AttrKind kind() const { return static_cast<AttrKind>(value_.index()); }

  int64_t i() const { return std::get<int64_t>(value_); }
  double f() const { return std::get<double>(value_); }
  bool b() const { return std::get<bool>(value_); }
  const std::string& s() const { return std::get<std::string>(value_); }
  DType type() const { return std::get<DType>(value_); }
  const Shape& shape() const { return std::get<Shape>(value_); }
  const std::string& func() const { return std::get<FunctionRef>(value_).name; }
  const Tensor& tensor() const { return std::get<Tensor>(value_); }
  const std::vector<int64_t>& list() const {
    return std::get<std::vector<int64_t>>(value_);
  }

  // Deterministic textual encoding, used for cache keys and debugging.
  std::string Canonical() const;

  friend bool operator==(const AttrValue& a, const AttrValue& b);

 private:
  std::variant<int64_t, double, bool, std::string, DType, Shape, FunctionRef,
               Tensor, std::vector<int64_t>>
      value_;
};

// Order-insensitive attribute map; entries are kept sorted by name.
class AttrMap {
 public:
  using Entry = std::pair<std::string, AttrValue>;

  AttrMap() = default;
  AttrMap(std::initializer_list<Entry> entries);

  void Set(std::string name, AttrValue value);
  const AttrValue* Find(std::string_view name) const;
  // Throws kAttrMismatch if absent.
  const AttrValue& Get(std::string_view name) const;
  bool Has(std::string_view name) const { return Find(name) != nullptr; }

  int64_t GetInt(std::string_view name, int64_t fallback) const;
  bool GetBool(std::string_view name, bool fallback) const;

  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  std::string Canonical() const;

  friend bool operator==(const AttrMap& a, const AttrMap& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace stagehand

#endif  // STAGEHAND_ATTR_H_
