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

#include "stagehand/attr.h"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace stagehand {

std::string_view AttrKindName(AttrKind kind) {
  switch (kind) {
    case AttrKind::kInt: return "int";
    case AttrKind::kFloat: return "float";
    case AttrKind::kBool: return "bool";
    case AttrKind::kString: return "string";
    case AttrKind::kDType: return "dtype";
    case AttrKind::kShape: return "shape";
    case AttrKind::kFunc: return "func";
    case AttrKind::kTensor: return "tensor";
    case AttrKind::kIntList: return "int_list";
  }
  return "invalid";
}

bool operator==(const AttrValue& a, const AttrValue& b) {
  if (a.kind() != b.kind()) return false;
  if (a.kind() == AttrKind::kTensor) {
    return BitwiseEqual(a.tensor(), b.tensor());
  }
  if (a.kind() == AttrKind::kFloat) {
    // Bit-level, so NaN attrs compare equal to themselves.
    double x = a.f(), y = b.f();
    return std::memcmp(&x, &y, sizeof(double)) == 0;
  }
  switch (a.kind()) {
    case AttrKind::kInt: return a.i() == b.i();
    case AttrKind::kBool: return a.b() == b.b();
    case AttrKind::kString: return a.s() == b.s();
    case AttrKind::kDType: return a.type() == b.type();
    case AttrKind::kShape: return a.shape() == b.shape();
    case AttrKind::kFunc: return a.func() == b.func();
    case AttrKind::kIntList: return a.list() == b.list();
    default: return false;
  }
}

std::string AttrValue::Canonical() const {
  std::ostringstream os;
  switch (kind()) {
    case AttrKind::kInt: os << "i:" << i(); break;
    case AttrKind::kFloat: {
      os.precision(17);
      os << "f:" << f();
      break;
    }
    case AttrKind::kBool: os << "b:" << (b() ? "true" : "false"); break;
    case AttrKind::kString: os << "s:" << s().size() << ":" << s(); break;
    case AttrKind::kDType: os << "t:" << DTypeName(type()); break;
    case AttrKind::kShape: os << "shape:" << shape().ToString(); break;
    case AttrKind::kFunc: os << "fn:" << func(); break;
    case AttrKind::kTensor: {
      const Tensor& t = tensor();
      os << "tensor:" << t.spec().ToString() << ":";
      static const char* kHex = "0123456789abcdef";
      for (size_t k = 0; k < t.num_bytes(); ++k) {
        auto byte = static_cast<unsigned>(t.raw()[k]);
        os << kHex[byte >> 4] << kHex[byte & 15];
      }
      break;
    }
    case AttrKind::kIntList: {
      os << "list:[";
      for (size_t k = 0; k < list().size(); ++k) {
        if (k > 0) os << ",";
        os << list()[k];
      }
      os << "]";
      break;
    }
  }
  return os.str();
}

AttrMap::AttrMap(std::initializer_list<Entry> entries) {
  for (const auto& e : entries) Set(e.first, e.second);
}

void AttrMap::Set(std::string name, AttrValue value) {
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), name,
      [](const Entry& e, const std::string& n) { return e.first < n; });
  if (it != entries_.end() && it->first == name) {
    it->second = std::move(value);
  } else {
    entries_.insert(it, Entry(std::move(name), std::move(value)));
  }
}

const AttrValue* AttrMap::Find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return &e.second;
  }
  return nullptr;
}

const AttrValue& AttrMap::Get(std::string_view name) const {
  const AttrValue* v = Find(name);
  if (v == nullptr) {
    throw Error(ErrorCode::kAttrMismatch,
                "missing attr '" + std::string(name) + "'");
  }
  return *v;
}

int64_t AttrMap::GetInt(std::string_view name, int64_t fallback) const {
  const AttrValue* v = Find(name);
  return v != nullptr ? v->i() : fallback;
}

bool AttrMap::GetBool(std::string_view name, bool fallback) const {
  const AttrValue* v = Find(name);
  return v != nullptr ? v->b() : fallback;
}

std::string AttrMap::Canonical() const {
  std::string out = "{";
  for (size_t k = 0; k < entries_.size(); ++k) {
    if (k > 0) out += ";";
    out += entries_[k].first + "=" + entries_[k].second.Canonical();
  }
  return out + "}";
}

}  // namespace stagehand
