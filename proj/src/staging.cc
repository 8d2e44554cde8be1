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

#include "stagehand/staging.h"

#include <map>
#include <mutex>
#include <sstream>

#include "stagehand/context.h"
#include "stagehand/device.h"
#include "stagehand/ops.h"
#include "stagehand/trace.h"

namespace stagehand {

Arg Arg::Opaque(std::string description) {
  Arg a;
  a.value_ = OpaqueValue{std::move(description)};
  return a;
}

Arg::Kind Arg::kind() const { return static_cast<Kind>(value_.index()); }

namespace {

[[noreturn]] void WrongKind(const char* want) {
  throw Error(ErrorCode::kSignatureMismatch,
              std::string("argument is not a ") + want);
}

template <typename T>
const T& Get(const auto& v, const char* want) {
  const T* p = std::get_if<T>(&v);
  if (p == nullptr) WrongKind(want);
  return *p;
}

}  // namespace

const Tensor& Arg::tensor() const { return Get<Tensor>(value_, "tensor"); }
const Variable& Arg::variable() const {
  return Get<Variable>(value_, "variable");
}
int64_t Arg::i() const { return Get<int64_t>(value_, "integer"); }
double Arg::f() const { return Get<double>(value_, "float"); }
bool Arg::b() const { return Get<bool>(value_, "boolean"); }
const std::string& Arg::s() const { return Get<std::string>(value_, "string"); }
const std::vector<Arg>& Arg::list() const {
  return Get<std::vector<Arg>>(value_, "list");
}

namespace {

void Encode(const Arg& a, std::ostringstream& out) {
  switch (a.kind()) {
    case Arg::Kind::kTensor: {
      const Tensor& t = a.tensor();
      if (t.is_resource()) {
        throw Error(ErrorCode::kUnencodableArgument,
                    "pass the Variable, not its resource handle");
      }
      out << "T(" << DTypeName(t.dtype()) << t.shape().ToString() << ")";
      return;
    }
    case Arg::Kind::kVariable: {
      const Variable& v = a.variable();
      if (!v.valid()) {
        throw Error(ErrorCode::kUnencodableArgument, "empty variable");
      }
      out << "V(" << DTypeName(v.dtype()) << v.shape().ToString() << "#"
          << v.id() << ")";
      return;
    }
    case Arg::Kind::kInt:
      out << "i" << a.i();
      return;
    case Arg::Kind::kFloat: {
      std::ostringstream v;
      v.precision(17);
      v << a.f();
      out << "f" << v.str();
      return;
    }
    case Arg::Kind::kBool:
      out << (a.b() ? "true" : "false");
      return;
    case Arg::Kind::kString:
      out << "s" << a.s().size() << ":" << a.s();
      return;
    case Arg::Kind::kList:
      out << "[";
      for (const Arg& e : a.list()) {
        Encode(e, out);
        out << ",";
      }
      out << "]";
      return;
    case Arg::Kind::kOpaque:
      break;
  }
  throw Error(ErrorCode::kUnencodableArgument,
              "argument has no canonical encoding");
}

std::string ScopePrefix() {
  auto scope = ExecutionContext::ScopeDevice();
  return scope ? "@" + DeviceAt(*scope).ToString() + ";" : std::string();
}

void CollectTensors(const Arg& a, std::vector<Tensor>& out) {
  if (a.kind() == Arg::Kind::kTensor) {
    out.push_back(a.tensor());
  } else if (a.kind() == Arg::Kind::kList) {
    for (const Arg& e : a.list()) CollectTensors(e, out);
  }
}

// Rebuilds `a` with its tensors replaced, in order, from `next`.
Arg Substitute(const Arg& a, const std::vector<Tensor>& values, size_t& next) {
  if (a.kind() == Arg::Kind::kTensor) return Arg(values[next++]);
  if (a.kind() == Arg::Kind::kList) {
    std::vector<Arg> items;
    items.reserve(a.list().size());
    for (const Arg& e : a.list()) items.push_back(Substitute(e, values, next));
    return Arg(std::move(items));
  }
  return a;
}

}  // namespace

TraceKey InferTraceKey(const std::vector<Arg>& args) {
  std::ostringstream out;
  out << ScopePrefix();
  for (const Arg& a : args) {
    Encode(a, out);
    out << ";";
  }
  return TraceKey{out.str()};
}

struct PolymorphicFunction::State {
  std::string name;
  HostFunction f;
  std::optional<std::vector<TensorSpec>> signature;

  struct Entry {
    std::mutex mu;
    std::optional<ConcreteFunction> fn;
  };
  mutable std::mutex mu;
  std::map<TraceKey, std::shared_ptr<Entry>> cache;
  bool traced_once = false;
  int trace_count = 0;
};

namespace {



std::vector<TensorSpec> CheckPinned(const std::vector<TensorSpec>& signature,
                                    const std::vector<Arg>& args) {
  if (args.size() != signature.size()) {
    throw Error(ErrorCode::kSignatureMismatch,
                "expected " + std::to_string(signature.size()) +
                    " tensor arguments, got " + std::to_string(args.size()));
  }
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i].kind() != Arg::Kind::kTensor) {
      throw Error(ErrorCode::kSignatureMismatch,
                  "argument " + std::to_string(i) + " must be a tensor");
    }
    const Tensor& t = args[i].tensor();
    if (t.dtype() != signature[i].dtype ||
        !t.shape().IsCompatibleWith(signature[i].shape)) {
      throw Error(ErrorCode::kSignatureMismatch,
                  "argument " + std::to_string(i) + " is " +
                      t.spec().ToString() + ", signature declares " +
                      signature[i].ToString());
    }
  }
  return signature;
}

}  // namespace

TraceKey PolymorphicFunction::KeyFor(const std::vector<Arg>& args) const {
  if (state_->signature) {
    CheckPinned(*state_->signature, args);
    std::ostringstream out;
    out << "pinned;";
    for (const TensorSpec& s : *state_->signature) out << s.ToString() << ";";
    return TraceKey{out.str()};
  }
  return InferTraceKey(args);
}

std::vector<Tensor> PolymorphicFunction::operator()(
    const std::vector<Arg>& args) const {
  State& st = *state_;
  const TraceKey key = KeyFor(args);
  std::vector<Tensor> tensors;
  for (const Arg& a : args) CollectTensors(a, tensors);

  std::shared_ptr<State::Entry> entry;
  {
    std::lock_guard lock(st.mu);
    auto& slot = st.cache[key];
    if (slot == nullptr) slot = std::make_shared<State::Entry>();
    entry = slot;
  }

  ConcreteFunction fn;
  {
    std::lock_guard lock(entry->mu);
    if (!entry->fn) {
      std::vector<TensorSpec> specs;
      if (st.signature) {
        specs = *st.signature;
      } else {
        for (const Tensor& t : tensors) specs.push_back(t.spec());
      }
      auto body = [&](const std::vector<Tensor>& placeholders) {
        std::vector<Arg> staged;
        size_t next = 0;
        for (const Arg& a : args) {
          staged.push_back(Substitute(a, placeholders, next));
        }
        return st.f(staged);
      };
      auto trace = [&](int* created) {
        try {
          return TraceFunction(st.name, specs, body, true, created);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::kStagingError ||
              e.code() == ErrorCode::kVariableCreationError) {
            throw;
          }
          throw Error(ErrorCode::kStagingError,
                      "while tracing '" + st.name + "': " + e.what());
        } catch (const std::exception& e) {
          throw Error(ErrorCode::kStagingError,
                      "while tracing '" + st.name + "': " + e.what());
        }
      };
      bool first;
      {
        std::lock_guard lock(st.mu);
        first = !st.traced_once;
      }
      int created = 0;
      ConcreteFunction traced = trace(&created);
      {
        std::lock_guard lock(st.mu);
        ++st.trace_count;
      }
      if (created > 0) {
        if (!first) {
          throw Error(ErrorCode::kVariableCreationError,
                      "'" + st.name +
                          "' created variables on a trace other than the "
                          "first");
        }
        traced = trace(&created);
        {
          std::lock_guard lock(st.mu);
          ++st.trace_count;
        }
        if (created > 0) {
          throw Error(ErrorCode::kVariableCreationError,
                      "'" + st.name +
                          "' creates variables on every call; create them "
                          "only on the first");
        }
      }
      {
        std::lock_guard lock(st.mu);
        st.traced_once = true;
      }
      entry->fn = std::move(traced);
    }
    fn = *entry->fn;
  }
  return fn(std::move(tensors));
}

std::shared_ptr<const GraphFunction> PolymorphicFunction::GetConcrete(
    const TraceKey& key) const {
  std::shared_ptr<State::Entry> entry;
  {
    std::lock_guard lock(state_->mu);
    auto it = state_->cache.find(key);
    if (it != state_->cache.end()) entry = it->second;
  }
  if (entry != nullptr) {
    std::lock_guard lock(entry->mu);
    if (entry->fn) return entry->fn->graph;
  }
  throw Error(ErrorCode::kMissingConcreteFunction,
              "'" + state_->name + "' has no graph for key " + key.encoding);
}

std::shared_ptr<const GraphFunction> PolymorphicFunction::GetConcrete(
    const std::vector<Arg>& args) const {
  return GetConcrete(KeyFor(args));
}

const std::string& PolymorphicFunction::name() const { return state_->name; }

size_t PolymorphicFunction::cache_size() const {
  return keys().size();
}

int PolymorphicFunction::trace_count() const {
  std::lock_guard lock(state_->mu);
  return state_->trace_count;
}

std::vector<TraceKey> PolymorphicFunction::keys() const {
  std::vector<std::pair<TraceKey, std::shared_ptr<State::Entry>>> entries;
  {
    std::lock_guard lock(state_->mu);
    entries.assign(state_->cache.begin(), state_->cache.end());
  }
  std::vector<TraceKey> out;
  for (auto& [key, entry] : entries) {
    std::lock_guard lock(entry->mu);
    if (entry->fn) out.push_back(key);
  }
  return out;
}

PolymorphicFunction Stage(std::string name, HostFunction f,
                          std::optional<std::vector<TensorSpec>> signature) {
  PolymorphicFunction pf;
  pf.state_ = std::make_shared<PolymorphicFunction::State>();
  pf.state_->name = std::move(name);
  pf.state_->f = std::move(f);
  pf.state_->signature = std::move(signature);
  return pf;
}

}  // namespace stagehand
