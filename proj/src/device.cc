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

#include "stagehand/device.h"

#include <charconv>
#include <cstring>

#include "stagehand/context.h"
#include "stagehand/runtime.h"

namespace stagehand {

namespace {

bool ConsumePrefix(std::string_view& s, std::string_view prefix) {
  if (s.substr(0, prefix.size()) != prefix) return false;
  s.remove_prefix(prefix.size());
  return true;
}

bool ConsumeInt(std::string_view& s, int& out) {
  size_t n = 0;
  while (n < s.size() && s[n] >= '0' && s[n] <= '9') ++n;
  if (n == 0) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + n, out);
  if (ec != std::errc()) return false;
  s.remove_prefix(n);
  return true;
}

std::string_view ConsumeUntil(std::string_view& s, char stop) {
  size_t n = s.find(stop);
  if (n == std::string_view::npos) n = s.size();
  std::string_view out = s.substr(0, n);
  s.remove_prefix(n);
  return out;
}

[[noreturn]] void Malformed(std::string_view text) {
  throw Error(ErrorCode::kUnknownDevice,
              "malformed device name '" + std::string(text) + "'");
}

}  // namespace

DeviceName DeviceName::Parse(std::string_view text) {
  DeviceName name;
  std::string_view s = text;
  if (ConsumePrefix(s, "/job:")) {
    name.job = std::string(ConsumeUntil(s, '/'));
    if (name.job.empty()) Malformed(text);
    if (!ConsumePrefix(s, "/task:") || !ConsumeInt(s, name.task)) {
      Malformed(text);
    }
  }
  if (!ConsumePrefix(s, "/device:")) Malformed(text);
  name.kind = std::string(ConsumeUntil(s, ':'));
  if (name.kind.empty() || !ConsumePrefix(s, ":") ||
      !ConsumeInt(s, name.index) || !s.empty()) {
    Malformed(text);
  }
  return name;
}

std::string DeviceName::ToString() const {
  return "/job:" + job + "/task:" + std::to_string(task) + "/device:" + kind +
         ":" + std::to_string(index);
}

std::vector<DeviceName> ListDevices() { return Runtime::Get().devices(); }

int DeviceIndex(const DeviceName& name) {
  const auto& devices = Runtime::Get().devices();
  for (size_t i = 0; i < devices.size(); ++i) {
    if (devices[i] == name) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kUnknownDevice,
              "no device named " + name.ToString());
}

int DeviceIndex(std::string_view name) {
  return DeviceIndex(DeviceName::Parse(name));
}

const DeviceName& DeviceAt(int index) {
  const auto& devices = Runtime::Get().devices();
  if (index < 0 || static_cast<size_t>(index) >= devices.size()) {
    throw Error(ErrorCode::kUnknownDevice,
                "device index " + std::to_string(index) + " out of range");
  }
  return devices[static_cast<size_t>(index)];
}

DeviceScope::DeviceScope(const DeviceName& name) : device_(DeviceIndex(name)) {
  ExecutionContext::Current().device_stack.push_back(device_);
}

DeviceScope::DeviceScope(std::string_view name)
    : DeviceScope(DeviceName::Parse(name)) {}

DeviceScope::~DeviceScope() {
  auto& stack = ExecutionContext::Current().device_stack;
  if (!stack.empty()) stack.pop_back();
}

Tensor CopyTo(const Tensor& t, int dst) {
  DeviceAt(dst);
  if (!t.is_concrete()) {
    throw Error(ErrorCode::kSymbolicTensor,
                "only concrete tensors can be copied between devices");
  }
  if (t.device() == dst) return t;
  auto impl = Tensor::AllocateImpl(t.dtype(), t.shape(), dst);
  if (t.num_bytes() > 0) std::memcpy(impl->data.get(), t.raw(), t.num_bytes());
  return Tensor(std::move(impl));
}

Tensor CopyTo(const Tensor& t, const DeviceName& dst) {
  return CopyTo(t, DeviceIndex(dst));
}

Placement ResolvePlacement(std::span<const Tensor> inputs,
                           std::optional<int> scope_device) {
  Placement p;
  if (!inputs.empty() && inputs[0].is_resource()) {
    p.device = inputs[0].device();
  } else if (scope_device.has_value()) {
    p.device = *scope_device;
  } else {
    p.device = 0;
    for (const Tensor& t : inputs) {
      if (t.is_concrete()) {
        p.device = t.device();
        break;
      }
    }
  }
  DeviceAt(p.device);
  p.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (t.is_concrete() && t.device() != p.device) {
      p.inputs.push_back(CopyTo(t, p.device));
      ++p.copies;
    } else {
      p.inputs.push_back(t);
    }
  }
  if (p.copies > 0) {
    Runtime::Get().metrics().transparent_copies.fetch_add(
        static_cast<uint64_t>(p.copies), std::memory_order_relaxed);
  }
  return p;
}

}  // namespace stagehand
