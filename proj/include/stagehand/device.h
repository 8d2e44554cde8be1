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

#ifndef STAGEHAND_DEVICE_H_
#define STAGEHAND_DEVICE_H_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stagehand/tensor.h"

namespace stagehand {

// "/job:J/task:T/device:KIND:I". KIND is CPU or ACCEL in this runtime.
struct DeviceName {
  std::string job = "local";
  int task = 0;
  std::string kind = "CPU";
  int index = 0;

  // Accepts the full form and the short "/device:KIND:I" form (job and task
  // default to local/0). Throws kUnknownDevice on malformed input.
  static DeviceName Parse(std::string_view text);
  std::string ToString() const;

  friend bool operator==(const DeviceName& a, const DeviceName& b) {
    return a.job == b.job && a.task == b.task && a.kind == b.kind &&
           a.index == b.index;
  }
};

// Devices known to the runtime, in stable order: CPU:0 first, then the
// simulated accelerators.
std::vector<DeviceName> ListDevices();

// Index of `name` in ListDevices(). Throws kUnknownDevice.
int DeviceIndex(const DeviceName& name);
int DeviceIndex(std::string_view name);
const DeviceName& DeviceAt(int index);

// Places ops dispatched on this thread on `name` until destroyed. Scopes nest;
// the innermost wins.
class DeviceScope {
 public:
  explicit DeviceScope(const DeviceName& name);
  explicit DeviceScope(std::string_view name);
  ~DeviceScope();

  DeviceScope(const DeviceScope&) = delete;
  DeviceScope& operator=(const DeviceScope&) = delete;

 private:
  int device_;
};

// Explicit copy. Returns `t` itself when it already lives on `dst`.
Tensor CopyTo(const Tensor& t, const DeviceName& dst);
Tensor CopyTo(const Tensor& t, int dst);

struct Placement {
  int device = 0;
  std::vector<Tensor> inputs;
  int copies = 0;
};

// Chooses the execution device for an op and copies concrete inputs that
// live elsewhere, counting each copy in the runtime metrics. Priority:
// explicit scope, then the first input that carries a device, then CPU.
// Resource handles never move; an op whose first input is a resource runs
// on that resource's device.
Placement ResolvePlacement(std::span<const Tensor> inputs,
                           std::optional<int> scope_device);

}  // namespace stagehand

#endif  // STAGEHAND_DEVICE_H_
