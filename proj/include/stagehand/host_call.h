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

#ifndef STAGEHAND_HOST_CALL_H_
#define STAGEHAND_HOST_CALL_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "stagehand/tensor.h"

namespace stagehand {

using HostCallbackFn =
    std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

// Registers `fn` with its declared output signature and returns the id that
// host_call nodes refer to. Registrations are never dropped, so a graph can
// always reach its callbacks.
int64_t RegisterHostCallback(HostCallbackFn fn,
                             std::vector<TensorSpec> output_signature);

// Runs a registered host function as an op. Eagerly this is a plain call.
// Inside a trace it becomes a stateful node that, when the graph executes,
// runs the function imperatively; its gradient recomputes the function
// under a tape. Throws kCallbackError or kSignatureViolation.
std::vector<Tensor> HostCall(int64_t callback, std::vector<Tensor> inputs);

}  // namespace stagehand

#endif  // STAGEHAND_HOST_CALL_H_
