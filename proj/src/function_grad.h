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

#ifndef STAGEHAND_FUNCTION_GRAD_H_
#define STAGEHAND_FUNCTION_GRAD_H_

#include <memory>
#include <string>
#include <vector>

#include "stagehand/graph.h"

namespace stagehand {

// Forward variant of a graph function (original outputs followed by the
// intermediates its gradient needs) and the staged backward function that
// maps (output gradients..., intermediates...) to one gradient per input.
struct ForwardBackward {
  std::string forward;
  std::string backward;
  int num_outputs = 0;
};

// Built on first request and cached for the process; both functions are
// registered with the runtime.
ForwardBackward GetForwardBackward(
    const std::shared_ptr<const GraphFunction>& f);

// Name of a function mapping (inputs..., output gradients...) of `f` to one
// gradient per input. It re-runs f, so it needs no saved values and can
// take gradients for every output of a forward variant.
std::string GetRecomputeVjp(const std::shared_ptr<const GraphFunction>& f);

// Name of a pruned copy of registered function `name` that returns only
// the outputs flagged in `keep`, in order. `name` itself when all are kept.
std::string GetOutputSubset(const std::string& name,
                            const std::vector<bool>& keep);

}  // namespace stagehand

#endif  // STAGEHAND_FUNCTION_GRAD_H_
