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

#ifndef STAGEHAND_SRC_EXEC_PLAN_H_
#define STAGEHAND_SRC_EXEC_PLAN_H_

#include <string>
#include <vector>

#include "stagehand/graph.h"

namespace stagehand {

// Flattened form of a GraphFunction. Values live in slots: inputs first,
// then every node output in node order.
struct ExecPlan {
  struct Step {
    const OpDef* def = nullptr;
    const AttrMap* attrs = nullptr;
    // -1 runs on the caller's device.
    int device = -1;
    std::string device_name;
    std::vector<int> in_slots;
    int out_slot = 0;
    int num_outputs = 0;
    std::vector<int> successors;
    int num_predecessors = 0;
    // Slots no later step reads; the sequential path drops them after this
    // step so intermediate buffers are freed early.
    std::vector<int> release;
  };
  int num_inputs = 0;
  int num_slots = 0;
  std::vector<Step> steps;
  std::vector<int> output_slots;
  std::vector<int> roots;
  size_t max_arity = 0;
};

}  // namespace stagehand

#endif  // STAGEHAND_SRC_EXEC_PLAN_H_
