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

#ifndef STAGEHAND_CONTEXT_H_
#define STAGEHAND_CONTEXT_H_

#include <optional>
#include <vector>

namespace stagehand {

class TraceState;
class Tape;

// One level of the per-thread execution context. A frame with a trace is in
// graph-building mode; otherwise it is eager.
struct ContextFrame {
  TraceState* trace = nullptr;
  std::vector<Tape*> tapes;
  std::vector<int> device_stack;
  // Stops InnermostTrace() from looking further down, e.g. for host
  // callbacks running inside graph execution.
  bool isolated = false;
};

// Thread-local stack of frames. The bottom frame is always eager.
class ExecutionContext {
 public:
  static ContextFrame& Current();
  static const std::vector<ContextFrame>& Frames();
  static std::vector<ContextFrame>& MutableFrames();
  static bool IsBuildingGraph() { return Current().trace != nullptr; }
  static std::optional<int> ScopeDevice();
  // Innermost frame that is tracing, searching through escaped frames.
  static TraceState* InnermostTrace();

  static void Push(ContextFrame frame);
  static void Pop();
};

// Pushes a frame for the lifetime of the guard.
class FrameGuard {
 public:
  explicit FrameGuard(ContextFrame frame) {
    ExecutionContext::Push(std::move(frame));
  }
  ~FrameGuard() { ExecutionContext::Pop(); }
  FrameGuard(const FrameGuard&) = delete;
  FrameGuard& operator=(const FrameGuard&) = delete;
};

// Pauses any trace on this thread: dispatches inside the scope run eagerly
// and produce concrete values. Tapes and device scopes of the nearest eager
// frame are restored. A no-op outside a trace.
class EscapeTrace {
 public:
  EscapeTrace();
  ~EscapeTrace();
  EscapeTrace(const EscapeTrace&) = delete;
  EscapeTrace& operator=(const EscapeTrace&) = delete;

 private:
  bool pushed_ = false;
};

}  // namespace stagehand

#endif  // STAGEHAND_CONTEXT_H_
