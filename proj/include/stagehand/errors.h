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

#ifndef STAGEHAND_ERRORS_H_
#define STAGEHAND_ERRORS_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace stagehand {

// Closed error taxonomy. Every failure raised by the runtime carries exactly
// one of these codes.
enum class ErrorCode {
  // tensor_core
  kLengthMismatch,
  kNarrowingOverflow,
  kSymbolicTensor,
  kBroadcastIncompatible,
  // op_registry
  kDuplicateOp,
  kUnknownOp,
  kArityMismatch,
  kAttrMismatch,
  kKernelError,
  // autodiff_tape
  kNonNestedEnd,
  kInactiveTape,
  kNonScalarTarget,
  kUnwatchedSource,
  kConsumedTape,
  kNoGradient,
  // staging_tracer
  kSignatureMismatch,
  kStagingError,
  kVariableCreationError,
  kUnencodableArgument,
  kMissingConcreteFunction,
  // graph_ir
  kInputMismatch,
  kMissingFunction,
  kNotSerializable,
  kFormatVersionMismatch,
  kCorruptGraph,
  // state_checkpoint
  kShapeMismatch,
  kDeadVariable,
  kStorageError,
  kDTypeOrShapeConflict,
  // device_runtime
  kUnknownDevice,
  // host_escape
  kCallbackError,
  kSignatureViolation,
  // bench_cli
  kConfigError,
  kNumericalDivergence,
};

std::string_view ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const { return code_; }
  // Message without the code prefix.
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace stagehand

#endif  // STAGEHAND_ERRORS_H_
