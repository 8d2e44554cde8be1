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

#include "stagehand/tape.h"

#include <algorithm>
#include <unordered_map>

#include "stagehand/context.h"
#include "stagehand/ops.h"
#include "stagehand/variable.h"

namespace stagehand {

GradSource::GradSource(const Variable& v) : tensor(v.handle()) {}

void Tape::Watch(const Tensor& t) {
  watched_.insert(t.id());
  tracked_.insert(t.id());
}

bool Tape::TracksAny(std::span<const Tensor> values) const {
  for (const Tensor& t : values) {
    if (tracked_.count(t.id()) != 0) return true;
  }
  return false;
}

void Tape::Record(const OpDef& def, const AttrMap& attrs,
                  std::span<const Tensor> inputs,
                  std::span<const Tensor> outputs) {
  if (!active_ || paused_ || !TracksAny(inputs)) return;
  TapeEntry entry;
  entry.def = &def;
  entry.attrs = attrs;
  entry.inputs.assign(inputs.begin(), inputs.end());
  entry.outputs.assign(outputs.begin(), outputs.end());
  for (const Tensor& t : outputs) tracked_.insert(t.id());
  entries_.push_back(std::move(entry));
}

namespace {

bool CarriesGradient(const Tensor& t) {
  return t.is_resource() || IsFloating(t.dtype());
}

Tensor ZerosFor(const Tensor& t) {
  const TensorSpec spec{t.dtype(), t.shape(), false};
  if (ExecutionContext::IsBuildingGraph() || t.is_symbolic()) {
    if (spec.shape.is_fully_defined()) {
      return ops::Fill(spec.shape, 0.0, spec.dtype);
    }
    return ops::ZerosLike(t);
  }
  return FilledTensor(spec.dtype, spec.shape, 0.0, t.device());
}

void Accumulate(std::unordered_map<uint64_t, Tensor>& grads, uint64_t id,
                Tensor g) {
  auto it = grads.find(id);
  if (it == grads.end()) {
    grads.emplace(id, std::move(g));
  } else {
    it->second = ops::Add(it->second, g);
  }
}

}  // namespace

std::vector<Tensor> Tape::ComputeGradients(std::span<const Tensor> targets,
                                           std::span<const Tensor> seeds,
                                           std::span<const Tensor> sources) {
  // Entries on a path from a source.
  std::unordered_set<uint64_t> reachable;
  for (const Tensor& s : sources) reachable.insert(s.id());
  std::vector<bool> relevant(entries_.size(), false);
  for (size_t e = 0; e < entries_.size(); ++e) {
    const TapeEntry& entry = entries_[e];
    bool hit = false;
    for (const Tensor& t : entry.inputs) {
      if (reachable.count(t.id()) != 0) {
        hit = true;
        break;
      }
    }
    if (!hit) continue;
    relevant[e] = true;
    for (const Tensor& t : entry.outputs) reachable.insert(t.id());
  }

  std::unordered_map<uint64_t, Tensor> grads;
  for (size_t i = 0; i < targets.size(); ++i) {
    Accumulate(grads, targets[i].id(), seeds[i]);
  }

  const bool was_paused = paused_;
  paused_ = true;
  try {
    for (size_t e = entries_.size(); e-- > 0;) {
      if (!relevant[e]) continue;
      const TapeEntry& entry = entries_[e];
      std::vector<std::optional<Tensor>> upstream(entry.outputs.size());
      bool any = false;
      for (size_t o = 0; o < entry.outputs.size(); ++o) {
        auto it = grads.find(entry.outputs[o].id());
        if (it != grads.end()) {
          upstream[o] = it->second;
          any = true;
        }
      }
      if (!any) continue;
      if (!entry.def->differentiable()) {
        for (const Tensor& t : entry.inputs) {
          if (reachable.count(t.id()) != 0 && CarriesGradient(t)) {
            throw Error(ErrorCode::kNoGradient,
                        "op '" + entry.def->name + "' has no gradient");
          }
        }
        continue;
      }
      std::vector<TensorSpec> in_specs, out_specs;
      for (const Tensor& t : entry.inputs) in_specs.push_back(t.spec());
      for (const Tensor& t : entry.outputs) out_specs.push_back(t.spec());
      GradContext ctx(
          entry.attrs, std::move(in_specs), std::move(out_specs),
          [&entry](int i) { return entry.inputs[static_cast<size_t>(i)]; },
          [&entry](int i) { return entry.outputs[static_cast<size_t>(i)]; },
          std::move(upstream));
      std::vector<bool> needed;
      for (const Tensor& in : entry.inputs) {
        needed.push_back(reachable.count(in.id()) != 0 && CarriesGradient(in));
      }
      ctx.set_needed(std::move(needed));
      auto input_grads = entry.def->gradient(ctx);
      for (size_t i = 0; i < entry.inputs.size() && i < input_grads.size();
           ++i) {
        if (!input_grads[i].has_value()) continue;
        const Tensor& in = entry.inputs[i];
        if (reachable.count(in.id()) == 0 || !CarriesGradient(in)) continue;
        Accumulate(grads, in.id(), std::move(*input_grads[i]));
      }
    }
  } catch (...) {
    paused_ = was_paused;
    throw;
  }
  paused_ = was_paused;

  std::vector<Tensor> result;
  result.reserve(sources.size());
  for (const Tensor& s : sources) {
    auto it = grads.find(s.id());
    result.push_back(it != grads.end() ? it->second : ZerosFor(s));
  }
  return result;
}

// ---------------------------------------------------------------------------

GradientTape::GradientTape(bool persistent)
    : tape_(std::make_unique<Tape>(persistent)) {
  ExecutionContext::Current().tapes.push_back(tape_.get());
}

GradientTape::~GradientTape() {
  if (!tape_->active()) return;
  // Unwinding may leave tapes out of order; remove ours wherever it is.
  for (auto& frame : ExecutionContext::MutableFrames()) {
    auto& tapes = frame.tapes;
    tapes.erase(std::remove(tapes.begin(), tapes.end(), tape_.get()),
                tapes.end());
  }
  tape_->Deactivate();
}

void GradientTape::Stop() {
  auto& tapes = ExecutionContext::Current().tapes;
  if (!tape_->active() || tapes.empty() || tapes.back() != tape_.get()) {
    throw Error(ErrorCode::kNonNestedEnd,
                "only the innermost active tape can be stopped");
  }
  tapes.pop_back();
  tape_->Deactivate();
}

void GradientTape::Watch(const GradSource& source) {
  if (!tape_->active()) {
    throw Error(ErrorCode::kInactiveTape, "cannot watch on a stopped tape");
  }
  tape_->Watch(source.tensor);
}

std::vector<Tensor> GradientTape::Gradient(
    const Tensor& target, const std::vector<GradSource>& sources) {
  if (tape_->consumed_) {
    throw Error(ErrorCode::kConsumedTape,
                "a non-persistent tape computes one gradient");
  }
  if (target.rank() != 0) {
    throw Error(ErrorCode::kNonScalarTarget,
                "gradient target must be a scalar, got shape " +
                    target.shape().ToString());
  }
  if (!IsFloating(target.dtype())) {
    throw Error(ErrorCode::kNoGradient, "gradient target is not floating");
  }
  std::vector<Tensor> srcs;
  for (const GradSource& s : sources) {
    if (!tape_->IsWatched(s.tensor.id())) {
      throw Error(ErrorCode::kUnwatchedSource,
                  "gradient source is not watched by this tape");
    }
    if (!CarriesGradient(s.tensor)) {
      throw Error(ErrorCode::kUnwatchedSource,
                  "gradient source has non-floating dtype " +
                      std::string(DTypeName(s.tensor.dtype())));
    }
    srcs.push_back(s.tensor);
  }
  if (!tape_->persistent()) tape_->consumed_ = true;
  Tensor seed = target.is_concrete() && !ExecutionContext::IsBuildingGraph()
                    ? FilledTensor(target.dtype(), Shape{}, 1.0,
                                   target.device())
                    : ops::OnesLike(target);
  const Tensor targets[] = {target};
  const Tensor seeds[] = {seed};
  return tape_->ComputeGradients(targets, seeds, srcs);
}

Tensor GradientTape::Gradient(const Tensor& target, const GradSource& source) {
  return Gradient(target, std::vector<GradSource>{source})[0];
}

// ---------------------------------------------------------------------------

void RecordOnActiveTapes(const OpDef& def, const AttrMap& attrs,
                         std::span<const Tensor> inputs,
                         std::span<const Tensor> outputs) {
  for (Tape* tape : ExecutionContext::Current().tapes) {
    tape->Record(def, attrs, inputs, outputs);
  }
}

bool AnyActiveTapeTracks(std::span<const Tensor> inputs) {
  for (Tape* tape : ExecutionContext::Current().tapes) {
    if (tape->recording() && tape->TracksAny(inputs)) return true;
  }
  return false;
}

void WatchOnActiveTapes(const Tensor& t) {
  for (Tape* tape : ExecutionContext::Current().tapes) {
    if (tape->active()) tape->Watch(t);
  }
}

}  // namespace stagehand
