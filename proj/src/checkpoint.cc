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

#include "stagehand/checkpoint.h"

#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "byte_io.h"
#include "stagehand/ops.h"

namespace stagehand {

void Trackable::Track(const std::string& name,
                      std::shared_ptr<Trackable> child) {
  if (child == nullptr) {
    throw Error(ErrorCode::kStorageError, "cannot track a null object");
  }
  children_[name] = std::move(child);
}

std::shared_ptr<Trackable> Trackable::Child(const std::string& name) const {
  auto it = children_.find(name);
  return it == children_.end() ? nullptr : it->second;
}

Tensor DatasetIterator::Next() {
  if (done()) throw Error(ErrorCode::kStorageError, "iterator exhausted");
  return elements_[cursor_++];
}

void DatasetIterator::set_cursor(int64_t c) {
  if (c < 0 || static_cast<size_t>(c) > elements_.size()) {
    throw Error(ErrorCode::kStorageError,
                "cursor " + std::to_string(c) + " outside a sequence of " +
                    std::to_string(elements_.size()));
  }
  cursor_ = static_cast<size_t>(c);
}

Dense::Dense(int64_t input_dim, int64_t units, uint64_t seed, DType dtype) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(
      0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  std::vector<double> k(static_cast<size_t>(input_dim * units));
  for (double& x : k) x = normal(rng);
  kernel_ = std::make_shared<TrackableVariable>(
      Variable(TensorFromHost(k, Shape{input_dim, units}, dtype)));
  bias_ = std::make_shared<TrackableVariable>(
      Variable(FilledTensor(dtype, Shape{units}, 0.0)));
  Track("kernel", kernel_);
  Track("bias", bias_);
}

Tensor Dense::operator()(const Tensor& x) const {
  return ops::MatMul(x, kernel().Read()) + bias().Read();
}

Net::Net(int64_t input_dim, uint64_t seed, bool out_first) {
  auto make_v = [&] {
    v_ = std::make_shared<TrackableVariable>(Variable(ScalarTensor(1.0)));
    Track("v", v_);
  };
  auto make_out = [&] {
    out_ = std::make_shared<Dense>(input_dim, 1, seed);
    Track("out", out_);
  };
  if (out_first) {
    make_out();
    make_v();
  } else {
    make_v();
    make_out();
  }
}

Tensor Net::operator()(const Tensor& x) const {
  return (*out_)(ops::Softplus(x * v().Read()));
}

namespace {

constexpr char kMagic[4] = {'S', 'C', 'K', '1'};

[[noreturn]] void Corrupt(const std::string& what) {
  throw Error(ErrorCode::kStorageError, "malformed checkpoint: " + what);
}

// Breadth-first numbering of the objects reachable from `root`, edges in
// name order. Each object keeps the path it was first reached by.
struct ObjectWalk {
  std::vector<const Trackable*> nodes;
  std::vector<std::string> paths;
  std::unordered_map<const Trackable*, uint32_t> index;
};

std::string Join(const std::string& parent, const std::string& edge) {
  return parent.empty() ? edge : parent + "/" + edge;
}

ObjectWalk Walk(const Trackable& root) {
  ObjectWalk w;
  w.nodes.push_back(&root);
  w.paths.emplace_back();
  w.index.emplace(&root, 0);
  for (size_t i = 0; i < w.nodes.size(); ++i) {
    for (const auto& [name, child] : w.nodes[i]->children()) {
      if (w.index.count(child.get()) != 0) continue;
      w.index.emplace(child.get(), static_cast<uint32_t>(w.nodes.size()));
      w.nodes.push_back(child.get());
      w.paths.push_back(Join(w.paths[i], name));
    }
  }
  return w;
}

bool IsStateful(Trackable::Kind k) { return k != Trackable::Kind::kContainer; }

struct SavedNode {
  Trackable::Kind kind = Trackable::Kind::kContainer;
  std::string path;
  std::vector<std::pair<std::string, uint32_t>> edges;
  // Payload, by kind.
  Tensor value;
  int64_t cursor = 0;
  std::vector<uint8_t> bytes;
  bool has_payload = false;
};

std::vector<SavedNode> Parse(std::span<const uint8_t> data) {
  Reader r(data, ErrorCode::kStorageError);
  auto magic = r.Bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) Corrupt("bad magic");
  const uint32_t version = r.U32();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kStorageError,
                "checkpoint format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  Reader sk = r.Section();
  std::vector<std::string> strings(sk.Count(sizeof(uint32_t)));
  for (auto& s : strings) {
    auto b = sk.Bytes(sk.U32());
    s.assign(reinterpret_cast<const char*>(b.data()), b.size());
  }
  auto str = [&](uint32_t id) -> const std::string& {
    if (id >= strings.size()) Corrupt("string id out of range");
    return strings[id];
  };
  std::vector<SavedNode> nodes(sk.Count(9));
  if (nodes.empty()) Corrupt("no root object");
  std::unordered_map<std::string, size_t> by_path;
  for (size_t i = 0; i < nodes.size(); ++i) {
    SavedNode& n = nodes[i];
    const uint8_t kind = sk.U8();
    if (kind > static_cast<uint8_t>(Trackable::Kind::kBlob)) {
      Corrupt("unknown object kind");
    }
    n.kind = static_cast<Trackable::Kind>(kind);
    n.path = str(sk.U32());
    by_path[n.path] = i;
    const uint32_t num_edges = sk.U32();
    for (uint32_t e = 0; e < num_edges; ++e) {
      const std::string& name = str(sk.U32());
      const uint32_t target = sk.U32();
      if (target >= nodes.size()) Corrupt("edge target out of range");
      n.edges.emplace_back(name, target);
    }
  }
  if (!sk.done()) Corrupt("trailing skeleton bytes");

  Reader pl = r.Section();
  const uint32_t num_records = pl.U32();
  for (uint32_t k = 0; k < num_records; ++k) {
    auto it = by_path.find(str(pl.U32()));
    if (it == by_path.end()) Corrupt("payload for an unknown path");
    SavedNode& n = nodes[it->second];
    const uint8_t kind = pl.U8();
    if (kind != static_cast<uint8_t>(n.kind) || n.has_payload) {
      Corrupt("payload does not fit object '" + n.path + "'");
    }
    switch (n.kind) {
      case Trackable::Kind::kVariable: {
        uint8_t code = pl.U8();
        DType dtype;
        try {
          dtype = DTypeFromCode(code);
        } catch (const Error&) {
          Corrupt("unknown dtype");
        }
        Shape shape = ReadShape(pl, ErrorCode::kStorageError);
        if (!shape.is_fully_defined()) Corrupt("wildcard in saved shape");
        auto raw = pl.Bytes(pl.U32());
        if (CheckedPayloadBytes(Reader(raw, ErrorCode::kStorageError), shape,
                                dtype) != raw.size()) {
          Corrupt("payload size");
        }
        auto impl = Tensor::AllocateImpl(dtype, shape, 0);
        std::memcpy(impl->data.get(), raw.data(), raw.size());
        n.value = Tensor(std::move(impl));
        break;
      }
      case Trackable::Kind::kIterator:
        n.cursor = pl.I64();
        break;
      case Trackable::Kind::kBlob: {
        auto raw = pl.Bytes(pl.U32());
        n.bytes.assign(raw.begin(), raw.end());
        break;
      }
      case Trackable::Kind::kContainer:
        Corrupt("payload for a container");
    }
    n.has_payload = true;
  }
  if (!pl.done() || !r.done()) Corrupt("trailing bytes");
  for (const SavedNode& n : nodes) {
    if (IsStateful(n.kind) && !n.has_payload) {
      Corrupt("object '" + n.path + "' has no payload");
    }
  }
  return nodes;
}

// Writes a saved payload into a live object; returns a conflict description
// or empty.
std::string Apply(const SavedNode& saved, Trackable& live) {
  if (saved.kind != live.kind()) return "object kinds differ";
  switch (saved.kind) {
    case Trackable::Kind::kVariable: {
      const Variable& v = static_cast<TrackableVariable&>(live).variable();
      if (v.dtype() != saved.value.dtype() ||
          v.shape() != saved.value.shape()) {
        return "checkpoint holds " + saved.value.spec().ToString() +
               ", variable is " + TensorSpec{v.dtype(), v.shape()}.ToString();
      }
      v.SetValue(saved.value);
      return {};
    }
    case Trackable::Kind::kIterator: {
      auto& it = static_cast<DatasetIterator&>(live);
      if (saved.cursor < 0 || static_cast<size_t>(saved.cursor) > it.size()) {
        return "cursor " + std::to_string(saved.cursor) +
               " outside a sequence of " + std::to_string(it.size());
      }
      it.set_cursor(saved.cursor);
      return {};
    }
    case Trackable::Kind::kBlob:
      static_cast<Blob&>(live).set_bytes(saved.bytes);
      return {};
    case Trackable::Kind::kContainer:
      return {};
  }
  return {};
}

}  // namespace

std::vector<uint8_t> EncodeCheckpoint(const Trackable& root) {
  ObjectWalk w = Walk(root);
  StringTable strings;
  Writer nodes;
  Writer payloads;
  nodes.U32(static_cast<uint32_t>(w.nodes.size()));
  uint32_t num_records = 0;
  for (size_t i = 0; i < w.nodes.size(); ++i) {
    const Trackable& t = *w.nodes[i];
    nodes.U8(static_cast<uint8_t>(t.kind()));
    const uint32_t path = strings.Id(w.paths[i]);
    nodes.U32(path);
    nodes.U32(static_cast<uint32_t>(t.children().size()));
    for (const auto& [name, child] : t.children()) {
      nodes.U32(strings.Id(name));
      nodes.U32(w.index.at(child.get()));
    }
    if (!IsStateful(t.kind())) continue;
    ++num_records;
    payloads.U32(path);
    payloads.U8(static_cast<uint8_t>(t.kind()));
    switch (t.kind()) {
      case Trackable::Kind::kVariable: {
        Tensor value = static_cast<const TrackableVariable&>(t)
                           .variable()
                           .Value();
        payloads.U8(static_cast<uint8_t>(value.dtype()));
        WriteShape(payloads, value.shape());
        payloads.U32(static_cast<uint32_t>(value.num_bytes()));
        payloads.Raw(value.raw(), value.num_bytes());
        break;
      }
      case Trackable::Kind::kIterator:
        payloads.I64(static_cast<const DatasetIterator&>(t).cursor());
        break;
      case Trackable::Kind::kBlob: {
        const auto& b = static_cast<const Blob&>(t).bytes();
        payloads.U32(static_cast<uint32_t>(b.size()));
        payloads.Raw(b.data(), b.size());
        break;
      }
      case Trackable::Kind::kContainer:
        break;
    }
  }
  Writer skeleton;
  strings.Write(skeleton);
  skeleton.Raw(nodes.bytes().data(), nodes.bytes().size());
  Writer payload_section;
  payload_section.U32(num_records);
  payload_section.Raw(payloads.bytes().data(), payloads.bytes().size());

  Writer out;
  out.Raw(kMagic, 4);
  out.U32(kCheckpointFormatVersion);
  out.Section(skeleton);
  out.Section(payload_section);
  return std::move(out.bytes());
}

MatchReport RestoreFromBytes(Trackable& root, std::span<const uint8_t> bytes) {
  const std::vector<SavedNode> saved = Parse(bytes);
  ObjectWalk live = Walk(root);

  MatchReport report;
  std::vector<bool> saved_seen(saved.size(), false);
  std::vector<bool> live_seen(live.nodes.size(), false);
  std::deque<std::pair<uint32_t, uint32_t>> queue{{0, 0}};
  saved_seen[0] = live_seen[0] = true;
  while (!queue.empty()) {
    auto [s, l] = queue.front();
    queue.pop_front();
    Trackable& obj = const_cast<Trackable&>(*live.nodes[l]);
    const std::string& path = live.paths[l];
    if (IsStateful(saved[s].kind) || IsStateful(obj.kind())) {
      std::string conflict = Apply(saved[s], obj);
      if (conflict.empty()) {
        report.matched.push_back(path);
      } else {
        report.conflicts.push_back(MatchConflict{path, conflict});
      }
    }
    // Edges are stored sorted, and children() iterates in name order.
    for (const auto& [name, target] : saved[s].edges) {
      auto child = obj.Child(name);
      if (child == nullptr) continue;
      const uint32_t lc = live.index.at(child.get());
      if (saved_seen[target] || live_seen[lc]) continue;
      saved_seen[target] = live_seen[lc] = true;
      queue.emplace_back(target, lc);
    }
  }
  for (size_t i = 0; i < saved.size(); ++i) {
    if (!saved_seen[i] && IsStateful(saved[i].kind)) {
      report.unmatched_in_checkpoint.push_back(saved[i].path);
    }
  }
  for (size_t i = 0; i < live.nodes.size(); ++i) {
    if (!live_seen[i] && IsStateful(live.nodes[i]->kind())) {
      report.unmatched_in_memory.push_back(live.paths[i]);
    }
  }
  return report;
}

void SaveCheckpoint(const Trackable& root, const std::string& path) {
  const auto bytes = EncodeCheckpoint(root);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kStorageError, "cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::kStorageError, "cannot write " + path);
}

MatchReport RestoreCheckpoint(Trackable& root, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStorageError, "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kStorageError, "cannot read " + path);
  return RestoreFromBytes(root, bytes);
}

}  // namespace stagehand
