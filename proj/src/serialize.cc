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

// SGF1 container. Every count and length is u32, every value little-endian.
// Body sections, each prefixed by its byte length: string table, input
// table, node table, output table, library.

#include <bit>
#include <cstring>
#include <unordered_map>

#include "byte_io.h"
#include "stagehand/graph.h"

namespace stagehand {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'F', '1'};
constexpr uint8_t kResourceBit = 0x80;

uint32_t EncodeRef(const Endpoint& ep, size_t num_inputs) {
  return ep.is_input() ? static_cast<uint32_t>(ep.index)
                       : static_cast<uint32_t>(num_inputs) +
                             static_cast<uint32_t>(ep.node);
}

Endpoint DecodeRef(uint32_t id, uint16_t index, size_t num_inputs) {
  if (id < num_inputs) {
    return Endpoint{Endpoint::kInputNode, static_cast<int32_t>(id)};
  }
  return Endpoint{static_cast<int32_t>(id - num_inputs),
                  static_cast<int32_t>(index)};
}

void WriteAttr(Writer& w, StringTable& strings, const AttrValue& v) {
  w.U8(static_cast<uint8_t>(v.kind()));
  switch (v.kind()) {
    case AttrKind::kInt: w.I64(v.i()); break;
    case AttrKind::kFloat: w.F64(v.f()); break;
    case AttrKind::kBool: w.U8(v.b() ? 1 : 0); break;
    case AttrKind::kString: w.U32(strings.Id(v.s())); break;
    case AttrKind::kDType: w.U8(static_cast<uint8_t>(v.type())); break;
    case AttrKind::kShape: WriteShape(w, v.shape()); break;
    case AttrKind::kFunc: w.U32(strings.Id(v.func())); break;
    case AttrKind::kTensor: {
      const Tensor& t = v.tensor();
      w.U8(static_cast<uint8_t>(t.dtype()));
      WriteShape(w, t.shape());
      w.Raw(t.raw(), t.num_bytes());
      break;
    }
    case AttrKind::kIntList:
      w.U32(static_cast<uint32_t>(v.list().size()));
      for (int64_t x : v.list()) w.I64(x);
      break;
  }
}

const std::string& Str(const std::vector<std::string>& strings, uint32_t id) {
  if (id >= strings.size()) {
    throw Error(ErrorCode::kCorruptGraph, "string id out of range");
  }
  return strings[id];
}

AttrValue ReadAttr(Reader& r, const std::vector<std::string>& strings) {
  const uint8_t tag = r.U8();
  switch (static_cast<AttrKind>(tag)) {
    case AttrKind::kInt: return AttrValue(r.I64());
    case AttrKind::kFloat: return AttrValue(r.F64());
    case AttrKind::kBool: return AttrValue(r.U8() != 0);
    case AttrKind::kString: return AttrValue(Str(strings, r.U32()));
    case AttrKind::kDType: return AttrValue(DTypeFromCode(r.U8()));
    case AttrKind::kShape: return AttrValue(ReadShape(r));
    case AttrKind::kFunc: return AttrValue(FunctionRef{Str(strings, r.U32())});
    case AttrKind::kTensor: {
      const DType dtype = DTypeFromCode(r.U8());
      Shape shape = ReadShape(r);
      if (!shape.is_fully_defined()) {
        throw Error(ErrorCode::kCorruptGraph, "constant with unknown extent");
      }
      auto payload = r.Bytes(CheckedPayloadBytes(r, shape, dtype));
      auto impl = Tensor::AllocateImpl(dtype, std::move(shape), 0);
      if (!payload.empty()) {
        std::memcpy(impl->data.get(), payload.data(), payload.size());
      }
      return AttrValue(Tensor(std::move(impl)));
    }
    case AttrKind::kIntList: {
      std::vector<int64_t> list(r.Count(sizeof(int64_t)));
      for (auto& x : list) x = r.I64();
      return AttrValue(std::move(list));
    }
  }
  throw Error(ErrorCode::kCorruptGraph,
              "unknown attr tag " + std::to_string(tag));
}

void WriteFunction(Writer& out, const GraphFunction& g) {
  StringTable strings;
  Writer inputs, nodes, outputs, library;

  inputs.U32(strings.Id(g.name()));
  inputs.U32(static_cast<uint32_t>(g.inputs().size()));
  for (const auto& in : g.inputs()) {
    inputs.U32(strings.Id(in.name));
    inputs.U8(static_cast<uint8_t>(in.spec.dtype) |
              (in.spec.is_resource ? kResourceBit : 0));
    WriteShape(inputs, in.spec.shape);
  }

  const size_t num_inputs = g.inputs().size();
  nodes.U32(static_cast<uint32_t>(g.nodes().size()));
  for (const Node& node : g.nodes()) {
    nodes.U32(strings.Id(node.op));
    nodes.U32(static_cast<uint32_t>(node.inputs.size()));
    for (const Endpoint& ep : node.inputs) {
      nodes.U32(EncodeRef(ep, num_inputs));
      nodes.U16(static_cast<uint16_t>(ep.is_input() ? 0 : ep.index));
    }
    nodes.U32(static_cast<uint32_t>(node.attrs.size()));
    for (const auto& [name, value] : node.attrs.entries()) {
      nodes.U32(strings.Id(name));
      WriteAttr(nodes, strings, value);
    }
    nodes.U32(node.device.empty() ? 0 : strings.Id(node.device));
  }

  outputs.U32(static_cast<uint32_t>(g.outputs().size()));
  for (const auto& o : g.outputs()) {
    outputs.U32(strings.Id(o.name));
    outputs.U32(EncodeRef(o.source, num_inputs));
    outputs.U16(static_cast<uint16_t>(o.source.is_input() ? 0 : o.source.index));
  }

  // std::map iterates in name order.
  library.U32(static_cast<uint32_t>(g.library().size()));
  for (const auto& [name, fn] : g.library()) {
    Writer nested;
    nested.Raw(kMagic, 4);
    nested.U32(kGraphFormatVersion);
    WriteFunction(nested, *fn);
    library.Section(nested);
  }

  Writer string_section;
  strings.Write(string_section);
  out.Section(string_section);
  out.Section(inputs);
  out.Section(nodes);
  out.Section(outputs);
  out.Section(library);
}

std::shared_ptr<const GraphFunction> ReadContainer(Reader& r);

std::shared_ptr<const GraphFunction> ReadFunction(Reader& r) {
  std::vector<std::string> strings;
  {
    Reader s = r.Section();
    strings.resize(s.Count(sizeof(uint32_t)));
    for (auto& str : strings) {
      auto b = s.Bytes(s.U32());
      str.assign(reinterpret_cast<const char*>(b.data()), b.size());
    }
    if (!s.done()) {
      throw Error(ErrorCode::kCorruptGraph, "trailing bytes in a section");
    }
  }

  Reader in = r.Section();
  std::string name = Str(strings, in.U32());
  std::vector<FunctionInput> inputs(in.Count(7));
  for (auto& fi : inputs) {
    fi.name = Str(strings, in.U32());
    const uint8_t code = in.U8();
    fi.spec.is_resource = (code & kResourceBit) != 0;
    fi.spec.dtype = DTypeFromCode(code & ~kResourceBit);
    fi.spec.shape = ReadShape(in);
  }

  Reader nr = r.Section();
  std::vector<Node> nodes(nr.Count(16));
  for (Node& node : nodes) {
    node.op = Str(strings, nr.U32());
    node.inputs.resize(nr.Count(6));
    for (Endpoint& ep : node.inputs) {
      const uint32_t id = nr.U32();
      ep = DecodeRef(id, nr.U16(), inputs.size());
    }
    const uint32_t num_attrs = nr.U32();
    for (uint32_t a = 0; a < num_attrs; ++a) {
      std::string attr_name = Str(strings, nr.U32());
      node.attrs.Set(std::move(attr_name), ReadAttr(nr, strings));
    }
    const uint32_t device = nr.U32();
    if (device != 0) node.device = Str(strings, device);
  }

  Reader orr = r.Section();
  std::vector<FunctionOutput> outputs(orr.Count(10));
  for (auto& o : outputs) {
    o.name = Str(strings, orr.U32());
    const uint32_t id = orr.U32();
    o.source = DecodeRef(id, orr.U16(), inputs.size());
  }

  Reader lr = r.Section();
  FunctionLibrary library;
  const uint32_t num_functions = lr.U32();
  for (uint32_t i = 0; i < num_functions; ++i) {
    Reader nested = lr.Section();
    auto fn = ReadContainer(nested);
    library.emplace(fn->name(), std::move(fn));
  }
  if (!nr.done() || !in.done() || !orr.done() || !lr.done()) {
    throw Error(ErrorCode::kCorruptGraph, "trailing bytes in a section");
  }
  return std::make_shared<const GraphFunction>(
      std::move(name), std::move(inputs), std::move(nodes), std::move(outputs),
      std::move(library));
}

std::shared_ptr<const GraphFunction> ReadContainer(Reader& r) {
  auto magic = r.Bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kCorruptGraph, "bad magic");
  }
  const uint32_t version = r.U32();
  if (version != kGraphFormatVersion) {
    throw Error(ErrorCode::kFormatVersionMismatch,
                "graph format version " + std::to_string(version) +
                    " is not supported (expected " +
                    std::to_string(kGraphFormatVersion) + ")");
  }
  auto fn = ReadFunction(r);
  if (!r.done()) throw Error(ErrorCode::kCorruptGraph, "trailing bytes");
  return fn;
}

}  // namespace

std::vector<uint8_t> Serialize(const GraphFunction& g) {
  if (!g.serializable()) {
    throw Error(ErrorCode::kNotSerializable,
                "'" + g.name() + "' contains a host callback");
  }
  Writer w;
  w.Raw(kMagic, 4);
  w.U32(kGraphFormatVersion);
  WriteFunction(w, g);
  return std::move(w.bytes());
}

std::shared_ptr<const GraphFunction> Deserialize(
    std::span<const uint8_t> bytes) {
  Reader r(bytes);
  return ReadContainer(r);
}

}  // namespace stagehand
