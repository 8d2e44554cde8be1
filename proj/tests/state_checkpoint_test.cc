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

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "stagehand/checkpoint.h"
#include "stagehand/ops.h"
#include "stagehand/staging.h"
#include "stagehand/tape.h"
#include "stagehand/trace.h"
#include "stagehand/variable.h"
#include "test_util.h"

namespace stagehand {
namespace {

using testing::ErrorOf;
using testing::Name;
using testing::Values;

using Paths = std::vector<std::string>;

Paths Sorted(Paths p) {
  std::sort(p.begin(), p.end());
  return p;
}

std::shared_ptr<TrackableVariable> Var(const Tensor& t) {
  return std::make_shared<TrackableVariable>(Variable(t));
}

// Minimal reader for the skeleton section, independent of the library.
struct Skeleton {
  struct Node {
    uint8_t kind;
    std::string path;
    std::vector<std::pair<std::string, uint32_t>> edges;
  };
  std::vector<Node> nodes;
  uint32_t num_payloads = 0;
};

Skeleton ParseSkeleton(const std::vector<uint8_t>& bytes) {
  size_t pos = 0;
  auto u8 = [&] { return bytes.at(pos++); };
  auto u32 = [&] {
    uint32_t v;
    REQUIRE(pos + 4 <= bytes.size());
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  REQUIRE(std::string(bytes.begin(), bytes.begin() + 4) == "SCK1");
  pos = 4;
  CHECK(u32() == kCheckpointFormatVersion);
  const uint32_t skeleton_len = u32();
  const size_t skeleton_end = pos + skeleton_len;
  std::vector<std::string> strings(u32());
  for (auto& s : strings) {
    const uint32_t n = u32();
    s.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
             bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  }
  Skeleton sk;
  sk.nodes.resize(u32());
  for (auto& node : sk.nodes) {
    node.kind = u8();
    node.path = strings.at(u32());
    for (uint32_t e = u32(); e > 0; --e) {
      std::string name = strings.at(u32());
      node.edges.emplace_back(name, u32());
    }
  }
  CHECK(pos == skeleton_end);
  u32();  // payload section length
  sk.num_payloads = u32();
  return sk;
}

TEST_CASE("variables") {
  SUBCASE("read, gradient and assignment") {
    Variable v(ScalarTensor(3.0));
    CHECK(Values(v.Read())[0] == 3.0);
    GradientTape t;
    Tensor y = v.Read() * v.Read();
    CHECK(Values(t.Gradient(y, v))[0] == 6.0);
    v.Assign(ScalarTensor(-1.5));
    CHECK(Values(v.Read())[0] == -1.5);
    v.AssignAdd(ScalarTensor(0.5));
    CHECK(Values(v.Read())[0] == -1.0);
  }
  SUBCASE("reads are snapshots") {
    Variable v(ScalarTensor(1.0));
    Tensor before = v.Read();
    v.Assign(ScalarTensor(2.0));
    CHECK(Values(before)[0] == 1.0);
    CHECK(before.id() != v.Read().id());
  }
  SUBCASE("distinct identities from one initial value") {
    Tensor init = ScalarTensor(1.0);
    Variable a(init), b(init);
    CHECK(a.id() != b.id());
    a.AssignAdd(ScalarTensor(1.0));
    CHECK(Values(b.Read())[0] == 1.0);
    CHECK(Values(init)[0] == 1.0);
  }
  SUBCASE("shape and dtype are fixed") {
    Variable v(TensorFromHost({1, 2}, Shape{2}, DType::kFloat32));
    CHECK(ErrorOf([&] { v.Assign(ScalarTensor(1.0)); }) ==
          Name(ErrorCode::kShapeMismatch));
    CHECK(ErrorOf([&] {
            v.Assign(TensorFromHost({1, 2}, Shape{2}, DType::kFloat64));
          }) == Name(ErrorCode::kShapeMismatch));
    CHECK(ErrorOf([&] { v.AssignAdd(ScalarTensor(1.0)); }) ==
          Name(ErrorCode::kShapeMismatch));
  }
  SUBCASE("staged assign_add interleaved with eager") {
    Variable v(ScalarTensor(0.0));
    auto mutate = Stage("bump", [&](const std::vector<Arg>&) {
      v.AssignAdd(ScalarTensor(1.0));
      return std::vector<Tensor>{};
    });
    std::vector<double> seen;
    mutate({});
    seen.push_back(Values(v.Read())[0]);
    v.AssignAdd(ScalarTensor(1.0));
    seen.push_back(Values(v.Read())[0]);
    mutate({});
    seen.push_back(Values(v.Read())[0]);
    CHECK(seen == std::vector<double>{1, 2, 3});
  }
}

TEST_CASE("graphs referencing a destroyed variable fail") {
  ConcreteFunction f;
  {
    Variable v(ScalarTensor(2.0));
    f = TraceFunction("reads_v", {}, [&](const std::vector<Tensor>&) {
      return std::vector<Tensor>{v.Read()};
    });
    CHECK(Values(f({})[0])[0] == 2.0);
  }
  for (int i = 0; i < 3; ++i) {
    CHECK(ErrorOf([&] { f({}); }) == Name(ErrorCode::kDeadVariable));
  }
  ConcreteFunction g;
  {
    Variable w(ScalarTensor(2.0));
    g = TraceFunction("writes_w", {}, [&](const std::vector<Tensor>&) {
      w.AssignAdd(ScalarTensor(1.0));
      return std::vector<Tensor>{};
    });
  }
  CHECK(ErrorOf([&] { g({}); }) == Name(ErrorCode::kDeadVariable));
}

TEST_CASE("object graph of the small model") {
  Net net(3, /*seed=*/1);
  auto bytes = EncodeCheckpoint(net);
  Skeleton sk = ParseSkeleton(bytes);
  REQUIRE(sk.nodes.size() == 5);
  CHECK(sk.num_payloads == 3);
  const auto& root = sk.nodes[0];
  CHECK(root.path.empty());
  CHECK(root.kind == 0);
  REQUIRE(root.edges.size() == 2);
  CHECK(root.edges[0].first == "out");
  CHECK(root.edges[1].first == "v");
  const auto& out = sk.nodes[root.edges[0].second];
  const auto& v = sk.nodes[root.edges[1].second];
  CHECK(out.kind == 0);
  CHECK(v.kind == 1);
  CHECK(v.path == "v");
  REQUIRE(out.edges.size() == 2);
  CHECK(out.edges[0].first == "bias");
  CHECK(out.edges[1].first == "kernel");
  CHECK(sk.nodes[out.edges[0].second].path == "out/bias");
  CHECK(sk.nodes[out.edges[1].second].kind == 1);
}

TEST_CASE("empty root") {
  Trackable root;
  auto bytes = EncodeCheckpoint(root);
  Skeleton sk = ParseSkeleton(bytes);
  CHECK(sk.nodes.size() == 1);
  CHECK(sk.num_payloads == 0);
  Trackable other;
  MatchReport r = RestoreFromBytes(other, bytes);
  CHECK(r.matched.empty());
  CHECK(r.unmatched_in_checkpoint.empty());
  CHECK(r.unmatched_in_memory.empty());
}

TEST_CASE("saving is deterministic") {
  Net a(4, 9), b(4, 9);
  CHECK(EncodeCheckpoint(a) == EncodeCheckpoint(b));
  Net c(4, 9, /*out_first=*/true);
  CHECK(EncodeCheckpoint(a) == EncodeCheckpoint(c));
  b.v().Assign(ScalarTensor(2.0));
  CHECK(EncodeCheckpoint(a) != EncodeCheckpoint(b));
}

TEST_CASE("round trip through a file") {
  Net saved(3, 1);
  saved.v().Assign(ScalarTensor(0.25));
  const auto path =
      (std::filesystem::temp_directory_path() / "stagehand_ckpt_test.sck").string();
  SaveCheckpoint(saved, path);

  Net fresh(3, 2);
  Tensor x = TensorFromHost({0.5, -1, 2}, Shape{1, 3}, DType::kFloat32);
  CHECK_FALSE(BitwiseEqual(fresh(x), saved(x)));
  MatchReport r = RestoreCheckpoint(fresh, path);
  CHECK(Sorted(r.matched) == Paths{"out/bias", "out/kernel", "v"});
  CHECK(r.unmatched_in_checkpoint.empty());
  CHECK(r.unmatched_in_memory.empty());
  CHECK(r.conflicts.empty());
  CHECK(BitwiseEqual(fresh.v().Read(), saved.v().Read()));
  CHECK(BitwiseEqual(fresh.out().kernel().Read(), saved.out().kernel().Read()));
  CHECK(BitwiseEqual(fresh(x), saved(x)));
  std::filesystem::remove(path);

  CHECK(ErrorOf([&] { RestoreCheckpoint(fresh, path); }) ==
        Name(ErrorCode::kStorageError));
  CHECK(ErrorOf([&] { SaveCheckpoint(saved, "/nonexistent_dir/x.sck"); }) ==
        Name(ErrorCode::kStorageError));
}

TEST_CASE("matching ignores creation order") {
  Net saved(3, 1);
  auto bytes = EncodeCheckpoint(saved);
  Net in_order(3, 5), reversed(3, 5, /*out_first=*/true);
  MatchReport a = RestoreFromBytes(in_order, bytes);
  MatchReport b = RestoreFromBytes(reversed, bytes);
  CHECK(a.matched == b.matched);
  CHECK(BitwiseEqual(in_order.out().kernel().Read(),
                     reversed.out().kernel().Read()));
  CHECK(BitwiseEqual(reversed.out().kernel().Read(), saved.out().kernel().Read()));
}

TEST_CASE("partial matches") {
  Net saved(3, 1);
  auto full = EncodeCheckpoint(saved);

  Net missing_bias(3, 1);
  missing_bias.out().Untrack("bias");
  auto partial = EncodeCheckpoint(missing_bias);

  Net target(3, 7);
  const Tensor bias_before = target.out().bias().Read();
  MatchReport r = RestoreFromBytes(target, partial);
  CHECK(Sorted(r.matched) == Paths{"out/kernel", "v"});
  CHECK(r.unmatched_in_memory == Paths{"out/bias"});
  CHECK(r.unmatched_in_checkpoint.empty());
  CHECK(BitwiseEqual(target.out().bias().Read(), bias_before));
  CHECK(BitwiseEqual(target.out().kernel().Read(), saved.out().kernel().Read()));

  Net smaller(3, 7);
  smaller.Untrack("v");
  MatchReport s = RestoreFromBytes(smaller, full);
  CHECK(s.unmatched_in_checkpoint == Paths{"v"});
  CHECK(Sorted(s.matched) == Paths{"out/bias", "out/kernel"});
}

TEST_CASE("conflicting shapes are reported and skipped") {
  Net saved(3, 1);
  auto bytes = EncodeCheckpoint(saved);
  Net wider(4, 1);
  const Tensor kernel_before = wider.out().kernel().Read();
  MatchReport r = RestoreFromBytes(wider, bytes);
  REQUIRE(r.conflicts.size() == 1);
  CHECK(r.conflicts[0].path == "out/kernel");
  CHECK(r.conflicts[0].code == ErrorCode::kDTypeOrShapeConflict);
  CHECK(BitwiseEqual(wider.out().kernel().Read(), kernel_before));
  CHECK(Sorted(r.matched) == Paths{"out/bias", "v"});
  CHECK(BitwiseEqual(wider.v().Read(), saved.v().Read()));

  Net doubles(3, 1);
  doubles.Track("v", Var(ScalarTensor(1.0, DType::kFloat64)));
  MatchReport d = RestoreFromBytes(doubles, bytes);
  REQUIRE(d.conflicts.size() == 1);
  CHECK(d.conflicts[0].path == "v");
}

TEST_CASE("iterators and blobs") {
  Trackable root;
  auto it = std::make_shared<DatasetIterator>(std::vector<Tensor>{
      ScalarTensor(1.0), ScalarTensor(2.0), ScalarTensor(3.0)});
  std::vector<uint8_t> blob_bytes(300);
  std::mt19937 rng(3);
  for (auto& b : blob_bytes) b = static_cast<uint8_t>(rng());
  root.Track("data", it);
  root.Track("table", std::make_shared<Blob>(blob_bytes));
  it->Next();
  it->Next();
  auto bytes = EncodeCheckpoint(root);

  Trackable restored;
  auto it2 = std::make_shared<DatasetIterator>(std::vector<Tensor>{
      ScalarTensor(1.0), ScalarTensor(2.0), ScalarTensor(3.0)});
  auto blob2 = std::make_shared<Blob>();
  restored.Track("data", it2);
  restored.Track("table", blob2);
  MatchReport r = RestoreFromBytes(restored, bytes);
  CHECK(Sorted(r.matched) == Paths{"data", "table"});
  CHECK(it2->cursor() == 2);
  CHECK(Values(it2->Next())[0] == 3.0);
  CHECK(it2->done());
  CHECK(ErrorOf([&] { it2->Next(); }) == Name(ErrorCode::kStorageError));
  CHECK(blob2->bytes() == blob_bytes);

  Trackable shorter;
  auto it3 = std::make_shared<DatasetIterator>(std::vector<Tensor>{ScalarTensor(1.0)});
  shorter.Track("data", it3);
  MatchReport s = RestoreFromBytes(shorter, bytes);
  REQUIRE(s.conflicts.size() == 1);
  CHECK(s.conflicts[0].path == "data");
  CHECK(it3->cursor() == 0);
}

TEST_CASE("shared objects and cycles") {
  auto root = std::make_shared<Trackable>();
  auto shared = Var(ScalarTensor(4.0));
  auto a = std::make_shared<Trackable>();
  auto b = std::make_shared<Trackable>();
  root->Track("a", a);
  root->Track("b", b);
  a->Track("w", shared);
  b->Track("w", shared);
  a->Track("back", root);
  auto bytes = EncodeCheckpoint(*root);
  CHECK(ParseSkeleton(bytes).nodes.size() == 4);
  CHECK(ParseSkeleton(bytes).num_payloads == 1);

  auto root2 = std::make_shared<Trackable>();
  auto shared2 = Var(ScalarTensor(0.0));
  auto a2 = std::make_shared<Trackable>();
  auto b2 = std::make_shared<Trackable>();
  root2->Track("a", a2);
  root2->Track("b", b2);
  a2->Track("w", shared2);
  b2->Track("w", shared2);
  a2->Track("back", root2);
  MatchReport r = RestoreFromBytes(*root2, bytes);
  CHECK(r.matched == Paths{"a/w"});
  CHECK(Values(shared2->variable().Read())[0] == 4.0);
  CHECK(r.unmatched_in_checkpoint.empty());
  CHECK(r.unmatched_in_memory.empty());
  root->Untrack("a");
  root2->Untrack("a");
  a->Untrack("back");
  a2->Untrack("back");
}

TEST_CASE("unrelated objects do not disturb matching") {
  Net saved(3, 1);
  auto bytes = EncodeCheckpoint(saved);
  Trackable holder;
  holder.Track("model", std::shared_ptr<Trackable>(&saved, [](Trackable*) {}));
  auto nested = EncodeCheckpoint(holder);

  Trackable plain;
  auto model = std::make_shared<Net>(3, 2);
  plain.Track("model", model);
  MatchReport base = RestoreFromBytes(plain, nested);

  Trackable busy;
  auto model2 = std::make_shared<Net>(3, 2);
  busy.Track("model", model2);
  busy.Track("zzz_extra", std::make_shared<Net>(5, 3));
  busy.Track("aaa_extra", Var(ScalarTensor(1.0)));
  MatchReport more = RestoreFromBytes(busy, nested);
  CHECK(base.matched == more.matched);
  CHECK(base.unmatched_in_checkpoint == more.unmatched_in_checkpoint);
  CHECK(Sorted(more.unmatched_in_memory) ==
        Paths{"aaa_extra", "zzz_extra/out/bias", "zzz_extra/out/kernel",
              "zzz_extra/v"});
  CHECK(BitwiseEqual(model2->v().Read(), saved.v().Read()));
}

TEST_CASE("malformed checkpoints raise StorageError") {
  Net net(3, 1);
  const auto bytes = EncodeCheckpoint(net);
  auto bad_version = bytes;
  bad_version[4] = 9;
  Net target(3, 1);
  CHECK(ErrorOf([&] { RestoreFromBytes(target, bad_version); }) ==
        Name(ErrorCode::kStorageError));
  for (size_t cut : {size_t{0}, size_t{6}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK(ErrorOf([&] { RestoreFromBytes(target, t); }) ==
          Name(ErrorCode::kStorageError));
  }
  std::mt19937 rng(8);
  for (int trial = 0; trial < 3000; ++trial) {
    auto mutated = bytes;
    for (int flips = 1 + trial % 3; flips > 0; --flips) {
      mutated[8 + rng() % (mutated.size() - 8)] = static_cast<uint8_t>(rng());
    }
    Net fresh(3, 1);
    const std::string err = ErrorOf([&] { RestoreFromBytes(fresh, mutated); });
    CHECK((err == "no error" || err == Name(ErrorCode::kStorageError)));
  }
}

}  // namespace
}  // namespace stagehand
