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

#include <limits>
#include <random>

#include "doctest.h"
#include "stagehand/ops.h"
#include "stagehand/tensor.h"
#include "stagehand/trace.h"
#include "test_util.h"

namespace stagehand {
namespace {

using testing::ErrorOf;
using testing::Name;
using testing::Values;

TEST_CASE("column vector from host keeps values and shape") {
  Tensor x = TensorFromHost({2.0, -2.0}, Shape{2, 1});
  CHECK(x.dtype() == DType::kFloat32);
  CHECK(x.shape() == Shape{2, 1});
  CHECK(x.rank() == 2);
  CHECK(x.num_elements() == 2);
  CHECK(x.num_bytes() == 8);
  CHECK(Values(x) == std::vector<double>{2.0, -2.0});
}

TEST_CASE("empty and scalar shapes") {
  Tensor e = TensorFromHost(std::vector<double>{}, Shape{0}, DType::kFloat32);
  CHECK(e.num_elements() == 0);
  CHECK(Values(e).empty());

  Tensor s = TensorFromHost({7}, Shape{}, DType::kInt32);
  CHECK(s.shape().is_scalar());
  CHECK(s.num_elements() == 1);
  CHECK(s.ToVector<int32_t>() == std::vector<int32_t>{7});
}

TEST_CASE("host data must match the element count") {
  CHECK(ErrorOf([] { TensorFromHost({1, 2, 3}, Shape{2, 2}); }) ==
        Name(ErrorCode::kLengthMismatch));
  CHECK(ErrorOf([] { TensorFromHost({1}, Shape{kUnknownDim}); }) ==
        Name(ErrorCode::kLengthMismatch));
}

TEST_CASE("narrowing conversions are rejected") {
  CHECK(ErrorOf([] { TensorFromHost({3e9}, Shape{}, DType::kInt32); }) ==
        Name(ErrorCode::kNarrowingOverflow));
  CHECK(ErrorOf([] { TensorFromHost({1.5}, Shape{}, DType::kInt32); }) ==
        Name(ErrorCode::kNarrowingOverflow));
  CHECK(ErrorOf([] { TensorFromHost({2}, Shape{}, DType::kBool); }) ==
        Name(ErrorCode::kNarrowingOverflow));
  CHECK(ErrorOf([] { TensorFromHost({1e39}, Shape{}, DType::kFloat32); }) ==
        Name(ErrorCode::kNarrowingOverflow));
  // Rounding to the nearest float is not narrowing.
  CHECK(Values(TensorFromHost({0.1}, Shape{}))[0] ==
        static_cast<double>(0.1f));
}

TEST_CASE("host round trip for every dtype") {
  const std::vector<double> data{0, 1, 0, 1, 1, 0};
  for (DType dtype :
       {DType::kFloat32, DType::kFloat64, DType::kInt32, DType::kBool}) {
    HostTensor h = ToHost(TensorFromHost(data, Shape{3, 2}, dtype));
    CHECK(h.values == data);
    CHECK(h.shape == Shape{3, 2});
    CHECK(h.dtype == dtype);
  }
  const std::vector<double> wide{-2147483648.0, 2147483647.0, -5};
  CHECK(ToHost(TensorFromHost(wide, Shape{3}, DType::kInt32)).values == wide);
  const std::vector<double> f64{1e-300, -3.141592653589793, 1e300};
  CHECK(ToHost(TensorFromHost(f64, Shape{3}, DType::kFloat64)).values == f64);
}

TEST_CASE("ToHost rejects symbolic tensors and resource handles") {
  ConcreteFunction f = TraceFunction(
      "to_host_probe", {TensorSpec{DType::kFloat32, Shape{2}}},
      [](const std::vector<Tensor>& args) {
        CHECK(ErrorOf([&] { ToHost(args[0]); }) ==
              Name(ErrorCode::kSymbolicTensor));
        return args;
      });
  CHECK(f.graph->inputs().size() == 1);
  Tensor handle =
      Tensor::ResourceHandle(DType::kFloat32, Shape{}, 0, {});
  CHECK(ErrorOf([&] { ToHost(handle); }) == Name(ErrorCode::kSymbolicTensor));
}

TEST_CASE("broadcast shapes") {
  CHECK(BroadcastShapes(Shape{3, 1}, Shape{1, 4}) == Shape{3, 4});
  CHECK(BroadcastShapes(Shape{5}, Shape{}) == Shape{5});
  CHECK(BroadcastShapes(Shape{2, 1, 3}, Shape{4, 1}) == Shape{2, 4, 3});
  CHECK(ErrorOf([] { BroadcastShapes(Shape{2, 3}, Shape{4, 3}); }) ==
        Name(ErrorCode::kBroadcastIncompatible));
}

TEST_CASE("broadcasting is commutative with the scalar as identity") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> rank(0, 4), dim(1, 4), coin(0, 2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int64_t> a(static_cast<size_t>(rank(rng)));
    for (auto& d : a) d = dim(rng);
    // A right-aligned suffix of `a` with some extents set to 1.
    std::uniform_int_distribution<size_t> keep(0, a.size());
    std::vector<int64_t> b(a.end() - static_cast<std::ptrdiff_t>(keep(rng)),
                           a.end());
    for (auto& d : b) {
      if (coin(rng) == 0) d = 1;
    }
    const Shape sa(a), sb(b);
    CHECK(BroadcastShapes(sa, sb) == BroadcastShapes(sb, sa));
    CHECK(BroadcastShapes(sa, Shape{}) == sa);
  }
}

TEST_CASE("shape compatibility with unknown dims") {
  CHECK(Shape{kUnknownDim, 5}.IsCompatibleWith(Shape{3, 5}));
  CHECK_FALSE(Shape{kUnknownDim, 5}.IsCompatibleWith(Shape{3, 4}));
  CHECK_FALSE(Shape{5}.IsCompatibleWith(Shape{5, 1}));
  CHECK(Shape{kUnknownDim, 5}.ToString() == "[?,5]");
  CHECK_FALSE(Shape{kUnknownDim}.is_fully_defined());
}

TEST_CASE("ops never mutate their inputs") {
  Tensor a = TensorFromHost({1, 2, 3}, Shape{3});
  Tensor b = TensorFromHost({10, 20, 30}, Shape{3});
  const auto before = Values(a);
  Tensor c = ops::Add(a, b);
  Tensor d = ops::Neg(a);
  CHECK(Values(a) == before);
  CHECK(Values(c) == std::vector<double>{11, 22, 33});
  CHECK(Values(d) == std::vector<double>{-1, -2, -3});
  CHECK(a.id() != c.id());
}

TEST_CASE("tensor identities are unique") {
  Tensor a = ScalarTensor(1);
  Tensor b = ScalarTensor(1);
  CHECK(a.id() != b.id());
  Tensor a2 = a;
  CHECK(a2.id() == a.id());
  CHECK(BitwiseEqual(a, b));
}

TEST_CASE("bitwise equality compares NaN payloads") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Tensor a = TensorFromHost({nan, 1.0}, Shape{2}, DType::kFloat64);
  Tensor b = TensorFromHost({nan, 1.0}, Shape{2}, DType::kFloat64);
  CHECK(BitwiseEqual(a, b));
  CHECK_FALSE(BitwiseEqual(a, TensorFromHost({nan, 2.0}, Shape{2},
                                             DType::kFloat64)));
  CHECK_FALSE(BitwiseEqual(a, TensorFromHost({0, 1}, Shape{2})));
}

TEST_CASE("dtype names and sizes") {
  CHECK(DTypeName(DType::kFloat32) == "float32");
  CHECK(DTypeSize(DType::kFloat64) == 8);
  CHECK(DTypeSize(DType::kInt32) == 4);
  CHECK(DTypeSize(DType::kBool) == 1);
  CHECK(IsFloating(DType::kFloat64));
  CHECK_FALSE(IsFloating(DType::kInt32));
  CHECK(ErrorOf([] { DTypeFromCode(9); }) == Name(ErrorCode::kCorruptGraph));
}

TEST_CASE("large payloads live off the inline buffer") {
  std::vector<double> data(1000);
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(i);
  Tensor t = TensorFromHost(data, Shape{10, 100}, DType::kFloat64);
  CHECK(Values(t) == data);
  Tensor u = t;
  CHECK(u.raw() == t.raw());
}

}  // namespace
}  // namespace stagehand
