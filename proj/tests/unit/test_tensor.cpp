// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "calcseg/error.hpp"
#include "calcseg/tensor.hpp"

using namespace calcseg;

TEST_CASE("tensor shape and row-major indexing") {
  Tensor<float> t(Shape{2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.rank() == 4);
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[119] == 7.0f);
  t.at(0, 1, 0, 2) = 3.0f;
  CHECK(t[(0 * 3 + 1) * 20 + 0 * 5 + 2] == 3.0f);
  CHECK(t.spatial() == Extent3{3, 4, 5});
}

TEST_CASE("tensor contracts") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t(Shape{2, 3});
  CHECK_THROWS_AS(t.spatial(), ShapeError);
  CHECK_THROWS_AS(t.reshaped(Shape{4}), ShapeError);
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK(t.reshaped(Shape{3, 2}).shape() == Shape{3, 2});
  CHECK(Tensor<double>::scalar(2.5).item() == 2.5);
}

TEST_CASE("tensor cast and equality") {
  Tensor<double> d(Shape{3}, std::vector<double>{0.5, -1.25, 3.0});
  Tensor<float> f = tensor_cast<float>(d);
  CHECK(f[1] == -1.25f);
  CHECK(tensor_cast<double>(f) == d);
  CHECK(shape_to_string(Shape{1, 2}) == "(1,2)");
}
