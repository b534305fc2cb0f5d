// Copyright 2026 The RelBert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch_amalgamated.hpp>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "../support/op_cases.hpp"
#include "relbert/tensor.hpp"

using namespace relbert;
using namespace relbert::testing;

TEST_CASE("matmul values") {
  const auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto y = matmul(eye, x);
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto p = matmul(Tensor::from_data({2, 2}, {1, 2, 3, 4}), Tensor::from_data({2, 1}, {5, 6}));
  CHECK(p.shape() == Shape{2, 1});
  CHECK(p[0] == 17);
  CHECK(p[1] == 39);
  CHECK_THROWS_AS(matmul(x, x), Error);
}

TEST_CASE("softmax rows") {
  const auto s = softmax_rows(Tensor::from_data({2, 4}, {3, 3, 3, 3, 1000, 0, -1000, 5}));
  for (int j = 0; j < 4; ++j) CHECK(s[j] == Catch::Approx(0.25).margin(1e-7));
  CHECK(s[4] == Catch::Approx(1.0).margin(1e-7));
  CHECK(s[5] == Catch::Approx(0.0).margin(1e-7));
  Rng rng(8);
  std::vector<float> big(50 * 7);
  for (auto& v : big) v = static_cast<float>(2e4 * (uniform_unit(rng) - 0.5));
  const auto t = softmax_rows(Tensor::from_data({50, 7}, big));
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      REQUIRE(std::isfinite(t[r * 7 + j]));
      REQUIRE(t[r * 7 + j] >= 0);
      total += t[r * 7 + j];
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("cross entropy values") {
  const auto uniform = cross_entropy(Tensor::from_data({2, 4}, std::vector<float>(8, 0.5f)), {1, 3});
  CHECK(uniform.item() == Catch::Approx(std::log(4.0)).margin(1e-6));
  const auto sure = cross_entropy(Tensor::from_data({1, 3}, {0, 20, 0}), {1});
  CHECK(sure.item() == Catch::Approx(0.0).margin(1e-8));
  CHECK_THROWS_AS(cross_entropy(Tensor::from_data({1, 3}, {0, 0, 0}), {3}), Error);
  const auto summed = cross_entropy(Tensor::from_data({2, 4}, std::vector<float>(8, 0.0f)), {0, 0}, Reduction::kSum);
  CHECK(summed.item() == Catch::Approx(2 * std::log(4.0)).margin(1e-6));
}

TEST_CASE("layer norm of a constant row is the bias") {
  const auto x = Tensor::from_data({1, 4}, {2, 2, 2, 2});
  const auto gain = Tensor::from_data({4}, {1, 2, 3, 4});
  const auto bias = Tensor::from_data({4}, {0.5f, -1, 0, 7});
  const auto y = layer_norm(x, gain, bias, 1e-5f);
  for (int j = 0; j < 4; ++j) CHECK(y[j] == Catch::Approx(bias[j]).margin(1e-6));
  CHECK_THROWS_AS(layer_norm(x, gain, bias, 0.0f), Error);
  CHECK_THROWS_AS(layer_norm(x, gain, bias, -1.0f), Error);
}

TEST_CASE("gelu and relu values") {
  const auto g = gelu(Tensor::from_data({3}, {0, 1, -1}));
  CHECK(g[0] == 0);
  CHECK(g[1] == Catch::Approx(0.8413447).margin(1e-6));
  CHECK(g[2] == Catch::Approx(-0.1586553).margin(1e-6));
  const auto r = relu(Tensor::from_data({2}, {-3, 2}));
  CHECK(r[0] == 0);
  CHECK(r[1] == 2);
}

TEST_CASE("shape errors") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), Error);
  CHECK_THROWS_AS(mul(a, b), Error);
  CHECK_THROWS_AS(add_bias(a, Tensor::zeros({2})), Error);
  CHECK_THROWS_AS(reshape(a, {4, 2}), Error);
  CHECK_THROWS_AS(concat<float>({a, Tensor::zeros({1, 2})}), Error);
  CHECK_THROWS_AS(embedding_gather(a, {2}), Error);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), Error);
}

TEST_CASE("backward basics") {
  SECTION("dx/dx = 1") {
    auto x = Tensor::scalar(3.0f, true);
    backward(x);
    CHECK(x.grad()[0] == 1);
  }
  SECTION("d(x.x)/dx = 2x") {
    Rng rng(11);
    auto x = random_tensor({1, 6}, rng);
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == Catch::Approx(2 * x[i]).epsilon(1e-12));
  }
  SECTION("repeated calls accumulate into leaves") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    const auto loss = sum(scale(x, 3.0f));
    backward(loss);
    backward(loss);
    CHECK(x.grad()[0] == 6);
    x.zero_grad();
    backward(loss);
    CHECK(x.grad()[1] == 3);
  }
  SECTION("non-scalar loss") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    try {
      backward(scale(x, 2.0f));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonScalarLoss);
    }
  }
  SECTION("gather scatters into gathered rows only") {
    auto table = Tensor::from_data({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    backward(sum(embedding_gather(table, {2, 0, 2})));
    const std::vector<float> expect{1, 1, 0, 0, 2, 2, 0, 0};
    CHECK(std::vector<float>(table.grad().begin(), table.grad().end()) == expect);
  }
}

TEST_CASE("shared subexpressions sum their path contributions") {
  Rng rng(21);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 3}, rng);
  auto w = weights_like({3, 3}, rng);
  // y is used twice: loss = sum((y + gelu(y)) * w) with y = a b.
  const auto shared_loss = [&] {
    const auto y = matmul(a, b);
    return sum(mul(add(y, gelu(y)), w));
  };
  backward(shared_loss());
  const std::vector<double> ga(a.grad().begin(), a.grad().end());
  const std::vector<double> gb(b.grad().begin(), b.grad().end());
  // Oracle: two independent copies of the subgraph, one per use.
  a.clear_grad();
  b.clear_grad();
  backward(sum(mul(matmul(a, b), w)));
  backward(sum(mul(gelu(matmul(a, b)), w)));
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == Catch::Approx(a.grad()[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < gb.size(); ++i) CHECK(gb[i] == Catch::Approx(b.grad()[i]).epsilon(1e-12));
}

TEST_CASE("finite-difference checks per op") {
  for (const auto& c : op_cases()) {
    for (int i = 0; i < kOpInstances; ++i) {
      const double err = op_case_error(c, i);
      INFO(c.name << " instance " << i << " relative error " << err);
      CHECK(err <= kOpTolerance);
    }
  }
}

TEST_CASE("attention semantics") {
  SECTION("a single attendable key returns its value row") {
    const auto q = Tensor::from_data({2, 2}, {1, 2, -3, 4});
    const auto k = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    const auto v = Tensor::from_data({2, 2}, {0.5f, -1, 9, 9});
    const auto r = attention(q, k, v, {1, 0}, 1, 2, 1);
    CHECK(r.output[0] == Catch::Approx(0.5));
    CHECK(r.output[1] == Catch::Approx(-1));
    CHECK(r.output[2] == Catch::Approx(0.5));
    CHECK(r.degenerate_rows == 0);
  }
  SECTION("orthonormal q = k over sqrt(2)") {
    const auto q = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const auto v = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const auto r = attention(q, q, v, {1, 1}, 1, 2, 1);
    // weights of row 0: softmax([1, 0] / sqrt 2)
    const double w0 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
    CHECK(r.output[0] == Catch::Approx(w0).epsilon(1e-6));
    CHECK(r.output[1] == Catch::Approx(1 - w0).epsilon(1e-6));
    CHECK(r.output[3] == Catch::Approx(w0).epsilon(1e-6));
  }
  SECTION("a fully masked sequence yields zeros and is flagged") {
    const auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    const auto r = attention(x, x, x, {0, 0}, 1, 2, 1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.output[i] == 0);
    CHECK(r.degenerate_rows == 2);
  }
  CHECK_THROWS_AS(attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), {1, 1}, 1, 2, 2),
                  Error);
}
