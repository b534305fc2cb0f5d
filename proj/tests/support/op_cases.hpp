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

#pragma once

// Seeded finite-difference cases for every differentiable tensor op.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"

namespace relbert::testing {

inline constexpr int kOpInstances = 20;
inline constexpr double kOpTolerance = 1e-4;

using OpInstance = std::pair<std::vector<DTensor>, std::function<DTensor()>>;

struct OpCase {
  std::string name;
  std::function<OpInstance(Rng&)> make;
};

inline DTensor weights_like(const Shape& shape, Rng& rng) { return random_tensor(shape, rng, 1.0, false); }

// Relative gradient error of instance `i` of `c`.
inline double op_case_error(const OpCase& c, int i) {
  Rng rng = derive_rng(1234, 99, static_cast<std::uint64_t>(i));
  auto [leaves, loss] = c.make(rng);
  return compare_gradients(all_coordinates(leaves), loss).relative_error();
}

// Each loss is sum(op(inputs) * fixed random weights) unless the op is
// already scalar.
inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    auto w = weights_like({3, 5}, rng);
    return std::pair{std::vector<DTensor>{a, b}, std::function<DTensor()>([=] { return sum(mul(matmul(a, b), w)); })};
  }});
  cases.push_back({"sum of matmul", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(matmul(a, b)); })};
  }});
  cases.push_back({"add", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a, b}, std::function<DTensor()>([=] { return sum(mul(add(a, b), w)); })};
  }});
  cases.push_back({"mul", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a, b}, std::function<DTensor()>([=] { return sum(mul(mul(a, b), w)); })};
  }});
  cases.push_back({"add_bias", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a, b}, std::function<DTensor()>([=] { return sum(mul(add_bias(a, b), w)); })};
  }});
  cases.push_back({"scale", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(scale(a, -1.7), w)); })};
  }});
  cases.push_back({"transpose", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto w = weights_like({4, 3}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(transpose(a), w)); })};
  }});
  cases.push_back({"reshape", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto w = weights_like({2, 6}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(reshape(a, {2, 6}), w)); })};
  }});
  cases.push_back({"concat", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({2, 4}, rng);
    auto w = weights_like({5, 4}, rng);
    return std::pair{std::vector<DTensor>{a, b},
                     std::function<DTensor()>([=] { return sum(mul(concat<double>({a, b}), w)); })};
  }});
  cases.push_back({"softmax_rows", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(softmax_rows(a), w)); })};
  }});
  cases.push_back({"layer_norm", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng), g = random_tensor({4}, rng), b = random_tensor({4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a, g, b},
                     std::function<DTensor()>([=] { return sum(mul(layer_norm(a, g, b, 1e-5), w)); })};
  }});
  cases.push_back({"gelu", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(gelu(a), w)); })};
  }});
  cases.push_back({"relu", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    // Keep inputs away from the kink.
    for (auto& x : a.data()) x += x >= 0 ? 0.1 : -0.1;
    auto w = weights_like({3, 4}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(relu(a), w)); })};
  }});
  cases.push_back({"embedding_gather", [](Rng& rng) {
    auto t = random_tensor({5, 4}, rng);
    auto w = weights_like({3, 4}, rng);
    std::vector<std::size_t> ids{uniform_index(rng, 5), uniform_index(rng, 5), uniform_index(rng, 5)};
    return std::pair{std::vector<DTensor>{t}, std::function<DTensor()>([=] { return sum(mul(embedding_gather(t, ids), w)); })};
  }});
  cases.push_back({"embedding_gather_multi", [](Rng& rng) {
    auto t0 = random_tensor({3, 4}, rng), t1 = random_tensor({2, 4}, rng);
    auto w = weights_like({4, 4}, rng);
    std::vector<TableRow> refs{{0, 2}, {1, 0}, {0, 2}, {1, 1}};
    return std::pair{std::vector<DTensor>{t0, t1},
                     std::function<DTensor()>([=] { return sum(mul(embedding_gather_multi<double>({t0, t1}, refs), w)); })};
  }});
  cases.push_back({"gather_rows", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    auto w = weights_like({2, 4}, rng);
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return sum(mul(gather_rows(a, {2, 0}), w)); })};
  }});
  cases.push_back({"cross_entropy", [](Rng& rng) {
    auto a = random_tensor({3, 4}, rng);
    std::vector<std::size_t> targets{uniform_index(rng, 4), uniform_index(rng, 4), uniform_index(rng, 4)};
    return std::pair{std::vector<DTensor>{a}, std::function<DTensor()>([=] { return cross_entropy(a, targets); })};
  }});
  cases.push_back({"attention", [](Rng& rng) {
    const std::size_t batch = 2, length = 3, heads = 2;
    auto q = random_tensor({batch * length, 4}, rng), k = random_tensor({batch * length, 4}, rng),
         v = random_tensor({batch * length, 4}, rng);
    auto w = weights_like({batch * length, 4}, rng);
    std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
    return std::pair{std::vector<DTensor>{q, k, v}, std::function<DTensor()>([=] {
                       return sum(mul(attention(q, k, v, mask, batch, length, heads).output, w));
                     })};
  }});
  return cases;
}

}  // namespace relbert::testing
