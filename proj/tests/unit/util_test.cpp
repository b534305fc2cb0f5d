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

#include <set>

#include "relbert/util.hpp"

using namespace relbert;

TEST_CASE("derive_rng is a pure function of its triple") {
  auto a = derive_rng(7, 2, 3);
  auto b = derive_rng(7, 2, 3);
  auto c = derive_rng(7, 2, 4);
  const auto xa = a(), xb = b(), xc = c();
  CHECK(xa == xb);
  CHECK(xa != xc);
}

TEST_CASE("mt19937_64 reference output") {
  Rng rng(5489u);
  for (int i = 0; i < 9999; ++i) rng();
  CHECK(rng() == 9981545732273789042ULL);
}

TEST_CASE("uniform_index covers its range without leaving it") {
  Rng rng(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = uniform_index(rng, 7);
    REQUIRE(k < 7);
    ++hits[k];
  }
  for (int h : hits) CHECK(h > 800);
}

TEST_CASE("uniform_unit lies in [0, 1) with mean near one half") {
  Rng rng(2);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = uniform_unit(rng);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / 20000 == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("standard_normal moments") {
  Rng rng(3);
  double s = 0, s2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = standard_normal(rng);
    s += x;
    s2 += x * x;
  }
  CHECK(s / n == Catch::Approx(0.0).margin(0.02));
  CHECK(s2 / n == Catch::Approx(1.0).margin(0.03));
}

TEST_CASE("shuffle_in_place permutes") {
  Rng rng(4);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  shuffle_in_place(v, rng);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 10);
  CHECK(v != std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("FNV-1a test vectors") {
  Fnv1a empty;
  CHECK(empty.digest() == 0xcbf29ce484222325ULL);
  Fnv1a a;
  a.update("a");
  CHECK(a.digest() == 0xaf63dc4c8601ec8cULL);
  Fnv1a foobar;
  foobar.update("foobar");
  CHECK(foobar.digest() == 0x85944171f73967e8ULL);
  CHECK(hex64(foobar.digest()) == "85944171f73967e8");
}

TEST_CASE("split and trim") {
  CHECK(split("a|b||c", '|') == std::vector<std::string>{"a", "b", "", "c"});
  CHECK(split("", ',') == std::vector<std::string>{""});
  CHECK(trim("  x y \t\n") == "x y");
  CHECK(trim("   ").empty());
}
