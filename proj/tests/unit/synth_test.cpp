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

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "relbert/synth.hpp"

using namespace relbert;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> written(const synth::Fixture& fx, const std::filesystem::path& dir,
                                           std::uint64_t seed) {
  std::filesystem::remove_all(dir);
  synth::write_fixture(fx, dir, seed);
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) files[e.path().filename().string()] = slurp(e.path());
  return files;
}

}  // namespace

TEST_CASE("fixed seed writes byte-identical files") {
  const auto root = std::filesystem::temp_directory_path() / "relbert_synth_test";
  for (const auto& name : synth::fixture_names()) {
    const auto a = written(synth::make_fixture(name, 4), root / "a", 4);
    const auto b = written(synth::make_fixture(name, 4), root / "b", 4);
    INFO(name);
    CHECK(a == b);
    CHECK(a.count("schema.txt"));
    CHECK(a.count("run.json"));
    const auto c = written(synth::make_fixture(name, 5), root / "c", 5);
    CHECK(a != c);
  }
  std::filesystem::remove_all(root);
  CHECK_THROWS_AS(synth::make_fixture("nope", 0), Error);
}

TEST_CASE("functional dependency fixture") {
  const auto fx = synth::functional_dependency(2);
  const auto& rows = fx.db.relation(0).rows;
  REQUIRE(rows.size() == 2000);
  std::map<std::string, std::string> f;
  for (const auto& row : fx.extras.at(0).second) {
    if (row[0] != "a") f[row[0]] = row[1];
  }
  CHECK(f.size() == 8);
  std::set<std::string> a_values, b_values;
  for (const auto& row : rows) {
    REQUIRE(row[0].has_value());
    REQUIRE(row[1].has_value());
    CHECK(f.at(*row[0]) == *row[1]);
    a_values.insert(*row[0]);
    b_values.insert(*row[1]);
  }
  CHECK(a_values.size() == 8);
  CHECK(b_values.size() == 8);
}

TEST_CASE("column collision fixture: every raw token lives in exactly two columns") {
  const auto fx = synth::column_collision(1);
  const auto& schema = fx.db.schema();
  std::map<std::string, std::set<std::size_t>> columns_of;
  for (const auto& row : fx.db.relation(0).rows) {
    for (std::size_t c = 0; c < row.size(); ++c) columns_of[*row[c]].insert(c);
  }
  for (const auto& [token, cols] : columns_of) {
    INFO(token);
    CHECK(cols.size() == 2);
  }
  // The two name columns follow different cluster assignments.
  std::map<std::pair<std::string, std::string>, std::string> cluster;
  for (const auto& row : fx.extras.at(0).second) {
    if (row[0] != "column") cluster[{row[0], row[1]}] = row[2];
  }
  const auto genre = *schema.column_ref("credits", "genre");
  const auto era = *schema.column_ref("credits", "era");
  std::map<std::string, std::set<std::string>> genre_of_cast, era_of_crew;
  for (const auto& row : fx.db.relation(0).rows) {
    genre_of_cast[cluster.at({"credits.lead", *row[0]})].insert(*row[genre.column]);
    era_of_crew[cluster.at({"credits.director", *row[1]})].insert(*row[era.column]);
  }
  for (const auto& [c, g] : genre_of_cast) CHECK(g.size() == 1);
  for (const auto& [c, g] : era_of_crew) CHECK(g.size() == 1);
}

TEST_CASE("foreign key fixture") {
  const auto fx = synth::foreign_key(0);
  const auto& schema = fx.db.schema();
  REQUIRE(schema.tables.size() == 2);
  CHECK(fx.db.row_count(0) == 40);
  CHECK(fx.db.row_count(1) == 400);
  CHECK(fx.db.dangling_reference_count() == 8);
  REQUIRE(schema.label_spec);
  CHECK(schema.label_spec->multi_label);
  CHECK(fx.run["train"]["depth"] == 1);
}
