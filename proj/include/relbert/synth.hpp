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

// Seeded synthetic databases for desk-scale experiments:
//   fd        one table, b = f(a) for a fixed permutation f over 8 values
//   collision the same raw strings occupy two semantically different columns
//   fk        directors <- movies through a foreign key, multi-label genres

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relbert/csv.hpp"
#include "relbert/error.hpp"
#include "relbert/relational.hpp"
#include "relbert/util.hpp"

namespace relbert::synth {

struct Fixture {
  std::string name;
  Database db;
  // Extra CSV files written next to the tables (ground truth).
  std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>> extras;
  nlohmann::json run;  // suggested run configuration
};

struct FdOptions {
  std::size_t rows = 2000;
  std::size_t values = 8;
  std::size_t max_run = 6;  // rows come in runs sharing `a`
};

inline Fixture functional_dependency(std::uint64_t seed, const FdOptions& o = {}) {
  Rng rng = derive_rng(seed, streams::kSynth, 1);
  std::vector<std::size_t> f(o.values);
  for (std::size_t i = 0; i < o.values; ++i) f[i] = i;
  shuffle_in_place(f, rng);

  SchemaSet schema = parse_schema("table facts\ncolumn a categorical\ncolumn b categorical\nlabel facts.b\n", "fd");
  Relation rel;
  while (rel.rows.size() < o.rows) {
    const std::size_t a = uniform_index(rng, o.values);
    const std::size_t run = 1 + uniform_index(rng, o.max_run);
    for (std::size_t k = 0; k < run && rel.rows.size() < o.rows; ++k) {
      rel.rows.push_back({"a" + std::to_string(a), "b" + std::to_string(f[a])});
    }
  }
  std::vector<std::vector<std::string>> mapping{{"a", "b"}};
  for (std::size_t i = 0; i < o.values; ++i) mapping.push_back({"a" + std::to_string(i), "b" + std::to_string(f[i])});

  Fixture fx{"fd", Database(schema, {std::move(rel)}), {{"mapping.csv", mapping}}, {}};
  fx.run = {{"eval", {{"columns", {"facts.b"}}, {"mvi_fraction", 0.1}}}};
  return fx;
}

struct CollisionOptions {
  std::size_t rows = 1500;
  std::size_t names = 32;
  std::size_t clusters = 8;
};

// credits(lead, director, genre, era). Names n* fill both lead and director;
// group tokens g* fill both genre and era. genre = g[cast(lead)] and
// era = g[crew(director)] for two independent balanced clusterings of the
// names, so one string means different things in its two columns.
inline Fixture column_collision(std::uint64_t seed, const CollisionOptions& o = {}) {
  if (o.clusters == 0 || o.names % o.clusters != 0) {
    throw Error(ErrorCode::kInvalidArgument, "names must split evenly into clusters");
  }
  Rng rng = derive_rng(seed, streams::kSynth, 2);
  auto clustering = [&] {
    std::vector<std::size_t> c(o.names);
    for (std::size_t i = 0; i < o.names; ++i) c[i] = i % o.clusters;
    shuffle_in_place(c, rng);
    return c;
  };
  const auto cast = clustering();
  const auto crew = clustering();

  SchemaSet schema = parse_schema(
      "table credits\n"
      "column lead categorical\ncolumn director categorical\n"
      "column genre categorical\ncolumn era categorical\n"
      "label credits.genre\n",
      "collision");
  auto name = [](std::size_t i) { return "n" + std::to_string(i); };
  auto group = [](std::size_t i) { return "g" + std::to_string(i); };
  Relation rel;
  // Every name and group appears in both of its columns at least once.
  for (std::size_t r = 0; r < o.rows; ++r) {
    const std::size_t lead = r < o.names ? r : uniform_index(rng, o.names);
    const std::size_t director = r < o.names ? (r + o.names / 2) % o.names : uniform_index(rng, o.names);
    rel.rows.push_back({name(lead), name(director), group(cast[lead]), group(crew[director])});
  }
  std::vector<std::vector<std::string>> clusters{{"column", "value", "cluster"}};
  for (std::size_t i = 0; i < o.names; ++i) clusters.push_back({"credits.lead", name(i), "cast" + std::to_string(cast[i])});
  for (std::size_t i = 0; i < o.names; ++i) {
    clusters.push_back({"credits.director", name(i), "crew" + std::to_string(crew[i])});
  }
  Fixture fx{"collision", Database(schema, {std::move(rel)}), {{"clusters.csv", clusters}}, {}};
  fx.run = {{"eval", {{"columns", {"credits.genre", "credits.era"}}, {"mvi_fraction", 0.1}}}};
  return fx;
}

struct FkOptions {
  std::size_t directors = 40;
  std::size_t movies = 400;
  std::size_t dangling = 8;
};

// directors(id, country, style) and movies(id, director_id, decade, genres).
// A movie's genres are its director's style genre plus, in later decades, a
// second genre; a few director_id values point nowhere.
inline Fixture foreign_key(std::uint64_t seed, const FkOptions& o = {}) {
  Rng rng = derive_rng(seed, streams::kSynth, 3);
  static const std::vector<std::string> kCountries{"fr", "it", "jp", "us", "in"};
  static const std::vector<std::string> kStyles{"noir", "comic", "epic", "quiet", "kinetic"};
  static const std::vector<std::string> kGenres{"crime", "comedy", "war", "drama", "action"};
  static const std::vector<std::string> kDecades{"1960s", "1970s", "1980s", "1990s", "2000s"};

  SchemaSet schema = parse_schema(
      "table directors\n"
      "column id id\ncolumn country categorical\ncolumn style categorical\npk id\n"
      "table movies\n"
      "column id id\ncolumn director_id id\ncolumn decade categorical\ncolumn genres categorical\n"
      "pk id\nfk director_id -> directors.id\nlabel movies.genres multi\n",
      "fk");
  Relation directors;
  std::vector<std::size_t> style(o.directors);
  for (std::size_t d = 0; d < o.directors; ++d) {
    style[d] = uniform_index(rng, kStyles.size());
    const std::size_t country = (style[d] + (uniform_index(rng, 4) == 0 ? 1 : 0)) % kCountries.size();
    directors.rows.push_back({"d" + std::to_string(d), kCountries[country], kStyles[style[d]]});
  }
  Relation movies;
  for (std::size_t m = 0; m < o.movies; ++m) {
    const std::size_t d = uniform_index(rng, o.directors);
    const std::size_t decade = uniform_index(rng, kDecades.size());
    std::string genres = kGenres[style[d]];
    if (decade >= 3) {
      const std::size_t extra = (style[d] + 1 + decade) % kGenres.size();
      if (extra != style[d]) genres += std::string(1, kLabelSeparator) + kGenres[extra];
    }
    const bool dangling = m % (o.movies / std::max<std::size_t>(o.dangling, 1)) == 7 && o.dangling > 0;
    const std::string director_id = dangling ? "d" + std::to_string(o.directors + m) : "d" + std::to_string(d);
    movies.rows.push_back({"m" + std::to_string(m), director_id, kDecades[decade], genres});
  }
  Fixture fx{"fk", Database(schema, {std::move(directors), std::move(movies)}), {}, {}};
  fx.run = {{"train", {{"depth", 1}}},
            {"eval", {{"mvi_fraction", 0.1}, {"exclude_keys", true}, {"classify_holdout", 0.2}, {"depth", 1}}}};
  return fx;
}

inline std::vector<std::string> fixture_names() { return {"fd", "collision", "fk"}; }

inline Fixture make_fixture(const std::string& name, std::uint64_t seed) {
  if (name == "fd") return functional_dependency(seed);
  if (name == "collision") return column_collision(seed);
  if (name == "fk") return foreign_key(seed);
  throw Error(ErrorCode::kInvalidArgument, "unknown fixture '" + name + "'");
}

// <dir>/schema.txt, one CSV per table, ground-truth extras and run.json.
inline void write_fixture(const Fixture& fx, const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "schema.txt");
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / "schema.txt").string());
    out << format_schema(fx.db.schema());
  }
  write_database(fx.db, dir);
  for (const auto& [file, records] : fx.extras) csv::write_file((dir / file).string(), records);
  nlohmann::json run = fx.run;
  run["schema"] = "schema.txt";
  run["data_dir"] = ".";
  run["output_dir"] = "run";
  run["seed"] = seed;
  std::ofstream out(dir / "run.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / "run.json").string());
  out << run.dump(2) << "\n";
}

}  // namespace relbert::synth
