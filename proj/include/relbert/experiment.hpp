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

// Run configuration file and the deterministic train/evaluation split shared
// by every command.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relbert/baselines.hpp"
#include "relbert/corpus.hpp"
#include "relbert/eval.hpp"
#include "relbert/model.hpp"
#include "relbert/relational.hpp"
#include "relbert/training.hpp"

namespace relbert {

struct EvalConfig {
  double mvi_fraction = 0.1;
  bool exclude_keys = true;
  std::vector<std::string> columns;  // MVI target columns; empty means all
  std::vector<std::size_t> ks{1, 5, 10};
  std::vector<std::size_t> classify_ks{1, 3, 5};
  double classify_holdout = 0.2;  // fraction of labelled tuples held out
  std::size_t depth = 0;
  std::size_t batch_size = 64;
};

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"mvi_fraction", c.mvi_fraction}, {"exclude_keys", c.exclude_keys},
                     {"columns", c.columns},           {"ks", c.ks},
                     {"classify_ks", c.classify_ks},   {"classify_holdout", c.classify_holdout},
                     {"depth", c.depth},               {"batch_size", c.batch_size}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  c.mvi_fraction = j.value("mvi_fraction", c.mvi_fraction);
  c.exclude_keys = j.value("exclude_keys", c.exclude_keys);
  c.columns = j.value("columns", c.columns);
  c.ks = j.value("ks", c.ks);
  c.classify_ks = j.value("classify_ks", c.classify_ks);
  c.classify_holdout = j.value("classify_holdout", c.classify_holdout);
  c.depth = j.value("depth", c.depth);
  c.batch_size = j.value("batch_size", c.batch_size);
}

struct RunConfig {
  std::filesystem::path schema;
  std::filesystem::path data_dir;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::size_t min_count = 1;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  SkipGramConfig baseline;

  // Copies the run seed into every seeded component.
  void propagate_seed() {
    model.seed = seed;
    train.seed = seed;
    baseline.seed = seed;
  }

  void validate() const {
    if (!std::filesystem::is_regular_file(schema)) {
      throw Error(ErrorCode::kValidationError, "schema file not found: " + schema.string());
    }
    if (!std::filesystem::is_directory(data_dir)) {
      throw Error(ErrorCode::kValidationError, "data directory not found: " + data_dir.string());
    }
    if (min_count < 1) throw Error(ErrorCode::kInvalidArgument, "min_count must be >= 1");
    model.validate();
    train.validate();
    baseline.validate();
  }

  nlohmann::json to_json() const {
    return {{"schema", schema.string()}, {"data_dir", data_dir.string()}, {"output_dir", output_dir.string()},
            {"seed", seed},              {"min_count", min_count},        {"model", model},
            {"train", train},            {"eval", eval},                  {"baseline", baseline}};
  }
};

// Relative paths resolve against `base`; a missing output_dir falls back to
// `default_output`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base,
                                      const std::filesystem::path& default_output = "relbert-run") {
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  try {
    c.schema = resolve(j.at("schema").get<std::string>());
    c.data_dir = resolve(j.value("data_dir", std::string(".")));
    c.output_dir = j.contains("output_dir") ? resolve(j["output_dir"].get<std::string>()) : default_output;
    c.seed = j.value("seed", c.seed);
    c.min_count = j.value("min_count", c.min_count);
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
    if (j.contains("eval")) c.eval = j["eval"].get<EvalConfig>();
    if (j.contains("baseline")) c.baseline = j["baseline"].get<SkipGramConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("run config: ") + e.what());
  }
  c.propagate_seed();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::filesystem::path& default_output = "relbert-run") {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kValidationError, "cannot open run config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path(), default_output);
}

struct Experiment {
  Database full;                          // as ingested
  Database train_view;                    // MVI cells and held-out labels hidden
  Vocabulary vocab;                       // built from train_view
  std::vector<MviQuery> queries;
  std::vector<std::size_t> classify_rows;  // held-out rows of the label table
};

// Depends only on (data, seed, eval settings, min_count). MVI cells are
// drawn from cells in the full data's vocabulary; the training vocabulary
// comes from the train view, so a query may still turn out out-of-vocabulary.
inline Experiment prepare_experiment(Database db, const EvalConfig& eval, std::uint64_t seed,
                                     std::size_t min_count = 1) {
  Experiment ex;
  ex.full = std::move(db);
  const auto full_vocab = build_vocab(ex.full, min_count);
  Rng split_rng = derive_rng(seed, streams::kMviSplit);
  auto split = make_mvi_split(ex.full, full_vocab, {eval.mvi_fraction, eval.exclude_keys, eval.columns}, split_rng);
  ex.queries = std::move(split.queries);

  std::vector<CellAddress> hidden;
  for (const auto& q : ex.queries) hidden.push_back({q.table, q.row, q.column});
  const auto& schema = ex.full.schema();
  if (schema.label_spec && eval.classify_holdout > 0) {
    const auto ref = *schema.column_ref(schema.label_spec->table, schema.label_spec->column);
    std::vector<std::size_t> labelled;
    for (std::size_t r = 0; r < ex.full.row_count(ref.table); ++r) {
      if (ex.full.relation(ref.table).rows[r][ref.column]) labelled.push_back(r);
    }
    Rng holdout_rng = derive_rng(seed, streams::kClassifyHoldout);
    shuffle_in_place(labelled, holdout_rng);
    labelled.resize(static_cast<std::size_t>(eval.classify_holdout * static_cast<double>(labelled.size())));
    std::sort(labelled.begin(), labelled.end());
    ex.classify_rows = labelled;
    for (auto r : labelled) hidden.push_back({ref.table, r, ref.column});
  }
  ex.train_view = ex.full.with_hidden(hidden);
  ex.vocab = build_vocab(ex.train_view, min_count);
  return ex;
}

inline Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  return prepare_experiment(ingest_directory(load_schema(config.schema.string()), config.data_dir), config.eval,
                            config.seed, config.min_count);
}

}  // namespace relbert
