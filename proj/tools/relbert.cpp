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

// relbert: ingest, synthesize, train, evaluate and export column-aware
// embeddings of relational databases.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relbert/relbert.hpp"

namespace fs = std::filesystem;
using namespace relbert;

namespace {

fs::path default_output_dir() {
  if (const char* env = std::getenv("RELBERT_OUTPUT_DIR"); env && *env) return env;
  return "relbert-run";
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  for (const auto& part : split(text, ',')) {
    const auto t = trim(part);
    if (t.empty()) continue;
    std::size_t pos = 0;
    long long v = -1;
    try {
      v = std::stoll(std::string(t), &pos);
    } catch (const std::exception&) {
    }
    if (v < 1 || pos != t.size()) throw Error(ErrorCode::kInvalidArgument, "bad k value '" + std::string(t) + "'");
    ks.push_back(static_cast<std::size_t>(v));
  }
  if (ks.empty()) throw Error(ErrorCode::kInvalidArgument, "no k values given");
  return ks;
}

void emit(const std::string& text, const std::string& output) {
  std::cout << text;
  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + output);
    out << text;
  }
}

// ------------------------------------------------------------------ ingest

struct IngestArgs {
  std::string schema;
  std::string data;
  std::string format = "text";
};

int cmd_ingest(const IngestArgs& a) {
  const auto schema = load_schema(a.schema);
  const auto db = ingest_directory(schema, a.data);
  if (a.format == "json") {
    nlohmann::json j;
    for (std::size_t t = 0; t < schema.tables.size(); ++t) {
      j["tables"].push_back(
          {{"name", schema.tables[t].name}, {"rows", db.row_count(t)}, {"missing", db.missing_count(t)}});
    }
    j["foreign_keys"] = nlohmann::json::array();
    for (std::size_t f = 0; f < schema.fk_links.size(); ++f) {
      const auto& fk = schema.fk_links[f];
      j["foreign_keys"].push_back({{"child", fk.child_table + "." + fk.child_column},
                                   {"parent", fk.parent_table + "." + fk.parent_column},
                                   {"dangling", db.dangling_references()[f]}});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "tables=" << schema.tables.size() << "\n";
  for (std::size_t t = 0; t < schema.tables.size(); ++t) {
    std::cout << "table=" << schema.tables[t].name << " rows=" << db.row_count(t) << " missing=" << db.missing_count(t)
              << "\n";
  }
  for (std::size_t f = 0; f < schema.fk_links.size(); ++f) {
    const auto& fk = schema.fk_links[f];
    std::cout << "fk=" << fk.child_table << "." << fk.child_column << "->" << fk.parent_table << "."
              << fk.parent_column << " dangling=" << db.dangling_references()[f] << "\n";
  }
  return 0;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  std::string fixture = "all";
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  const auto names = a.fixture == "all" ? synth::fixture_names() : std::vector<std::string>{a.fixture};
  for (const auto& name : names) {
    const auto fx = synth::make_fixture(name, a.seed);
    const fs::path dir = a.fixture == "all" ? fs::path(a.out) / name : fs::path(a.out);
    synth::write_fixture(fx, dir, a.seed);
    std::cout << "fixture=" << name << " dir=" << dir.string() << "\n";
  }
  return 0;
}

// ------------------------------------------------------------------- train

struct RunArgs {
  std::string config;
  std::string checkpoint;
  std::string output_dir;
  std::string baseline;
  std::string ks;
  std::string format = "text";
  std::string output;
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  bool shared_space = false;
  bool quiet = false;
};

RunConfig resolve_config(const RunArgs& a) {
  auto config = load_run_config(a.config, default_output_dir());
  if (a.seed) {
    config.seed = *a.seed;
    config.propagate_seed();
  }
  if (a.epochs) {
    config.train.epochs = *a.epochs;
    config.baseline.epochs = *a.epochs;
  }
  if (!a.output_dir.empty()) config.output_dir = a.output_dir;
  if (a.shared_space) config.model.shared_space = true;
  config.train.output_dir = config.output_dir.string();
  return config;
}

void print_record(const TrainLogRecord& r, std::size_t spe) {
  if (r.step % spe == 0) std::cout << format_log_record(r) << "\n" << std::flush;
}

int cmd_train(const RunArgs& a) {
  const auto config = resolve_config(a);
  const auto ex = prepare_experiment(config);
  fs::create_directories(config.output_dir);
  {
    std::ofstream out(config.output_dir / "run.json");
    out << config.to_json().dump(2) << "\n";
  }
  if (!a.baseline.empty()) {
    if (a.baseline != "table2vec") throw Error(ErrorCode::kInvalidArgument, "unknown baseline '" + a.baseline + "'");
    const auto on_epoch = [&](std::size_t epoch, double loss, const SkipGramParams&) {
      if (!a.quiet) std::printf("epoch=%zu loss=%.6f\n", epoch, loss);
    };
    const auto p = train_skipgram(ex.train_view, ex.vocab, config.baseline, on_epoch);
    const auto path = (config.output_dir / "table2vec.bin").string();
    save_skipgram(path, p, ex.vocab);
    std::cout << "checkpoint=" << path << "\n";
    return 0;
  }
  Trainer trainer(ex.train_view, ex.vocab, config.model, config.train);
  const std::size_t spe = trainer.steps_per_epoch();
  trainer.run([&](const TrainLogRecord& r) {
    if (!a.quiet) print_record(r, spe);
  });
  std::cout << "checkpoint=" << Trainer::final_checkpoint_path(config.train.output_dir) << "\n";
  return 0;
}

int cmd_resume(const RunArgs& a) {
  const auto config = resolve_config(a);
  const auto ex = prepare_experiment(config);
  const auto ck = read_checkpoint(a.checkpoint);
  TrainConfig tc = config.train;
  if (ck.meta.contains("train")) {
    // The schedule of the interrupted run wins unless overridden on the
    // command line.
    tc = ck.meta["train"].get<TrainConfig>();
    tc.output_dir = config.train.output_dir;
    if (a.epochs) tc.epochs = *a.epochs;
  }
  Trainer trainer(ex.train_view, ex.vocab, ck, tc);
  const std::size_t spe = trainer.steps_per_epoch();
  trainer.run([&](const TrainLogRecord& r) {
    if (!a.quiet) print_record(r, spe);
  });
  std::cout << "checkpoint=" << Trainer::final_checkpoint_path(tc.output_dir) << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval

// Either a transformer or a skip-gram checkpoint, verified against the
// vocabulary the run configuration yields.
struct LoadedRanker {
  CheckpointData ck;
  std::optional<ModelParams<float>> model;
  std::optional<SkipGramParams> skipgram;
  std::string label;
};

LoadedRanker load_ranker(const std::string& path, const Vocabulary& vocab) {
  LoadedRanker r;
  r.ck = read_checkpoint(path);
  verify_vocabulary(r.ck, vocab);
  const auto kind = r.ck.meta.value("kind", std::string("model"));
  if (kind == "table2vec") {
    r.skipgram = restore_skipgram(r.ck, vocab);
    r.label = "table2vec";
  } else {
    r.model = restore_params(r.ck, r.ck.meta.at("model").get<ModelConfig>(), vocab);
    r.label = r.model->config.shared_space ? "relbert-ss" : "relbert";
  }
  return r;
}

MviRanker make_ranker(const LoadedRanker& r, const Vocabulary& vocab, const Database& db, const RunConfig& config,
                      std::size_t workers) {
  if (r.skipgram) return skipgram_ranker(*r.skipgram, vocab, db);
  return model_ranker(*r.model, vocab, db, InferenceOptions{config.eval.depth, config.eval.batch_size, workers});
}

int cmd_eval_mvi(const RunArgs& a) {
  const auto config = resolve_config(a);
  const auto ex = prepare_experiment(config);
  const auto ranker = load_ranker(a.checkpoint, ex.vocab);
  const auto ks = a.ks.empty() ? config.eval.ks : parse_ks(a.ks);
  const auto rank = make_ranker(ranker, ex.vocab, ex.train_view, config, a.workers);
  const auto report = evaluate_mvi(ex.queries, ex.vocab, rank, ks, ranker.label);
  emit(a.format == "json" ? report.to_json().dump(2) + "\n" : report.to_text(), a.output);
  return 0;
}

int cmd_eval_classify(const RunArgs& a) {
  const auto config = resolve_config(a);
  const auto ex = prepare_experiment(config);
  if (!ex.full.schema().label_spec) throw Error(ErrorCode::kNoLabelSpec, "schema declares no label column");
  const auto ranker = load_ranker(a.checkpoint, ex.vocab);
  const auto ks = a.ks.empty() ? config.eval.classify_ks : parse_ks(a.ks);
  std::optional<std::vector<std::size_t>> rows;
  if (!ex.classify_rows.empty()) rows = ex.classify_rows;
  const auto report = evaluate_classification(ex.full, ex.vocab, ks,
                                              make_ranker(ranker, ex.vocab, ex.full, config, a.workers), rows,
                                              ranker.label);
  emit(a.format == "json" ? report.to_json().dump(2) + "\n" : report.to_text() + report.to_table(), a.output);
  return 0;
}

int cmd_export(const RunArgs& a) {
  const auto ck = read_checkpoint(a.checkpoint);
  const auto vocab = checked_vocabulary(ck, a.checkpoint);
  if (ck.meta.value("kind", std::string("model")) == "table2vec") {
    export_embeddings(restore_skipgram(ck, vocab), vocab, a.out);
  } else {
    export_embeddings(restore_params(ck, ck.meta.at("model").get<ModelConfig>(), vocab), vocab, a.out);
  }
  std::cout << "embeddings=" << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Column-aware embeddings for relational databases"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Validate a database and print a summary");
  c_ingest->add_option("--schema", ingest.schema, "Schema file")->required();
  c_ingest->add_option("--data", ingest.data, "Directory with one <table>.csv per table")->required();
  c_ingest->add_option("--format", ingest.format, "text or json")->check(CLI::IsMember({"text", "json"}));

  SynthArgs synth_args;
  auto* c_synth = app.add_subcommand("synth", "Write synthetic fixture databases");
  c_synth->add_option("--fixture", synth_args.fixture, "fd, collision, fk or all")
      ->check(CLI::IsMember({"fd", "collision", "fk", "all"}));
  c_synth->add_option("--out", synth_args.out, "Output directory")->required();
  c_synth->add_option("--seed", synth_args.seed, "Generator seed");

  RunArgs run;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", run.config, "Run configuration (JSON)")->required();
    c->add_option("--seed", run.seed, "Override the run seed");
    c->add_option("--output-dir", run.output_dir, "Override the output directory");
    c->add_option("--workers", run.workers, "Worker threads for evaluation")->check(CLI::PositiveNumber);
  };
  auto* c_train = app.add_subcommand("train", "Train a model (or baseline) from a run configuration");
  add_common(c_train);
  c_train->add_flag("--shared-space", run.shared_space, "Embed every column into one shared space");
  c_train->add_option("--baseline", run.baseline, "Train a baseline instead (table2vec)");
  c_train->add_option("--epochs", run.epochs, "Override the number of epochs");
  c_train->add_flag("--quiet", run.quiet, "Suppress per-epoch loss lines");

  auto* c_resume = app.add_subcommand("resume", "Continue training from a checkpoint");
  add_common(c_resume);
  c_resume->add_option("--checkpoint", run.checkpoint, "Checkpoint to continue from")->required();
  c_resume->add_option("--epochs", run.epochs, "Total epochs of the continued run");
  c_resume->add_flag("--quiet", run.quiet, "Suppress per-epoch loss lines");

  auto add_eval = [&](CLI::App* c) {
    add_common(c);
    c->add_option("--checkpoint", run.checkpoint, "Trained checkpoint")->required();
    c->add_option("--k", run.ks, "Comma-separated cutoffs");
    c->add_option("--format", run.format, "text or json")->check(CLI::IsMember({"text", "json"}));
    c->add_option("--output", run.output, "Also write the report to this file");
  };
  auto* c_mvi = app.add_subcommand("eval-mvi", "Missing value imputation: MR, MRR, Hit@k");
  add_eval(c_mvi);
  auto* c_cls = app.add_subcommand("eval-classify", "Tuple classification: micro P@k, R@k");
  add_eval(c_cls);

  auto* c_export = app.add_subcommand("export-embeddings", "Write one vector per (column, value)");
  c_export->add_option("--checkpoint", run.checkpoint, "Trained checkpoint")->required();
  c_export->add_option("--out", run.out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_synth) return cmd_synth(synth_args);
    if (*c_train) return cmd_train(run);
    if (*c_resume) return cmd_resume(run);
    if (*c_mvi) return cmd_eval_mvi(run);
    if (*c_cls) return cmd_eval_classify(run);
    if (*c_export) return cmd_export(run);
  } catch (const Error& e) {
    std::cerr << "relbert: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "relbert: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
