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

// Missing value imputation as ranked retrieval (MR, MRR, Hit@k) and tuple
// classification as masked label prediction (micro P@k, R@k).

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "relbert/corpus.hpp"
#include "relbert/error.hpp"
#include "relbert/model.hpp"
#include "relbert/relational.hpp"

namespace relbert {

// ---------------------------------------------------------------- metrics

struct RankMetrics {
  std::size_t n = 0;
  double mr = 0;
  double mrr = 0;
  std::map<std::size_t, double> hit_at;
};

// ranks are 1-based.
inline RankMetrics rank_metrics(std::span<const std::size_t> ranks, std::span<const std::size_t> ks) {
  RankMetrics m;
  m.n = ranks.size();
  for (auto k : ks) m.hit_at[k] = 0;
  if (ranks.empty()) return m;
  double sum_rank = 0, sum_rr = 0;
  for (auto r : ranks) {
    sum_rank += static_cast<double>(r);
    sum_rr += 1.0 / static_cast<double>(r);
    for (auto k : ks) {
      if (r <= k) m.hit_at[k] += 1;
    }
  }
  const double n = static_cast<double>(ranks.size());
  m.mr = sum_rank / n;
  m.mrr = sum_rr / n;
  for (auto& [k, h] : m.hit_at) h /= n;
  return m;
}

struct PrecisionRecall {
  std::map<std::size_t, double> p_at;
  std::map<std::size_t, double> r_at;
};

// Micro P@k = sum_i |top_k(i) & truth(i)| / (k N);
// micro R@k = sum_i |top_k(i) & truth(i)| / sum_i |truth(i)|.
inline PrecisionRecall precision_recall_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                                             const std::vector<std::set<std::size_t>>& truths,
                                             std::span<const std::size_t> ks) {
  if (rankings.size() != truths.size()) {
    throw Error(ErrorCode::kInvalidArgument, "rankings and truth sets differ in count");
  }
  PrecisionRecall pr;
  std::size_t truth_total = 0;
  for (const auto& t : truths) truth_total += t.size();
  const double n = static_cast<double>(rankings.size());
  for (auto k : ks) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rankings.size(); ++i) {
      const std::size_t top = std::min(k, rankings[i].size());
      for (std::size_t j = 0; j < top; ++j) hits += truths[i].count(rankings[i][j]);
    }
    pr.p_at[k] = rankings.empty() ? 0.0 : static_cast<double>(hits) / (static_cast<double>(k) * n);
    pr.r_at[k] = truth_total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth_total);
  }
  return pr;
}

struct EvalReport {
  std::string task;   // "mvi" or "classification"
  std::string model;  // free-form label of the evaluated model
  std::size_t n_queries = 0;
  std::size_t excluded_oov = 0;
  double mr = 0;
  double mrr = 0;
  std::map<std::size_t, double> hit_at;
  std::map<std::size_t, double> p_at;
  std::map<std::size_t, double> r_at;

  std::string to_text() const {
    std::ostringstream out;
    out << "task=" << task << "\n";
    if (!model.empty()) out << "model=" << model << "\n";
    out << "n_queries=" << n_queries << "\n";
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.6f", v);
      return std::string(buf);
    };
    if (task == "mvi") {
      out << "excluded_oov=" << excluded_oov << "\n";
      out << "mr=" << num(mr) << "\n";
      out << "mrr=" << num(mrr) << "\n";
      for (const auto& [k, v] : hit_at) out << "hit@" << k << "=" << num(v) << "\n";
    } else {
      for (const auto& [k, v] : p_at) out << "p@" << k << "=" << num(v) << "\n";
      for (const auto& [k, v] : r_at) out << "r@" << k << "=" << num(v) << "\n";
    }
    return out.str();
  }

  // P/R rows under one column per k.
  std::string to_table() const {
    std::ostringstream out;
    char buf[64];
    out << "     ";
    for (const auto& [k, v] : p_at) {
      std::snprintf(buf, sizeof buf, "%10s", ("k=" + std::to_string(k)).c_str());
      out << buf;
    }
    out << "\n P   ";
    for (const auto& [k, v] : p_at) {
      std::snprintf(buf, sizeof buf, "%10.4f", v);
      out << buf;
    }
    out << "\n R   ";
    for (const auto& [k, v] : r_at) {
      std::snprintf(buf, sizeof buf, "%10.4f", v);
      out << buf;
    }
    out << "\n";
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"task", task}, {"model", model}, {"n_queries", n_queries}};
    auto keyed = [](const std::map<std::size_t, double>& m) {
      nlohmann::json o = nlohmann::json::object();
      for (const auto& [k, v] : m) o[std::to_string(k)] = v;
      return o;
    };
    if (task == "mvi") {
      j["excluded_oov"] = excluded_oov;
      j["mr"] = mr;
      j["mrr"] = mrr;
      j["hit_at"] = keyed(hit_at);
    } else {
      j["p_at"] = keyed(p_at);
      j["r_at"] = keyed(r_at);
    }
    return j;
  }
};

// ---------------------------------------------------------------- MVI split

struct MviQuery {
  std::size_t table = 0;
  std::size_t row = 0;
  std::size_t column = 0;
  std::string true_value;
};

struct MviSplitOptions {
  double fraction = 0.1;
  bool exclude_keys = false;
  std::vector<std::string> columns;  // "<table>.<column>"; empty means every column
};

struct MviSplit {
  Database train_view;  // hidden cells replaced by Missing
  std::vector<MviQuery> queries;
};

// Hides floor(fraction * N) cells drawn without replacement from the N
// non-missing, in-vocabulary cells (multi-label cells never qualify).
inline MviSplit make_mvi_split(const Database& db, const Vocabulary& vocab, const MviSplitOptions& options, Rng& rng) {
  if (!(options.fraction > 0 && options.fraction <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "mvi fraction must lie in (0, 1]");
  }
  const auto& schema = db.schema();
  std::vector<ColumnRef> columns;
  for (std::size_t t = 0; t < schema.tables.size(); ++t) {
    for (std::size_t c = 0; c < schema.tables[t].columns.size(); ++c) {
      const ColumnRef ref{t, c};
      if (schema.is_multi_label(ref)) continue;
      if (options.exclude_keys && schema.is_key_column(ref)) continue;
      if (!options.columns.empty() &&
          std::find(options.columns.begin(), options.columns.end(), schema.qualified_name(ref)) ==
              options.columns.end()) {
        continue;
      }
      columns.push_back(ref);
    }
  }
  for (const auto& name : options.columns) {
    const auto dot = name.find('.');
    if (dot == std::string::npos || !schema.column_ref(name.substr(0, dot), name.substr(dot + 1))) {
      throw Error(ErrorCode::kUnknownColumn, "no column '" + name + "'");
    }
  }
  std::vector<CellAddress> eligible;
  for (const auto& ref : columns) {
    const SpaceId sp = vocab.space_of(ref);
    const auto& rows = db.relation(ref.table).rows;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& cell = rows[r][ref.column];
      if (cell && vocab.local_value(sp, *cell)) eligible.push_back({ref.table, r, ref.column});
    }
  }
  const auto count = static_cast<std::size_t>(options.fraction * static_cast<double>(eligible.size()));
  if (count == 0) {
    throw Error(ErrorCode::kNoEligibleCells, std::to_string(eligible.size()) + " eligible cells yield no query at fraction " +
                                                 std::to_string(options.fraction));
  }
  for (std::size_t k = 0; k < count; ++k) std::swap(eligible[k], eligible[k + uniform_index(rng, eligible.size() - k)]);
  eligible.resize(count);
  std::sort(eligible.begin(), eligible.end());
  MviSplit split;
  for (const auto& a : eligible) {
    split.queries.push_back({a.table, a.row, a.column, *db.relation(a.table).rows[a.row][a.column]});
  }
  split.train_view = db.with_hidden(eligible);
  return split;
}

// ---------------------------------------------------------------- rankers

// Ranked local ids (column values only) for each query, best first.
using MviRanker = std::function<std::vector<std::vector<std::size_t>>(std::span<const MviQuery>)>;

template <class T>
void check_params_match(const ModelParams<T>& params, const Vocabulary& vocab) {
  bool ok;
  if (params.config.shared_space) {
    ok = params.column_tables.size() == 1 && params.column_tables[0].dim(0) == vocab.shared_size();
  } else {
    ok = params.column_tables.size() == vocab.num_spaces();
    for (SpaceId s = 1; ok && s <= vocab.num_spaces(); ++s) {
      ok = params.column_tables[s - 1].dim(0) == vocab.space(s).size();
    }
  }
  if (!ok) throw Error(ErrorCode::kVocabularyMismatch, "model parameters were built for a different vocabulary");
}

struct InferenceOptions {
  std::size_t depth = 0;
  std::size_t batch_size = 64;
  std::size_t workers = 1;
};

// Hidden state at each masked cell, scored against that cell's column space.
// Requests are processed in batches, optionally fanned out over workers;
// results keep request order.
template <class T>
std::vector<std::vector<ScoredValue>> predict_masked_cells(const ModelParams<T>& params, const Vocabulary& vocab,
                                                           const Database& db, std::span<const CellAddress> cells,
                                                           const InferenceOptions& options) {
  std::vector<std::vector<ScoredValue>> out(cells.size());
  const std::size_t bs = std::max<std::size_t>(options.batch_size, 1);
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t start = begin; start < end; start += bs) {
      const std::size_t stop = std::min(end, start + bs);
      std::vector<Sentence> sentences;
      std::vector<std::size_t> positions;
      for (std::size_t i = start; i < stop; ++i) {
        auto m = serialize_row_masked(db, vocab, cells[i].table, cells[i].row, cells[i].column, options.depth);
        positions.push_back(m.position);
        sentences.push_back(std::move(m.sentence));
      }
      const auto batch = batch_of_sentences(sentences, params.config.max_len);
      const auto fwd = forward(batch, params, vocab);
      const std::size_t d = params.config.d_model;
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t row = (i - start) * batch.length + positions[i - start];
        const SpaceId sp = vocab.space_of(ColumnRef{cells[i].table, cells[i].column});
        out[i] = score_column<T>(std::span<const T>(fwd.hidden.data().data() + row * d, d), params, vocab, sp);
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, cells.size()));
  if (workers == 1) {
    run_range(0, cells.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (cells.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk, end = std::min(cells.size(), begin + chunk);
      if (begin < end) threads.emplace_back(run_range, begin, end);
    }
    for (auto& t : threads) t.join();
  }
  return out;
}

template <class T>
MviRanker model_ranker(const ModelParams<T>& params, const Vocabulary& vocab, const Database& db,
                       InferenceOptions options = {}) {
  check_params_match(params, vocab);
  return [&params, &vocab, &db, options](std::span<const MviQuery> queries) {
    std::vector<CellAddress> cells;
    for (const auto& q : queries) cells.push_back({q.table, q.row, q.column});
    auto scored = predict_masked_cells(params, vocab, db, cells, options);
    std::vector<std::vector<std::size_t>> rankings;
    for (auto& s : scored) {
      std::vector<std::size_t> r;
      for (const auto& v : s) r.push_back(v.local);
      rankings.push_back(std::move(r));
    }
    return rankings;
  };
}

// ---------------------------------------------------------------- MVI

// Ranks every in-vocabulary query with `ranker` (queries whose true value is
// out of vocabulary are excluded and counted); the true value's 1-based rank
// feeds MR, MRR and Hit@k.
inline EvalReport evaluate_mvi(const std::vector<MviQuery>& queries, const Vocabulary& vocab, const MviRanker& ranker,
                               std::span<const std::size_t> ks, const std::string& model_label = "") {
  EvalReport report;
  report.task = "mvi";
  report.model = model_label;
  std::vector<MviQuery> scored;
  std::vector<std::size_t> truth;
  for (const auto& q : queries) {
    const SpaceId sp = vocab.space_of(ColumnRef{q.table, q.column});
    auto local = vocab.local_value(sp, q.true_value);
    if (!local) {
      ++report.excluded_oov;
      continue;
    }
    scored.push_back(q);
    truth.push_back(*local);
  }
  const auto rankings = ranker(scored);
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const auto& r = rankings.at(i);
    auto it = std::find(r.begin(), r.end(), truth[i]);
    if (it == r.end()) throw Error(ErrorCode::kVocabularyMismatch, "ranking omits the true value");
    ranks.push_back(static_cast<std::size_t>(it - r.begin()) + 1);
  }
  const auto m = rank_metrics(ranks, ks);
  report.n_queries = m.n;
  report.mr = m.mr;
  report.mrr = m.mrr;
  report.hit_at = m.hit_at;
  return report;
}

template <class T>
EvalReport eval_mvi(const ModelParams<T>& params, const Vocabulary& vocab, const Database& train_view,
                    const std::vector<MviQuery>& queries, std::span<const std::size_t> ks,
                    const InferenceOptions& options = {}) {
  return evaluate_mvi(queries, vocab, model_ranker(params, vocab, train_view, options), ks,
                      params.config.shared_space ? "relbert-ss" : "relbert");
}

// ---------------------------------------------------------------- classification

// Per labelled tuple of the label table (all rows, or `rows`), the label cell
// is hidden and `ranker` orders the label space.
inline EvalReport evaluate_classification(const Database& db, const Vocabulary& vocab, std::span<const std::size_t> ks,
                                          const MviRanker& ranker,
                                          const std::optional<std::vector<std::size_t>>& rows = {},
                                          const std::string& model_label = "") {
  const auto& schema = db.schema();
  if (!schema.label_spec) throw Error(ErrorCode::kNoLabelSpec, "schema declares no label column");
  const auto ref = *schema.column_ref(schema.label_spec->table, schema.label_spec->column);
  const SpaceId sp = vocab.space_of(ref);
  std::vector<std::size_t> candidates;
  if (rows) {
    candidates = *rows;
  } else {
    for (std::size_t r = 0; r < db.row_count(ref.table); ++r) candidates.push_back(r);
  }
  std::vector<MviQuery> cells;
  std::vector<std::set<std::size_t>> truths;
  // Out-of-vocabulary labels get ids past the space so they count in recall
  // denominators but can never be retrieved.
  std::size_t next_oov = vocab.space(sp).size();
  for (auto r : candidates) {
    const auto& cell = db.relation(ref.table).rows.at(r)[ref.column];
    if (!cell) continue;
    std::set<std::size_t> truth;
    for (const auto& label : cell_tokens(schema, ref, *cell)) {
      auto local = vocab.local_value(sp, label);
      truth.insert(local ? *local : next_oov++);
    }
    if (truth.empty()) continue;
    cells.push_back({ref.table, r, ref.column, *cell});
    truths.push_back(std::move(truth));
  }
  const auto pr = precision_recall_at_k(ranker(cells), truths, ks);
  EvalReport report;
  report.task = "classification";
  report.model = model_label;
  report.n_queries = cells.size();
  report.p_at = pr.p_at;
  report.r_at = pr.r_at;
  return report;
}

template <class T>
EvalReport eval_classification(const ModelParams<T>& params, const Vocabulary& vocab, const Database& db,
                               std::span<const std::size_t> ks,
                               const std::optional<std::vector<std::size_t>>& rows = {},
                               const InferenceOptions& options = {}) {
  if (!db.schema().label_spec) throw Error(ErrorCode::kNoLabelSpec, "schema declares no label column");
  return evaluate_classification(db, vocab, ks, model_ranker(params, vocab, db, options), rows,
                                 params.config.shared_space ? "relbert-ss" : "relbert");
}

// ---------------------------------------------------------------- embeddings

struct EmbeddingRow {
  std::string column;  // "<table>.<column>"
  std::string value;
  std::vector<float> vector;
};

inline std::string format_embedding_line(const EmbeddingRow& row) {
  std::string line = row.column + "\t" + escape_field(row.value) + "\t";
  char buf[32];
  for (std::size_t j = 0; j < row.vector.size(); ++j) {
    std::snprintf(buf, sizeof buf, j ? " %.9g" : "%.9g", static_cast<double>(row.vector[j]));
    line += buf;
  }
  return line;
}

// One line per (column, value): `<table>.<column>\t<value>\t<floats>`, after
// a '#' header naming the embedding space layout.
inline void write_embeddings(const std::string& path, const std::vector<EmbeddingRow>& rows, bool shared_space,
                             std::size_t dim) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write embeddings to " + path);
  out << "# relbert-embeddings dim=" << dim << " space=" << (shared_space ? "shared" : "per-column") << "\n";
  for (const auto& r : rows) out << format_embedding_line(r) << "\n";
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

inline std::vector<EmbeddingRow> read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::vector<EmbeddingRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto a = line.find('\t');
    const auto b = line.find('\t', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw Error(ErrorCode::kParseError, "bad embedding line");
    EmbeddingRow r{line.substr(0, a), unescape_field(line.substr(a + 1, b - a - 1)), {}};
    std::istringstream vs(line.substr(b + 1));
    for (float f; vs >> f;) r.vector.push_back(f);
    rows.push_back(std::move(r));
  }
  return rows;
}

template <class T>
std::vector<EmbeddingRow> embedding_rows(const ModelParams<T>& params, const Vocabulary& vocab) {
  check_params_match(params, vocab);
  const std::size_t d = params.config.d_model;
  std::vector<EmbeddingRow> rows;
  for (SpaceId s = 1; s <= vocab.num_spaces(); ++s) {
    const auto& sp = vocab.space(s);
    const auto& table = params.table_for_space(s);
    for (std::size_t v = 0; v < sp.values.size(); ++v) {
      const TokenId tok = sp.offset + static_cast<TokenId>(kFirstValueSlot + v);
      const std::size_t row = params.config.shared_space ? vocab.shared_id(tok) : kFirstValueSlot + v;
      const T* e = table.data().data() + row * d;
      rows.push_back({sp.name, sp.values[v], std::vector<float>(e, e + d)});
    }
  }
  return rows;
}

template <class T>
void export_embeddings(const ModelParams<T>& params, const Vocabulary& vocab, const std::string& path) {
  write_embeddings(path, embedding_rows(params, vocab), params.config.shared_space, params.config.d_model);
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

}  // namespace relbert
