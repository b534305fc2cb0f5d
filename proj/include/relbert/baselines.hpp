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

// Table2Vec-style skip-gram over linearized rows. Uses the column-free view
// of the vocabulary, so one raw string gets one vector whatever its column.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relbert/checkpoint.hpp"
#include "relbert/corpus.hpp"
#include "relbert/error.hpp"
#include "relbert/eval.hpp"
#include "relbert/relational.hpp"
#include "relbert/util.hpp"

namespace relbert {

struct SkipGramConfig {
  std::size_t dim = 64;
  std::size_t window = 2;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  double noise_power = 0.75;
  bool full_softmax = false;
  std::uint64_t seed = 0;
  std::size_t depth = 0;

  void validate() const {
    if (window < 1) throw Error(ErrorCode::kInvalidArgument, "skip-gram window must be >= 1");
    if (dim < 1) throw Error(ErrorCode::kInvalidArgument, "skip-gram dim must be >= 1");
    if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "skip-gram epochs must be >= 1");
    if (!full_softmax && negatives < 1) throw Error(ErrorCode::kInvalidArgument, "negatives must be >= 1");
    if (!(lr > 0)) throw Error(ErrorCode::kInvalidArgument, "skip-gram lr must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const SkipGramConfig& c) {
  j = nlohmann::json{{"dim", c.dim},       {"window", c.window},           {"negatives", c.negatives},
                     {"epochs", c.epochs}, {"lr", c.lr},                   {"noise_power", c.noise_power},
                     {"full_softmax", c.full_softmax}, {"seed", c.seed}, {"depth", c.depth}};
}

inline void from_json(const nlohmann::json& j, SkipGramConfig& c) {
  c.dim = j.value("dim", c.dim);
  c.window = j.value("window", c.window);
  c.negatives = j.value("negatives", c.negatives);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.noise_power = j.value("noise_power", c.noise_power);
  c.full_softmax = j.value("full_softmax", c.full_softmax);
  c.seed = j.value("seed", c.seed);
  c.depth = j.value("depth", c.depth);
}

struct SkipGramParams {
  SkipGramConfig config;
  std::size_t vocab_size = 0;
  std::vector<float> in_vectors;   // [vocab_size, dim]
  std::vector<float> out_vectors;  // [vocab_size, dim]

  std::span<const float> in(std::size_t id) const { return {in_vectors.data() + id * config.dim, config.dim}; }
  std::span<const float> out(std::size_t id) const { return {out_vectors.data() + id * config.dim, config.dim}; }
};

using TokenSequence = std::vector<std::uint32_t>;

// Shared ids of a serialized row, specials and unknowns dropped.
inline TokenSequence linearize(const Sentence& s, const Vocabulary& vocab) {
  TokenSequence out;
  for (auto t : s.tokens) {
    const auto id = vocab.shared_id(t);
    if (id >= special::kCount) out.push_back(id);
  }
  return out;
}

inline std::vector<TokenSequence> linearize_rows(const Database& db, const Vocabulary& vocab, std::size_t depth) {
  std::vector<TokenSequence> corpus;
  for (std::size_t t = 0; t < db.schema().tables.size(); ++t) {
    for (std::size_t r = 0; r < db.row_count(t); ++r) {
      auto seq = linearize(serialize_row(db, vocab, t, r, depth), vocab);
      if (!seq.empty()) corpus.push_back(std::move(seq));
    }
  }
  return corpus;
}

// (input, context) pairs within `window` positions.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> context_pairs(const TokenSequence& seq,
                                                                          std::size_t window) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const std::size_t lo = i >= window ? i - window : 0;
    const std::size_t hi = std::min(seq.size() - 1, i + window);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j != i) pairs.emplace_back(seq[i], seq[j]);
    }
  }
  return pairs;
}

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cumulative unigram^power distribution over shared ids.
inline std::vector<double> noise_cdf(const std::vector<TokenSequence>& corpus, std::size_t vocab_size, double power) {
  std::vector<double> freq(vocab_size, 0.0);
  for (const auto& seq : corpus) {
    for (auto id : seq) freq[id] += 1;
  }
  std::vector<double> cdf(vocab_size, 0.0);
  double acc = 0;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    acc += freq[i] > 0 ? std::pow(freq[i], power) : 0.0;
    cdf[i] = acc;
  }
  for (auto& c : cdf) c /= acc;
  return cdf;
}

inline std::uint32_t sample_noise(const std::vector<double>& cdf, Rng& rng) {
  const double u = uniform_unit(rng);
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<std::uint32_t>(it - cdf.begin());
}

}  // namespace detail

// Mean over positions t and offsets 0 < |j| <= window of
// log p(w_{t+j} | w_t), with p the softmax of out . in over the vocabulary.
inline double average_log_probability(const SkipGramParams& p, const std::vector<TokenSequence>& corpus) {
  double total = 0;
  std::size_t positions = 0;
  std::vector<double> logits(p.vocab_size);
  for (const auto& seq : corpus) {
    positions += seq.size();
    for (const auto& [input, context] : context_pairs(seq, p.config.window)) {
      double mx = -INFINITY;
      for (std::size_t w = special::kCount; w < p.vocab_size; ++w) {
        logits[w] = detail::dot(p.out(w), p.in(input));
        mx = std::max(mx, logits[w]);
      }
      double z = 0;
      for (std::size_t w = special::kCount; w < p.vocab_size; ++w) z += std::exp(logits[w] - mx);
      total += logits[context] - mx - std::log(z);
    }
  }
  return positions ? total / static_cast<double>(positions) : 0.0;
}

// Plain SGD with linearly decaying rate. Each positive (input, context) pair
// updates against `negatives` noise words, or the full softmax when
// config.full_softmax is set.
using SkipGramEpochCallback = std::function<void(std::size_t epoch, double loss, const SkipGramParams& params)>;

inline SkipGramParams train_skipgram(const Database& db, const Vocabulary& vocab, const SkipGramConfig& config,
                                     const SkipGramEpochCallback& on_epoch = {}) {
  config.validate();
  const auto corpus = linearize_rows(db, vocab, config.depth);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (const auto& seq : corpus) {
    auto p = context_pairs(seq, config.window);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  if (pairs.empty()) throw Error(ErrorCode::kEmptyCorpus, "no co-occurring tokens to train on");

  SkipGramParams p;
  p.config = config;
  p.vocab_size = vocab.shared_size();
  const std::size_t d = config.dim;
  p.in_vectors.resize(p.vocab_size * d);
  p.out_vectors.assign(p.vocab_size * d, 0.0f);
  Rng init = derive_rng(config.seed, streams::kSkipGram, 0);
  for (auto& x : p.in_vectors) x = static_cast<float>((uniform_unit(init) - 0.5) / static_cast<double>(d));

  const auto cdf = detail::noise_cdf(corpus, p.vocab_size, config.noise_power);
  const double total_updates = static_cast<double>(config.epochs * pairs.size());
  std::size_t done = 0;
  std::vector<double> grad_in(d);
  std::vector<double> probs(p.vocab_size);

  auto update_pair = [&](std::uint32_t target, double label, float* in_vec, double lr) {
    float* out_vec = p.out_vectors.data() + target * d;
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(in_vec[k]) * out_vec[k];
    const double g = lr * (label - detail::sigmoid(s));
    for (std::size_t k = 0; k < d; ++k) {
      grad_in[k] += g * out_vec[k];
      out_vec[k] += static_cast<float>(g * in_vec[k]);
    }
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = derive_rng(config.seed, streams::kSkipGram, epoch + 1);
    auto order = pairs;
    shuffle_in_place(order, rng);
    double loss = 0;
    for (const auto& [input, context] : order) {
      const double lr = std::max(config.lr * (1.0 - static_cast<double>(done++) / total_updates), config.lr * 1e-4);
      float* in_vec = p.in_vectors.data() + input * d;
      std::fill(grad_in.begin(), grad_in.end(), 0.0);
      if (config.full_softmax) {
        double mx = -INFINITY;
        for (std::size_t w = special::kCount; w < p.vocab_size; ++w) {
          probs[w] = detail::dot(p.out(w), {in_vec, d});
          mx = std::max(mx, probs[w]);
        }
        double z = 0;
        for (std::size_t w = special::kCount; w < p.vocab_size; ++w) z += (probs[w] = std::exp(probs[w] - mx));
        loss -= std::log(probs[context] / z);
        for (std::size_t w = special::kCount; w < p.vocab_size; ++w) {
          const double g = lr * ((w == context ? 1.0 : 0.0) - probs[w] / z);
          float* out_vec = p.out_vectors.data() + w * d;
          for (std::size_t k = 0; k < d; ++k) {
            grad_in[k] += g * out_vec[k];
            out_vec[k] += static_cast<float>(g * in_vec[k]);
          }
        }
      } else {
        loss -= std::log(std::max(detail::sigmoid(detail::dot(p.out(context), {in_vec, d})), 1e-300));
        update_pair(context, 1.0, in_vec, lr);
        for (std::size_t n = 0; n < config.negatives; ++n) {
          const auto noise = detail::sample_noise(cdf, rng);
          if (noise == context) continue;
          update_pair(noise, 0.0, in_vec, lr);
        }
      }
      for (std::size_t k = 0; k < d; ++k) in_vec[k] += static_cast<float>(grad_in[k]);
    }
    if (on_epoch) on_epoch(epoch, loss / static_cast<double>(pairs.size()), p);
  }
  return p;
}

// Candidates are the values of the target column's space; each scores the
// mean cosine between its in-vector and those of the row's observed tokens
// (the target cell excluded). Best first; ties by ascending local id.
inline std::vector<ScoredValue> skipgram_rank(const SkipGramParams& p, const Vocabulary& vocab, const Database& db,
                                              std::size_t table, std::size_t row, std::size_t column) {
  const auto& schema = db.schema();
  if (table >= schema.tables.size() || column >= schema.tables[table].columns.size()) {
    throw Error(ErrorCode::kUnknownColumn, "no column " + std::to_string(column) + " in table " + std::to_string(table));
  }
  const SpaceId sp = vocab.space_of(ColumnRef{table, column});
  const auto masked = serialize_row_masked(db, vocab, table, row, column, p.config.depth);
  const auto observed = linearize(masked.sentence, vocab);
  const auto& space = vocab.space(sp);
  std::vector<ScoredValue> scored;
  for (std::size_t v = 0; v < space.values.size(); ++v) {
    const std::size_t local = kFirstValueSlot + v;
    const auto cand = vocab.shared_id(space.offset + static_cast<TokenId>(local));
    double s = 0;
    for (auto o : observed) s += cosine(p.in(cand), p.in(o));
    if (!observed.empty()) s /= static_cast<double>(observed.size());
    scored.push_back({local, s});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredValue& a, const ScoredValue& b) {
    return a.score > b.score || (a.score == b.score && a.local < b.local);
  });
  return scored;
}

inline MviRanker skipgram_ranker(const SkipGramParams& p, const Vocabulary& vocab, const Database& db) {
  return [&p, &vocab, &db](std::span<const MviQuery> queries) {
    std::vector<std::vector<std::size_t>> rankings;
    for (const auto& q : queries) {
      std::vector<std::size_t> r;
      for (const auto& s : skipgram_rank(p, vocab, db, q.table, q.row, q.column)) r.push_back(s.local);
      rankings.push_back(std::move(r));
    }
    return rankings;
  };
}

inline std::vector<EmbeddingRow> embedding_rows(const SkipGramParams& p, const Vocabulary& vocab) {
  std::vector<EmbeddingRow> rows;
  for (SpaceId s = 1; s <= vocab.num_spaces(); ++s) {
    const auto& sp = vocab.space(s);
    for (std::size_t v = 0; v < sp.values.size(); ++v) {
      const auto id = vocab.shared_id(sp.offset + static_cast<TokenId>(kFirstValueSlot + v));
      const auto e = p.in(id);
      rows.push_back({sp.name, sp.values[v], std::vector<float>(e.begin(), e.end())});
    }
  }
  return rows;
}

inline void export_embeddings(const SkipGramParams& p, const Vocabulary& vocab, const std::string& path) {
  write_embeddings(path, embedding_rows(p, vocab), true, p.config.dim);
}

inline void save_skipgram(const std::string& path, const SkipGramParams& p, const Vocabulary& vocab) {
  CheckpointData ck;
  ck.meta["kind"] = "table2vec";
  ck.meta["skipgram"] = p.config;
  ck.vocab_text = vocab.serialize();
  ck.vocab_digest = vocab.digest();
  ck.blobs.push_back({"skipgram.in", {p.vocab_size, p.config.dim}, p.in_vectors});
  ck.blobs.push_back({"skipgram.out", {p.vocab_size, p.config.dim}, p.out_vectors});
  write_checkpoint(path, ck);
}

inline SkipGramParams restore_skipgram(const CheckpointData& ck, const Vocabulary& vocab) {
  SkipGramParams p;
  p.config = ck.meta.at("skipgram").get<SkipGramConfig>();
  p.vocab_size = vocab.shared_size();
  const Shape expected{p.vocab_size, p.config.dim};
  for (auto [name, dest] : {std::pair{"skipgram.in", &p.in_vectors}, std::pair{"skipgram.out", &p.out_vectors}}) {
    const auto* blob = ck.find(name);
    if (!blob || blob->shape != expected) {
      throw Error(ErrorCode::kCheckpointFormat, std::string("missing or misshapen tensor '") + name + "'");
    }
    *dest = blob->data;
  }
  return p;
}

}  // namespace relbert
