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

// The column-aware transformer encoder: one embedding table per column space
// (or one shared table for the shared-space ablation), a post-norm encoder
// stack, MLM heads tied to the column tables, and an NSP head over [CLS].

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relbert/corpus.hpp"
#include "relbert/error.hpp"
#include "relbert/tensor.hpp"
#include "relbert/util.hpp"

namespace relbert {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ff_dim = 256;
  std::size_t max_len = kDefaultMaxLength;
  bool shared_space = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || ff_dim < 1 || max_len < 1) {
      throw Error(ErrorCode::kInvalidArgument, "model dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
      throw Error(ErrorCode::kInvalidArgument, "d_model " + std::to_string(d_model) +
                                                   " is not divisible by n_heads " + std::to_string(n_heads));
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr double kInitStddev = 0.02;
inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct EncoderLayerParams {
  BasicTensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  BasicTensor<T> norm1_gain, norm1_bias;
  BasicTensor<T> ff1_w, ff1_b, ff2_w, ff2_b;
  BasicTensor<T> norm2_gain, norm2_bias;
};

template <class T>
struct ModelParams {
  ModelConfig config;
  BasicTensor<T> special_table;               // [specials, d]; unused under shared_space
  std::vector<BasicTensor<T>> column_tables;  // index space - 1; a single shared table under shared_space
  std::vector<BasicTensor<T>> column_biases;  // MLM output bias, parallel to column_tables
  BasicTensor<T> position_table;              // [max_len, d]
  BasicTensor<T> segment_table;               // [2, d]
  std::vector<EncoderLayerParams<T>> layers;
  BasicTensor<T> nsp_weight;  // [d, 2]
  BasicTensor<T> nsp_bias;    // [2]

  // Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, BasicTensor<T>>> named() const {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    if (!config.shared_space) out.emplace_back("embed.special", special_table);
    for (std::size_t i = 0; i < column_tables.size(); ++i) {
      const std::string id = config.shared_space ? "shared" : "column." + std::to_string(i + 1);
      out.emplace_back("embed." + id, column_tables[i]);
      out.emplace_back("mlm_bias." + id, column_biases[i]);
    }
    out.emplace_back("embed.position", position_table);
    out.emplace_back("embed.segment", segment_table);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      out.emplace_back(p + "wq", L.wq);
      out.emplace_back(p + "bq", L.bq);
      out.emplace_back(p + "wk", L.wk);
      out.emplace_back(p + "bk", L.bk);
      out.emplace_back(p + "wv", L.wv);
      out.emplace_back(p + "bv", L.bv);
      out.emplace_back(p + "wo", L.wo);
      out.emplace_back(p + "bo", L.bo);
      out.emplace_back(p + "norm1.gain", L.norm1_gain);
      out.emplace_back(p + "norm1.bias", L.norm1_bias);
      out.emplace_back(p + "ff1.w", L.ff1_w);
      out.emplace_back(p + "ff1.b", L.ff1_b);
      out.emplace_back(p + "ff2.w", L.ff2_w);
      out.emplace_back(p + "ff2.b", L.ff2_b);
      out.emplace_back(p + "norm2.gain", L.norm2_gain);
      out.emplace_back(p + "norm2.bias", L.norm2_bias);
    }
    out.emplace_back("nsp.weight", nsp_weight);
    out.emplace_back("nsp.bias", nsp_bias);
    return out;
  }

  // Embedding matrix (and MLM bias) scoring tokens of column space `s`.
  const BasicTensor<T>& table_for_space(SpaceId s) const {
    return config.shared_space ? column_tables.at(0) : column_tables.at(s - 1);
  }
  const BasicTensor<T>& bias_for_space(SpaceId s) const {
    return config.shared_space ? column_biases.at(0) : column_biases.at(s - 1);
  }

  // Every parameter gets an all-zero gradient, so tensors untouched by a
  // batch still take part in the optimizer step.
  void zero_grad() {
    for (auto& [name, t] : named()) {
      auto tensor = t;
      tensor.grad();
      tensor.zero_grad();
    }
  }
};

namespace detail {

template <class T>
BasicTensor<T> normal_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<T> data(rows * cols);
  for (auto& v : data) v = static_cast<T>(kInitStddev * standard_normal(rng));
  return BasicTensor<T>::from_data({rows, cols}, std::move(data), true);
}

template <class T>
BasicTensor<T> filled(std::size_t n, T value) {
  return BasicTensor<T>::from_data({n}, std::vector<T>(n, value), true);
}

}  // namespace detail

// Matrices ~ Normal(0, 0.02^2); biases 0; norm gains 1. Deterministic in
// config.seed.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, const Vocabulary& vocab) {
  config.validate();
  Rng rng = derive_rng(config.seed, streams::kInit);
  ModelParams<T> p;
  p.config = config;
  const std::size_t d = config.d_model;
  if (config.shared_space) {
    p.column_tables.push_back(detail::normal_matrix<T>(rng, vocab.shared_size(), d));
    p.column_biases.push_back(detail::filled<T>(vocab.shared_size(), T(0)));
  } else {
    p.special_table = detail::normal_matrix<T>(rng, special::kCount, d);
    for (SpaceId s = 1; s <= vocab.num_spaces(); ++s) {
      p.column_tables.push_back(detail::normal_matrix<T>(rng, vocab.space(s).size(), d));
      p.column_biases.push_back(detail::filled<T>(vocab.space(s).size(), T(0)));
    }
  }
  p.position_table = detail::normal_matrix<T>(rng, config.max_len, d);
  p.segment_table = detail::normal_matrix<T>(rng, 2, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    EncoderLayerParams<T> L;
    L.wq = detail::normal_matrix<T>(rng, d, d);
    L.bq = detail::filled<T>(d, T(0));
    L.wk = detail::normal_matrix<T>(rng, d, d);
    L.bk = detail::filled<T>(d, T(0));
    L.wv = detail::normal_matrix<T>(rng, d, d);
    L.bv = detail::filled<T>(d, T(0));
    L.wo = detail::normal_matrix<T>(rng, d, d);
    L.bo = detail::filled<T>(d, T(0));
    L.norm1_gain = detail::filled<T>(d, T(1));
    L.norm1_bias = detail::filled<T>(d, T(0));
    L.ff1_w = detail::normal_matrix<T>(rng, d, config.ff_dim);
    L.ff1_b = detail::filled<T>(config.ff_dim, T(0));
    L.ff2_w = detail::normal_matrix<T>(rng, config.ff_dim, d);
    L.ff2_b = detail::filled<T>(d, T(0));
    L.norm2_gain = detail::filled<T>(d, T(1));
    L.norm2_bias = detail::filled<T>(d, T(0));
    p.layers.push_back(std::move(L));
  }
  p.nsp_weight = detail::normal_matrix<T>(rng, d, 2);
  p.nsp_bias = detail::filled<T>(2, T(0));
  return p;
}

// Deep copy with the scalar type converted (e.g. float -> double for
// gradient checks).
template <class U, class T>
ModelParams<U> cast_params(const ModelParams<T>& src) {
  auto conv = [](const BasicTensor<T>& t) {
    if (!t.defined()) return BasicTensor<U>();
    std::vector<U> data(t.data().begin(), t.data().end());
    return BasicTensor<U>::from_data(t.shape(), std::move(data), true);
  };
  ModelParams<U> p;
  p.config = src.config;
  p.special_table = conv(src.special_table);
  for (const auto& t : src.column_tables) p.column_tables.push_back(conv(t));
  for (const auto& t : src.column_biases) p.column_biases.push_back(conv(t));
  p.position_table = conv(src.position_table);
  p.segment_table = conv(src.segment_table);
  for (const auto& L : src.layers) {
    p.layers.push_back({conv(L.wq), conv(L.bq), conv(L.wk), conv(L.bk), conv(L.wv), conv(L.bv), conv(L.wo),
                        conv(L.bo), conv(L.norm1_gain), conv(L.norm1_bias), conv(L.ff1_w), conv(L.ff1_b),
                        conv(L.ff2_w), conv(L.ff2_b), conv(L.norm2_gain), conv(L.norm2_bias)});
  }
  p.nsp_weight = conv(src.nsp_weight);
  p.nsp_bias = conv(src.nsp_bias);
  return p;
}

template <class T>
ModelParams<T> clone_params(const ModelParams<T>& src) {
  return cast_params<T>(src);
}

// Digest of every parameter value, in named() order.
template <class T>
std::uint64_t parameter_digest(const ModelParams<T>& params) {
  Fnv1a h;
  for (const auto& [name, t] : params.named()) {
    h.update(name);
    h.update(std::string_view(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(T)));
  }
  return h.digest();
}

// output[t] = column_table[space(t)][local(t)] + position[pos(t)] + segment[seg(t)]
// Under shared_space the first term looks up the token's raw string instead.
template <class T>
BasicTensor<T> embed(const MaskedBatch& batch, const ModelParams<T>& params, const Vocabulary& vocab) {
  const std::size_t n = batch.batch * batch.length;
  if (batch.length > params.config.max_len) {
    throw Error(ErrorCode::kSentenceTooLong, "batch length " + std::to_string(batch.length) +
                                                 " exceeds max_len " + std::to_string(params.config.max_len));
  }
  std::vector<TableRow> refs(n);
  std::vector<std::size_t> positions(n), segments(n);
  std::vector<BasicTensor<T>> tables;
  if (params.config.shared_space) {
    tables.push_back(params.column_tables.at(0));
  } else {
    tables.push_back(params.special_table);
    tables.insert(tables.end(), params.column_tables.begin(), params.column_tables.end());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId tok = batch.tokens[i];
    const SpaceId tag = batch.column_tags[i];
    const SpaceId actual = vocab.space_of_token(tok);
    if (actual != tag) {
      throw Error(ErrorCode::kUnknownSpace, "token " + std::to_string(tok) + " is not in column space " +
                                                std::to_string(tag));
    }
    if (params.config.shared_space) {
      refs[i] = {0, vocab.shared_id(tok)};
    } else {
      if (tag != kSpecialSpace && tag > params.column_tables.size()) {
        throw Error(ErrorCode::kUnknownSpace, "model has no table for space " + std::to_string(tag));
      }
      refs[i] = {tag, vocab.local_of(tok)};
    }
    positions[i] = i % batch.length;
    segments[i] = batch.segments[i];
  }
  auto tokens = embedding_gather_multi(tables, std::move(refs));
  auto pos = embedding_gather(params.position_table, std::move(positions));
  auto seg = embedding_gather(params.segment_table, std::move(segments));
  return add(add(tokens, pos), seg);
}

template <class T>
struct ForwardResult {
  BasicTensor<T> hidden;  // [batch, length, d_model]
  BasicTensor<T> cls;     // [batch, d_model]
  std::size_t degenerate_rows = 0;
};

// n_layers of post-norm blocks: LN(x + MHA(x)), then LN(x + FF(x)) with GELU.
template <class T>
ForwardResult<T> forward(const MaskedBatch& batch, const ModelParams<T>& params, const Vocabulary& vocab) {
  const auto& cfg = params.config;
  const T eps = static_cast<T>(kLayerNormEps);
  BasicTensor<T> x = embed(batch, params, vocab);
  std::size_t degenerate = 0;
  for (const auto& L : params.layers) {
    auto q = add_bias(matmul(x, L.wq), L.bq);
    auto k = add_bias(matmul(x, L.wk), L.bk);
    auto v = add_bias(matmul(x, L.wv), L.bv);
    auto att = attention(q, k, v, batch.attention_mask, batch.batch, batch.length, cfg.n_heads);
    degenerate += att.degenerate_rows;
    auto o = add_bias(matmul(att.output, L.wo), L.bo);
    x = layer_norm(add(x, o), L.norm1_gain, L.norm1_bias, eps);
    auto f = add_bias(matmul(gelu(add_bias(matmul(x, L.ff1_w), L.ff1_b)), L.ff2_w), L.ff2_b);
    x = layer_norm(add(x, f), L.norm2_gain, L.norm2_bias, eps);
  }
  std::vector<std::size_t> cls_rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) cls_rows[b] = b * batch.length;
  ForwardResult<T> out;
  out.cls = gather_rows(x, std::move(cls_rows));
  out.hidden = reshape(x, {batch.batch, batch.length, cfg.d_model});
  out.degenerate_rows = degenerate;
  return out;
}

template <class T>
struct LossTerms {
  BasicTensor<T> mlm;
  BasicTensor<T> nsp;
  BasicTensor<T> total;
};

struct LossBreakdown {
  double mlm = 0;
  double nsp = 0;
  double total = 0;
};

template <class T>
LossBreakdown breakdown(const LossTerms<T>& terms) {
  return {static_cast<double>(terms.mlm.item()), static_cast<double>(terms.nsp.item()),
          static_cast<double>(terms.total.item())};
}

// mlm: mean cross-entropy over masked positions, each scored against its own
// column space only; nsp: cross-entropy of the [CLS] head; total = mlm + nsp.
template <class T>
LossTerms<T> compute_loss(const MaskedBatch& batch, const ModelParams<T>& params, const Vocabulary& vocab,
                          const ForwardResult<T>& fwd) {
  const std::size_t masked = batch.masked_count();
  if (masked == 0) throw Error(ErrorCode::kNoMaskedPositions, "batch has no masked positions");
  for (int label : batch.nsp_labels) {
    if (label != 0 && label != 1) throw Error(ErrorCode::kInvalidArgument, "batch lacks NSP labels");
  }

  // Group masked rows by scoring space.
  std::map<SpaceId, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const auto& positions = batch.mask_positions[b];
    const auto& targets = batch.mlm_targets[b];
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const std::size_t row = b * batch.length + positions[i];
      const SpaceId tag = batch.column_tags[row];
      if (params.config.shared_space) {
        auto& g = groups[0];
        g.first.push_back(row);
        g.second.push_back(vocab.shared_id(targets[i]));
      } else {
        if (vocab.space_of_token(targets[i]) != tag) {
          throw Error(ErrorCode::kUnknownSpace, "MLM target outside its column space");
        }
        auto& g = groups[tag];
        g.first.push_back(row);
        g.second.push_back(vocab.local_of(targets[i]));
      }
    }
  }
  BasicTensor<T> mlm_sum;
  for (auto& [space, rows_targets] : groups) {
    const auto& table = params.config.shared_space ? params.column_tables.at(0) : params.column_tables.at(space - 1);
    const auto& bias = params.config.shared_space ? params.column_biases.at(0) : params.column_biases.at(space - 1);
    auto h = gather_rows(fwd.hidden, rows_targets.first);
    auto logits = add_bias(matmul(h, transpose(table)), bias);
    auto part = cross_entropy(logits, rows_targets.second, Reduction::kSum);
    mlm_sum = mlm_sum.defined() ? add(mlm_sum, part) : part;
  }
  LossTerms<T> out;
  out.mlm = scale(mlm_sum, T(1) / static_cast<T>(masked));

  std::vector<std::size_t> labels(batch.nsp_labels.begin(), batch.nsp_labels.end());
  auto nsp_logits = add_bias(matmul(fwd.cls, params.nsp_weight), params.nsp_bias);
  out.nsp = cross_entropy(nsp_logits, std::move(labels), Reduction::kMean);
  out.total = add(out.mlm, out.nsp);
  return out;
}

template <class T>
LossTerms<T> compute_loss(const MaskedBatch& batch, const ModelParams<T>& params, const Vocabulary& vocab) {
  return compute_loss(batch, params, vocab, forward(batch, params, vocab));
}

struct ScoredValue {
  std::size_t local = 0;  // local id inside the column space (>= kFirstValueSlot)
  double score = 0;
};

// MLM-head logits of one hidden vector over the values of one column space,
// sorted by descending score, ties by ascending local id.
template <class T>
std::vector<ScoredValue> score_column(std::span<const T> hidden, const ModelParams<T>& params,
                                      const Vocabulary& vocab, SpaceId space) {
  const auto& sp = vocab.space(space);
  const auto& table = params.table_for_space(space);
  const auto& bias = params.bias_for_space(space);
  const std::size_t d = params.config.d_model;
  if (hidden.size() != d) throw Error(ErrorCode::kShapeMismatch, "score_column: hidden width mismatch");
  std::vector<ScoredValue> out;
  out.reserve(sp.values.size());
  for (std::size_t v = 0; v < sp.values.size(); ++v) {
    const std::size_t local = kFirstValueSlot + v;
    const std::size_t row = params.config.shared_space ? vocab.shared_id(sp.offset + static_cast<TokenId>(local))
                                                       : local;
    const T* e = table.data().data() + row * d;
    double s = static_cast<double>(bias[row]);
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(hidden[j]) * static_cast<double>(e[j]);
    out.push_back({local, s});
  }
  std::stable_sort(out.begin(), out.end(), [](const ScoredValue& a, const ScoredValue& b) {
    return a.score != b.score ? a.score > b.score : a.local < b.local;
  });
  return out;
}

}  // namespace relbert
