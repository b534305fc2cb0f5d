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

// Training stream construction: per-column vocabularies, tuple-as-sentence
// serialization, NSP pair sampling, MLM corruption and padded batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relbert/error.hpp"
#include "relbert/relational.hpp"
#include "relbert/util.hpp"

namespace relbert {

using TokenId = std::uint32_t;
using SpaceId = std::uint32_t;

// Column tag of [PAD], [CLS] and [SEP]. Column spaces are numbered from 1.
inline constexpr SpaceId kSpecialSpace = 0;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kCount = 5;
inline constexpr std::string_view kNames[] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};
}  // namespace special

// Local slots inside every column space.
inline constexpr std::size_t kUnkSlot = 0;
inline constexpr std::size_t kMaskSlot = 1;
inline constexpr std::size_t kFirstValueSlot = 2;

struct ColumnSpace {
  ColumnRef column;
  std::string name;  // "<table>.<column>"
  TokenId offset = 0;
  std::vector<std::string> values;  // local id kFirstValueSlot + i
  std::vector<std::size_t> counts;
  std::unordered_map<std::string, std::size_t> index;  // value -> local id

  std::size_t size() const { return kFirstValueSlot + values.size(); }
  std::size_t value_count() const { return values.size(); }
};

inline std::vector<std::string> cell_tokens(const SchemaSet& schema, ColumnRef ref, const std::string& raw) {
  if (!schema.is_multi_label(ref)) return {raw};
  std::vector<std::string> out;
  for (auto& part : split(raw, kLabelSeparator)) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

inline std::string escape_field(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string unescape_field(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out.push_back(n == 't' ? '\t' : n == 'n' ? '\n' : n == 'r' ? '\r' : n);
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

class Vocabulary {
 public:
  std::size_t min_count() const { return min_count_; }
  std::size_t num_spaces() const { return spaces_.size(); }
  TokenId total_size() const {
    return spaces_.empty() ? special::kCount : static_cast<TokenId>(spaces_.back().offset + spaces_.back().size());
  }

  const ColumnSpace& space(SpaceId s) const {
    if (s == kSpecialSpace || s > spaces_.size()) {
      throw Error(ErrorCode::kUnknownSpace, "no column space " + std::to_string(s));
    }
    return spaces_[s - 1];
  }

  SpaceId space_of(ColumnRef ref) const {
    auto it = by_column_.find(ref);
    if (it == by_column_.end()) {
      throw Error(ErrorCode::kUnknownSpace,
                  "no space for column " + std::to_string(ref.table) + ":" + std::to_string(ref.column));
    }
    return it->second;
  }

  std::optional<SpaceId> find_space(std::string_view qualified) const {
    for (std::size_t i = 0; i < spaces_.size(); ++i) {
      if (spaces_[i].name == qualified) return static_cast<SpaceId>(i + 1);
    }
    return std::nullopt;
  }

  TokenId unk(SpaceId s) const { return space(s).offset + kUnkSlot; }
  TokenId mask(SpaceId s) const { return space(s).offset + kMaskSlot; }

  // Local id of `value` in space `s`, if it is in the vocabulary.
  std::optional<std::size_t> local_value(SpaceId s, std::string_view value) const {
    const auto& sp = space(s);
    auto it = sp.index.find(std::string(value));
    if (it == sp.index.end()) return std::nullopt;
    return it->second;
  }

  TokenId encode(SpaceId s, std::string_view value) const {
    auto local = local_value(s, value);
    return space(s).offset + static_cast<TokenId>(local.value_or(kUnkSlot));
  }

  bool is_special(TokenId t) const { return t < special::kCount; }

  SpaceId space_of_token(TokenId t) const {
    if (t >= total_size()) throw Error(ErrorCode::kUnknownSpace, "token id " + std::to_string(t) + " out of range");
    if (is_special(t)) return kSpecialSpace;
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), t);
    return static_cast<SpaceId>(it - offsets_.begin());
  }

  std::size_t local_of(TokenId t) const {
    const SpaceId s = space_of_token(t);
    return s == kSpecialSpace ? t : t - space(s).offset;
  }

  struct Decoded {
    SpaceId space;
    std::size_t local;
    std::string value;
  };

  Decoded decode(TokenId t) const {
    const SpaceId s = space_of_token(t);
    if (s == kSpecialSpace) return {s, t, std::string(special::kNames[t])};
    const auto& sp = space(s);
    const std::size_t local = t - sp.offset;
    if (local == kUnkSlot) return {s, local, "[UNK]"};
    if (local == kMaskSlot) return {s, local, "[MASK]"};
    return {s, local, sp.values[local - kFirstValueSlot]};
  }

  // Column-free view: one id per distinct raw string, specials first. Column
  // [UNK]/[MASK] slots fold onto the shared ones.
  std::size_t shared_size() const { return shared_strings_.size(); }
  std::uint32_t shared_id(TokenId t) const { return shared_of_global_.at(t); }
  const std::string& shared_string(std::uint32_t id) const { return shared_strings_.at(id); }

  const std::vector<std::string>& empty_columns() const { return empty_columns_; }
  const std::vector<std::size_t>& table_rows() const { return table_rows_; }

  // Canonical text form; also the digest input and the checkpoint payload.
  std::string serialize() const {
    std::ostringstream out;
    out << "relbert-vocab 1\n";
    out << "min_count " << min_count_ << "\n";
    out << "tables";
    for (auto r : table_rows_) out << " " << r;
    out << "\n";
    for (const auto& sp : spaces_) {
      out << "space " << sp.column.table << " " << sp.column.column << " " << sp.values.size() << " "
          << escape_field(sp.name) << "\n";
      for (std::size_t i = 0; i < sp.values.size(); ++i) {
        out << escape_field(sp.values[i]) << "\t" << sp.counts[i] << "\n";
      }
    }
    return out.str();
  }

  static Vocabulary deserialize(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    auto bad = [](const std::string& what) { throw Error(ErrorCode::kCheckpointFormat, "vocabulary: " + what); };
    if (!std::getline(in, line) || line != "relbert-vocab 1") bad("bad header");
    Vocabulary v;
    if (!std::getline(in, line) || line.rfind("min_count ", 0) != 0) bad("missing min_count");
    v.min_count_ = std::stoull(line.substr(10));
    if (!std::getline(in, line) || line.rfind("tables", 0) != 0) bad("missing tables");
    {
      std::istringstream ts(line.substr(6));
      for (std::size_t r; ts >> r;) v.table_rows_.push_back(r);
    }
    while (std::getline(in, line)) {
      if (line.rfind("space ", 0) != 0) bad("expected space line");
      std::istringstream hs(line.substr(6));
      ColumnSpace sp;
      std::size_t n = 0;
      hs >> sp.column.table >> sp.column.column >> n;
      std::string name;
      hs >> name;
      sp.name = unescape_field(name);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) bad("truncated space " + sp.name);
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) bad("bad value line");
        sp.values.push_back(unescape_field(line.substr(0, tab)));
        sp.counts.push_back(std::stoull(line.substr(tab + 1)));
      }
      v.spaces_.push_back(std::move(sp));
    }
    v.finalize();
    return v;
  }

  std::uint64_t digest() const {
    Fnv1a h;
    h.update(serialize());
    return h.digest();
  }

  // `<table>.<column>\t<value>\t<global_id>` per in-vocabulary value.
  std::string export_text() const {
    std::ostringstream out;
    for (const auto& sp : spaces_) {
      for (std::size_t i = 0; i < sp.values.size(); ++i) {
        out << sp.name << "\t" << escape_field(sp.values[i]) << "\t" << sp.offset + kFirstValueSlot + i << "\n";
      }
    }
    return out.str();
  }

 private:
  friend Vocabulary build_vocab(const Database& db, std::size_t min_count);

  void finalize() {
    TokenId next = special::kCount;
    offsets_.clear();
    by_column_.clear();
    empty_columns_.clear();
    for (std::size_t i = 0; i < spaces_.size(); ++i) {
      auto& sp = spaces_[i];
      sp.offset = next;
      offsets_.push_back(next);
      sp.index.clear();
      for (std::size_t v = 0; v < sp.values.size(); ++v) sp.index.emplace(sp.values[v], kFirstValueSlot + v);
      by_column_.emplace(sp.column, static_cast<SpaceId>(i + 1));
      next += static_cast<TokenId>(sp.size());
    }

    std::vector<std::string> strings;
    for (const auto& sp : spaces_) strings.insert(strings.end(), sp.values.begin(), sp.values.end());
    std::sort(strings.begin(), strings.end());
    strings.erase(std::unique(strings.begin(), strings.end()), strings.end());
    shared_strings_.clear();
    for (auto name : special::kNames) shared_strings_.emplace_back(name);
    std::unordered_map<std::string, std::uint32_t> shared_index;
    for (auto& s : strings) {
      shared_index.emplace(s, static_cast<std::uint32_t>(shared_strings_.size()));
      shared_strings_.push_back(s);
    }
    shared_of_global_.assign(next, 0);
    for (TokenId t = 0; t < special::kCount; ++t) shared_of_global_[t] = t;
    for (const auto& sp : spaces_) {
      shared_of_global_[sp.offset + kUnkSlot] = special::kUnk;
      shared_of_global_[sp.offset + kMaskSlot] = special::kMask;
      for (std::size_t v = 0; v < sp.values.size(); ++v) {
        shared_of_global_[sp.offset + kFirstValueSlot + v] = shared_index.at(sp.values[v]);
      }
    }
  }

  std::size_t min_count_ = 1;
  std::vector<std::size_t> table_rows_;
  std::vector<ColumnSpace> spaces_;
  std::vector<TokenId> offsets_;
  std::map<ColumnRef, SpaceId> by_column_;
  std::vector<std::string> empty_columns_;
  std::vector<std::string> shared_strings_;
  std::vector<std::uint32_t> shared_of_global_;
};

// One space per (table, column) in schema order. Values with frequency >=
// min_count get ids by descending frequency, then lexicographically; rarer
// values and Missing map to the column's [UNK]. Columns without any
// non-missing value are listed in empty_columns().
inline Vocabulary build_vocab(const Database& db, std::size_t min_count) {
  if (min_count < 1) throw Error(ErrorCode::kInvalidArgument, "min_count must be >= 1");
  const auto& schema = db.schema();
  Vocabulary v;
  v.min_count_ = min_count;
  for (std::size_t t = 0; t < schema.tables.size(); ++t) {
    v.table_rows_.push_back(db.row_count(t));
    const auto& ts = schema.tables[t];
    for (std::size_t c = 0; c < ts.columns.size(); ++c) {
      const ColumnRef ref{t, c};
      std::unordered_map<std::string, std::size_t> freq;
      std::size_t non_missing = 0;
      for (const auto& row : db.relation(t).rows) {
        if (!row[c]) continue;
        ++non_missing;
        for (auto& tok : cell_tokens(schema, ref, *row[c])) ++freq[tok];
      }
      std::vector<std::pair<std::string, std::size_t>> kept;
      for (auto& [value, n] : freq) {
        if (n >= min_count) kept.emplace_back(value, n);
      }
      std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
      });
      ColumnSpace sp;
      sp.column = ref;
      sp.name = schema.qualified_name(ref);
      for (auto& [value, n] : kept) {
        sp.values.push_back(value);
        sp.counts.push_back(n);
      }
      v.spaces_.push_back(std::move(sp));
      if (non_missing == 0) v.empty_columns_.push_back(schema.qualified_name(ref));
    }
  }
  auto empty = v.empty_columns_;
  v.finalize();
  v.empty_columns_ = std::move(empty);
  return v;
}

struct Sentence {
  std::vector<TokenId> tokens;
  std::vector<SpaceId> column_tags;
  std::vector<std::uint8_t> segments;
  std::size_t table = 0;
  std::size_t row = 0;

  std::size_t size() const { return tokens.size(); }
  void push(TokenId token, SpaceId tag, std::uint8_t segment = 0) {
    tokens.push_back(token);
    column_tags.push_back(tag);
    segments.push_back(segment);
  }
};

struct MaskedCellSentence {
  Sentence sentence;
  std::size_t position = 0;  // index of the [MASK] that replaced the cell
};

namespace detail {

inline Sentence serialize_expanded(const Database& db, const Vocabulary& vocab, const ExpandedTuple& tuple,
                                   std::optional<std::size_t> mask_root_column, std::size_t* mask_position) {
  Sentence s;
  s.table = tuple.table;
  s.row = tuple.row;
  s.push(special::kCls, kSpecialSpace);
  const std::size_t root_arity = db.schema().tables[tuple.table].columns.size();
  for (std::size_t i = 0; i < tuple.cells.size(); ++i) {
    const auto& cell = tuple.cells[i];
    const SpaceId sp = vocab.space_of(cell.column);
    if (mask_root_column && i < root_arity && cell.column.column == *mask_root_column) {
      if (mask_position) *mask_position = s.size();
      s.push(vocab.mask(sp), sp);
      continue;
    }
    if (!cell.value) {
      s.push(vocab.unk(sp), sp);
      continue;
    }
    const auto parts = cell_tokens(db.schema(), cell.column, *cell.value);
    if (parts.empty()) s.push(vocab.unk(sp), sp);
    for (const auto& p : parts) s.push(vocab.encode(sp, p), sp);
  }
  s.push(special::kSep, kSpecialSpace);
  return s;
}

}  // namespace detail

// [CLS] + join_tuple(depth) cells in canonical order + [SEP].
inline Sentence serialize_row(const Database& db, const Vocabulary& vocab, std::size_t table, std::size_t row,
                              std::size_t depth = 0) {
  return detail::serialize_expanded(db, vocab, join_tuple(db, table, row, depth), std::nullopt, nullptr);
}

// As serialize_row, with the root cell of `column` replaced by that column's
// [MASK] (a multi-label cell collapses to one [MASK]).
inline MaskedCellSentence serialize_row_masked(const Database& db, const Vocabulary& vocab, std::size_t table,
                                               std::size_t row, std::size_t column, std::size_t depth = 0) {
  MaskedCellSentence out;
  out.sentence = detail::serialize_expanded(db, vocab, join_tuple(db, table, row, depth), column, &out.position);
  return out;
}

// A single input sequence [CLS] A [SEP] B [SEP] with segment ids 0/1.
inline Sentence join_pair(const Sentence& a, const Sentence& b) {
  Sentence out = a;
  for (std::size_t i = 1; i < b.size(); ++i) out.push(b.tokens[i], b.column_tags[i], 1);
  return out;
}

struct SentencePair {
  Sentence first;
  Sentence second;
  int label = 1;  // 1: second is the next row, 0: random row
};

// Consecutive-row pairs (i, i+1) of one table. round(ratio * pairs) of them,
// chosen uniformly, get a random row j not in {i, i+1} as second sentence.
inline std::vector<SentencePair> sample_nsp_pairs(const Database& db, const Vocabulary& vocab, std::size_t table,
                                                  double negative_ratio, Rng& rng, std::size_t depth = 0) {
  const std::size_t n = db.row_count(table);
  if (n < 2) {
    throw Error(ErrorCode::kTooFewRows,
                "table '" + db.schema().tables[table].name + "' needs at least 2 rows for NSP pairs");
  }
  if (!(negative_ratio > 0.0 && negative_ratio < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "negative_ratio must lie in (0, 1)");
  }
  std::vector<Sentence> sentences;
  sentences.reserve(n);
  for (std::size_t r = 0; r < n; ++r) sentences.push_back(serialize_row(db, vocab, table, r, depth));

  const std::size_t pairs = n - 1;
  const auto negatives = static_cast<std::size_t>(std::llround(negative_ratio * static_cast<double>(pairs)));
  std::vector<std::size_t> order(pairs);
  for (std::size_t i = 0; i < pairs; ++i) order[i] = i;
  std::vector<std::uint8_t> is_negative(pairs, 0);
  for (std::size_t k = 0; k < negatives; ++k) {
    std::swap(order[k], order[k + uniform_index(rng, pairs - k)]);
    is_negative[order[k]] = 1;
  }

  std::vector<SentencePair> out;
  out.reserve(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    SentencePair p{sentences[i], sentences[i + 1], 1};
    if (is_negative[i] && n > 2) {
      std::size_t j = uniform_index(rng, n - 2);
      if (j >= i) j += 2;  // skip i and i + 1
      p.second = sentences[j];
      p.label = 0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct MaskedSentence {
  Sentence sentence;                 // corrupted input
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;      // original ids, aligned with positions
};

// BERT corruption. Each non-special token is selected with probability
// mask_prob; selected tokens become the column's [MASK] (80%), a random value
// of the same column space (10%) or stay unchanged (10%). An empty selection
// is redrawn once, then one random position is forced.
inline MaskedSentence apply_mlm_mask(const Sentence& sentence, const Vocabulary& vocab, double mask_prob, Rng& rng) {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mask_prob must lie in (0, 1)");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (sentence.column_tags[i] != kSpecialSpace) eligible.push_back(i);
  }
  MaskedSentence out{sentence, {}, {}};
  if (eligible.empty()) return out;

  for (int attempt = 0; attempt < 2 && out.positions.empty(); ++attempt) {
    for (auto i : eligible) {
      if (uniform_unit(rng) < mask_prob) out.positions.push_back(i);
    }
  }
  if (out.positions.empty()) out.positions.push_back(eligible[uniform_index(rng, eligible.size())]);

  for (auto pos : out.positions) {
    const TokenId original = sentence.tokens[pos];
    const SpaceId sp = sentence.column_tags[pos];
    out.targets.push_back(original);
    const double u = uniform_unit(rng);
    if (u < 0.8) {
      out.sentence.tokens[pos] = vocab.mask(sp);
    } else if (u < 0.9) {
      const auto& space = vocab.space(sp);
      out.sentence.tokens[pos] =
          space.values.empty()
              ? vocab.unk(sp)
              : space.offset + static_cast<TokenId>(kFirstValueSlot + uniform_index(rng, space.values.size()));
    }
  }
  return out;
}

struct TrainingItem {
  MaskedSentence masked;
  int nsp_label = -1;  // -1 when the item carries no NSP target
};

struct MaskedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> tokens;  // batch * length, row-major
  std::vector<SpaceId> column_tags;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> attention_mask;  // 1 for real tokens, 0 for [PAD]
  std::vector<std::vector<std::size_t>> mask_positions;
  std::vector<std::vector<TokenId>> mlm_targets;
  std::vector<int> nsp_labels;

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (const auto& p : mask_positions) n += p.size();
    return n;
  }
};

enum class PadPolicy { kLongestInBatch, kMaxLength };

inline constexpr std::size_t kDefaultMaxLength = 128;

inline MaskedBatch make_batch(const std::vector<const TrainingItem*>& items, std::size_t max_len,
                              PadPolicy policy = PadPolicy::kLongestInBatch) {
  MaskedBatch b;
  b.batch = items.size();
  std::size_t longest = 0;
  for (const auto* item : items) {
    const std::size_t len = item->masked.sentence.size();
    if (len > max_len) {
      throw Error(ErrorCode::kSentenceTooLong, "sentence of length " + std::to_string(len) + " (table " +
                                                   std::to_string(item->masked.sentence.table) + ", row " +
                                                   std::to_string(item->masked.sentence.row) +
                                                   ") exceeds maximum " + std::to_string(max_len));
    }
    longest = std::max(longest, len);
  }
  b.length = policy == PadPolicy::kMaxLength ? max_len : longest;
  const std::size_t total = b.batch * b.length;
  b.tokens.assign(total, special::kPad);
  b.column_tags.assign(total, kSpecialSpace);
  b.segments.assign(total, 0);
  b.attention_mask.assign(total, 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& s = items[i]->masked.sentence;
    for (std::size_t p = 0; p < s.size(); ++p) {
      const std::size_t at = i * b.length + p;
      b.tokens[at] = s.tokens[p];
      b.column_tags[at] = s.column_tags[p];
      b.segments[at] = s.segments[p];
      b.attention_mask[at] = 1;
    }
    b.mask_positions.push_back(items[i]->masked.positions);
    b.mlm_targets.push_back(items[i]->masked.targets);
    b.nsp_labels.push_back(items[i]->nsp_label);
  }
  return b;
}

// Consecutive chunks of `batch_size`; the last batch may be short.
inline std::vector<MaskedBatch> make_batches(const std::vector<TrainingItem>& items, std::size_t batch_size,
                                             std::size_t max_len = kDefaultMaxLength,
                                             PadPolicy policy = PadPolicy::kLongestInBatch) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  std::vector<MaskedBatch> out;
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    std::vector<const TrainingItem*> chunk;
    for (std::size_t i = start; i < std::min(items.size(), start + batch_size); ++i) chunk.push_back(&items[i]);
    out.push_back(make_batch(chunk, max_len, policy));
  }
  return out;
}

// Unmasked sentences as one batch (for inference).
inline MaskedBatch batch_of_sentences(const std::vector<Sentence>& sentences, std::size_t max_len) {
  std::vector<TrainingItem> items;
  items.reserve(sentences.size());
  for (const auto& s : sentences) items.push_back(TrainingItem{MaskedSentence{s, {}, {}}, -1});
  std::vector<const TrainingItem*> ptrs;
  for (const auto& it : items) ptrs.push_back(&it);
  return make_batch(ptrs, max_len);
}

}  // namespace relbert
