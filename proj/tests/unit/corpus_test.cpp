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

#include <cmath>
#include <set>

#include "relbert/corpus.hpp"

using namespace relbert;

namespace {

Database make_db(const std::string& schema_text, const std::vector<std::string>& csvs) {
  auto schema = parse_schema(schema_text);
  std::vector<Relation> rels;
  for (std::size_t t = 0; t < csvs.size(); ++t) rels.push_back(relation_from_records(schema, t, csv::parse(csvs[t])));
  return Database(schema, std::move(rels));
}

Database people() {
  return make_db("table people\ncolumn birth_year numeric\ncolumn city categorical\ncolumn tag categorical\n"
                 "table films\ncolumn release_year numeric\ncolumn genre categorical\n",
                 {"birth_year,city,tag\n1991,oslo,a\n1980,rome,a\n1991,,b\n",
                  "release_year,genre\n1991,war\n2001,war\n1991,noir\n2005,war\n"});
}

// Table of `n` rows with one column holding r % k.
Database counter_table(std::size_t n, std::size_t k = 1000000) {
  std::string text = "v,w\n";
  for (std::size_t r = 0; r < n; ++r) text += "x" + std::to_string(r % k) + ",y" + std::to_string(r % 7) + "\n";
  return make_db("table t\ncolumn v categorical\ncolumn w categorical\n", {text});
}

}  // namespace

TEST_CASE("column {a, a, b}") {
  const auto db = make_db("table t\ncolumn c categorical\n", {"c\na\na\nb\n"});
  SECTION("min_count 1 keeps both values, most frequent first") {
    const auto v = build_vocab(db, 1);
    REQUIRE(v.num_spaces() == 1);
    CHECK(v.space(1).values == std::vector<std::string>{"a", "b"});
    CHECK(v.space(1).size() == 4);  // [UNK], [MASK], a, b
    CHECK(v.total_size() == special::kCount + 4);
  }
  SECTION("min_count 2 sends b to [UNK]") {
    const auto v = build_vocab(db, 2);
    CHECK(v.space(1).values == std::vector<std::string>{"a"});
    CHECK(v.encode(1, "b") == v.unk(1));
  }
  CHECK_THROWS_AS(build_vocab(db, 0), Error);
}

TEST_CASE("ties are broken lexicographically") {
  const auto db = make_db("table t\ncolumn c categorical\n", {"c\nz\ny\nx\ny\n"});
  CHECK(build_vocab(db, 1).space(1).values == std::vector<std::string>{"y", "x", "z"});
}

TEST_CASE("same raw value in two columns gets two ids") {
  const auto db = people();
  const auto v = build_vocab(db, 1);
  const SpaceId birth = *v.find_space("people.birth_year");
  const SpaceId release = *v.find_space("films.release_year");
  CHECK(v.encode(birth, "1991") != v.encode(release, "1991"));
  CHECK(v.shared_id(v.encode(birth, "1991")) == v.shared_id(v.encode(release, "1991")));
}

TEST_CASE("id ranges are disjoint and decode round-trips") {
  const auto v = build_vocab(people(), 1);
  std::set<TokenId> seen;
  for (SpaceId s = 1; s <= v.num_spaces(); ++s) {
    const auto& sp = v.space(s);
    for (std::size_t l = 0; l < sp.size(); ++l) {
      const TokenId t = sp.offset + static_cast<TokenId>(l);
      CHECK(seen.insert(t).second);
      CHECK(v.space_of_token(t) == s);
      CHECK(v.local_of(t) == l);
    }
    for (const auto& value : sp.values) {
      const auto d = v.decode(v.encode(s, value));
      CHECK(d.space == s);
      CHECK(d.value == value);
    }
    CHECK(v.decode(v.mask(s)).value == "[MASK]");
    CHECK(v.decode(v.unk(s)).value == "[UNK]");
  }
  CHECK(seen.size() + special::kCount == v.total_size());
  CHECK(v.space_of_token(special::kMask) == kSpecialSpace);
  CHECK_THROWS_AS(v.space(0), Error);
  CHECK_THROWS_AS(v.space_of_token(v.total_size()), Error);
}

TEST_CASE("empty columns are reported") {
  const auto db = make_db("table t\ncolumn a text\ncolumn b text\n", {"a,b\nx,\ny,\n"});
  const auto v = build_vocab(db, 1);
  CHECK(v.empty_columns() == std::vector<std::string>{"t.b"});
  CHECK(v.space(2).size() == 2);
}

TEST_CASE("vocabulary text form and digest") {
  const auto db = people();
  const auto v = build_vocab(db, 1);
  const auto again = Vocabulary::deserialize(v.serialize());
  CHECK(again.serialize() == v.serialize());
  CHECK(again.digest() == v.digest());
  CHECK(again.encode(2, "rome") == v.encode(2, "rome"));
  CHECK(build_vocab(db, 2).digest() != v.digest());
  // One extra row changes the digest even without new values.
  const auto bigger = make_db(format_schema(db.schema()), {"birth_year,city,tag\n1991,oslo,a\n1980,rome,a\n1991,,b\n"
                                                           "1991,oslo,a\n",
                                                           "release_year,genre\n1991,war\n2001,war\n1991,noir\n2005,war\n"});
  CHECK(build_vocab(bigger, 1).digest() != v.digest());
  CHECK_THROWS_AS(Vocabulary::deserialize("garbage"), Error);
}

TEST_CASE("export lists table.column, value and global id") {
  const auto v = build_vocab(people(), 1);
  const auto text = v.export_text();
  CHECK(text.find("people.city\toslo\t" + std::to_string(v.encode(2, "oslo")) + "\n") != std::string::npos);
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  std::size_t values = 0;
  for (SpaceId s = 1; s <= v.num_spaces(); ++s) values += v.space(s).values.size();
  CHECK(lines == values);
}

TEST_CASE("serialize_row") {
  const auto db = people();
  const auto v = build_vocab(db, 1);
  const auto s = serialize_row(db, v, 0, 0);
  REQUIRE(s.size() == 5);
  CHECK(s.tokens.front() == special::kCls);
  CHECK(s.tokens.back() == special::kSep);
  CHECK(s.column_tags.front() == kSpecialSpace);
  CHECK(s.tokens[1] == v.encode(1, "1991"));
  CHECK(s.column_tags[2] == 2);
  SECTION("a missing cell is its column's [UNK]") {
    const auto m = serialize_row(db, v, 0, 2);
    CHECK(m.tokens[2] == v.unk(2));
  }
  SECTION("masked variant") {
    const auto m = serialize_row_masked(db, v, 0, 0, 1);
    CHECK(m.position == 2);
    CHECK(m.sentence.tokens[2] == v.mask(2));
  }
}

TEST_CASE("multi-label cells become one token per label") {
  const auto db = make_db("table t\ncolumn id id\ncolumn tags categorical\nlabel t.tags multi\n",
                          {"id,tags\n1,a|b\n2,b\n3,c|a|b\n"});
  const auto v = build_vocab(db, 1);
  CHECK(v.space(2).values == std::vector<std::string>{"b", "a", "c"});
  const auto s = serialize_row(db, v, 0, 2);
  CHECK(s.size() == 1 + 1 + 3 + 1);
  const auto m = serialize_row_masked(db, v, 0, 2, 1);
  CHECK(m.sentence.size() == 4);
}

TEST_CASE("depth 1 sentences append parent tokens before a single [SEP]") {
  const auto db = make_db(
      "table d\ncolumn id id\ncolumn country categorical\npk id\n"
      "table m\ncolumn id id\ncolumn did id\ncolumn genre categorical\npk id\nfk did -> d.id\n",
      {"id,country\nd1,fr\nd2,jp\n", "id,did,genre\nm1,d2,war\nm2,d9,noir\n"});
  const auto v = build_vocab(db, 1);
  const auto s = serialize_row(db, v, 1, 0, 1);
  const auto joined = join_tuple(db, 1, 0, 1);
  REQUIRE(s.size() == joined.cells.size() + 2);
  for (std::size_t i = 0; i < joined.cells.size(); ++i) {
    const SpaceId sp = v.space_of(joined.cells[i].column);
    CHECK(s.column_tags[i + 1] == sp);
    CHECK(s.tokens[i + 1] == (joined.cells[i].value ? v.encode(sp, *joined.cells[i].value) : v.unk(sp)));
  }
  CHECK(std::count(s.tokens.begin(), s.tokens.end(), special::kSep) == 1);
  CHECK(v.decode(s.tokens[4]).value == "jp");
  CHECK(serialize_row(db, v, 1, 1, 1).tokens[4] == v.unk(*v.find_space("d.country")));
}

TEST_CASE("NSP pairs") {
  SECTION("two rows with a vanishing ratio give one positive pair") {
    const auto db = counter_table(2);
    const auto v = build_vocab(db, 1);
    Rng rng(1);
    const auto pairs = sample_nsp_pairs(db, v, 0, 1e-9, rng);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].label == 1);
    CHECK(pairs[0].first.row == 0);
    CHECK(pairs[0].second.row == 1);
  }
  SECTION("too few rows") {
    const auto db = counter_table(1);
    const auto v = build_vocab(db, 1);
    Rng rng(1);
    CHECK_THROWS_AS(sample_nsp_pairs(db, v, 0, 0.5, rng), Error);
  }
  SECTION("deterministic under a seed") {
    const auto db = counter_table(100);
    const auto v = build_vocab(db, 1);
    Rng a(9), b(9);
    const auto pa = sample_nsp_pairs(db, v, 0, 0.5, a);
    const auto pb = sample_nsp_pairs(db, v, 0, 0.5, b);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].label == pb[i].label);
      CHECK(pa[i].second.row == pb[i].second.row);
    }
  }
  SECTION("negative share and non-consecutive second rows") {
    const auto db = counter_table(1001);
    const auto v = build_vocab(db, 1);
    Rng rng(3);
    const auto pairs = sample_nsp_pairs(db, v, 0, 0.5, rng);
    REQUIRE(pairs.size() == 1000);
    std::size_t negatives = 0;
    for (const auto& p : pairs) {
      if (p.label == 0) {
        ++negatives;
        CHECK(p.second.row != p.first.row);
        CHECK(p.second.row != p.first.row + 1);
      } else {
        CHECK(p.second.row == p.first.row + 1);
      }
    }
    CHECK(negatives >= 450);
    CHECK(negatives <= 550);
  }
}

TEST_CASE("MLM masking") {
  const auto db = counter_table(2000, 13);
  const auto v = build_vocab(db, 1);
  SECTION("tiny probability still masks exactly one position") {
    Rng rng(5);
    for (std::size_t r = 0; r < 50; ++r) {
      const auto m = apply_mlm_mask(serialize_row(db, v, 0, r), v, 1e-9, rng);
      CHECK(m.positions.size() == 1);
    }
  }
  SECTION("selection rate, 80/10/10 split and column-space membership") {
    Rng rng(6);
    std::size_t tokens = 0, selected = 0, masked = 0, kept = 0;
    for (std::size_t r = 0; r < 1000; ++r) {
      // Four value tokens per pair.
      const auto pair = join_pair(serialize_row(db, v, 0, r), serialize_row(db, v, 0, r + 1));
      const auto m = apply_mlm_mask(pair, v, 0.15, rng);
      tokens += 4;
      selected += m.positions.size();
      REQUIRE(m.targets.size() == m.positions.size());
      CHECK(m.sentence.column_tags == pair.column_tags);
      for (std::size_t i = 0; i < pair.size(); ++i) {
        if (pair.column_tags[i] == kSpecialSpace) CHECK(m.sentence.tokens[i] == pair.tokens[i]);
      }
      for (std::size_t k = 0; k < m.positions.size(); ++k) {
        const auto pos = m.positions[k];
        CHECK(m.targets[k] == pair.tokens[pos]);
        const TokenId now = m.sentence.tokens[pos];
        CHECK(v.space_of_token(now) == pair.column_tags[pos]);
        if (now == v.mask(pair.column_tags[pos])) ++masked;
        if (now == pair.tokens[pos]) ++kept;
      }
    }
    // Per pair of 4 value tokens: first draw, one redraw when empty, then a
    // forced position: E = 4p + (1-p)^4 4p + (1-p)^8.
    const double p = 0.15, q4 = std::pow(1 - p, 4);
    const double expected = 1000 * (4 * p + q4 * 4 * p + q4 * q4);
    CHECK(static_cast<double>(selected) == Catch::Approx(expected).margin(5 * std::sqrt(expected)));
    CHECK(static_cast<double>(masked) / selected == Catch::Approx(0.8).margin(0.05));
    // Unchanged: the 10% keep branch plus random draws hitting the original.
    CHECK(static_cast<double>(kept) / selected > 0.07);
    CHECK(static_cast<double>(kept) / selected < 0.2);
  }
  SECTION("10,000 tokens at 0.15") {
    // 100 sentences of 100 value tokens; an empty first draw has
    // probability 0.85^100, so the count is Binomial(10000, 0.15).
    std::string schema = "table t\n", text;
    for (int c = 0; c < 100; ++c) {
      schema += "column c" + std::to_string(c) + " categorical\n";
      text += (c ? ",c" : "c") + std::to_string(c);
    }
    text += "\n";
    for (int r = 0; r < 100; ++r) {
      for (int c = 0; c < 100; ++c) text += (c ? "," : "") + std::to_string((r * 7 + c) % 11);
      text += "\n";
    }
    const auto wide = make_db(schema, {text});
    const auto wv = build_vocab(wide, 1);
    Rng rng(7);
    std::size_t selected = 0;
    for (std::size_t r = 0; r < 100; ++r) {
      selected += apply_mlm_mask(serialize_row(wide, wv, 0, r), wv, 0.15, rng).positions.size();
    }
    CHECK(selected >= 1500 - 150);
    CHECK(selected <= 1500 + 150);
  }
  SECTION("invalid probability") {
    Rng rng(1);
    CHECK_THROWS_AS(apply_mlm_mask(serialize_row(db, v, 0, 0), v, 0.0, rng), Error);
    CHECK_THROWS_AS(apply_mlm_mask(serialize_row(db, v, 0, 0), v, 1.0, rng), Error);
  }
}

TEST_CASE("batching") {
  const auto db = counter_table(10);
  const auto v = build_vocab(db, 1);
  Rng rng(2);
  std::vector<TrainingItem> items;
  for (std::size_t r = 0; r < 5; ++r) items.push_back({apply_mlm_mask(serialize_row(db, v, 0, r), v, 0.5, rng), 1});
  SECTION("5 items in batches of 2") {
    const auto batches = make_batches(items, 2);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].batch == 2);
    CHECK(batches[1].batch == 2);
    CHECK(batches[2].batch == 1);
    CHECK(batches[0].mask_positions[1] == items[1].masked.positions);
  }
  SECTION("padding to the longest sentence") {
    const auto pair = join_pair(serialize_row(db, v, 0, 1), serialize_row(db, v, 0, 2));
    std::vector<TrainingItem> two{items[0], {apply_mlm_mask(pair, v, 0.5, rng), 0}};
    const auto b = make_batch({&two[0], &two[1]}, 128);
    CHECK(b.length == 7);
    CHECK(b.tokens[4] == special::kPad);
    CHECK(b.attention_mask[3] == 1);
    CHECK(b.attention_mask[4] == 0);
    CHECK(b.segments[7 + 5] == 1);
    const auto fixed = make_batch({&two[0], &two[1]}, 16, PadPolicy::kMaxLength);
    CHECK(fixed.length == 16);
  }
  SECTION("overlong sentences are rejected") {
    CHECK_THROWS_AS(make_batches(items, 2, 3), Error);
  }
  CHECK_THROWS_AS(make_batches(items, 0), Error);
}
