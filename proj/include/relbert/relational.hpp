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

// In-memory relational model: declarative schema, CSV ingestion and FK join
// expansion of tuples.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "relbert/csv.hpp"
#include "relbert/error.hpp"
#include "relbert/util.hpp"

namespace relbert {

enum class ColumnKind { kCategorical, kNumeric, kText, kId };

inline std::string_view column_kind_name(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kCategorical: return "categorical";
    case ColumnKind::kNumeric: return "numeric";
    case ColumnKind::kText: return "text";
    case ColumnKind::kId: return "id";
  }
  return "categorical";
}

inline std::optional<ColumnKind> parse_column_kind(std::string_view name) {
  if (name == "categorical") return ColumnKind::kCategorical;
  if (name == "numeric") return ColumnKind::kNumeric;
  if (name == "text") return ColumnKind::kText;
  if (name == "id") return ColumnKind::kId;
  return std::nullopt;
}

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
};

struct TableSchema {
  std::string name;
  std::vector<ColumnSchema> columns;
  std::optional<std::string> primary_key;

  std::optional<std::size_t> column_index(std::string_view column) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i].name == column) return i;
    }
    return std::nullopt;
  }
};

struct ForeignKey {
  std::string child_table;
  std::string child_column;
  std::string parent_table;
  std::string parent_column;
};

struct LabelSpec {
  std::string table;
  std::string column;
  bool multi_label = false;
};

// Separator between labels in a multi-label cell.
inline constexpr char kLabelSeparator = '|';

// (table index, column index) into a SchemaSet.
struct ColumnRef {
  std::size_t table = 0;
  std::size_t column = 0;
  friend bool operator==(const ColumnRef&, const ColumnRef&) = default;
  friend auto operator<=>(const ColumnRef&, const ColumnRef&) = default;
};

struct SchemaSet {
  std::vector<TableSchema> tables;
  std::vector<ForeignKey> fk_links;
  std::optional<LabelSpec> label_spec;
  std::vector<std::string> null_sentinels{"", "NULL", "\\N"};

  std::optional<std::size_t> table_index(std::string_view name) const {
    for (std::size_t i = 0; i < tables.size(); ++i) {
      if (tables[i].name == name) return i;
    }
    return std::nullopt;
  }

  const TableSchema& table(std::string_view name) const {
    auto idx = table_index(name);
    if (!idx) throw Error(ErrorCode::kValidationError, "unknown table '" + std::string(name) + "'");
    return tables[*idx];
  }

  std::optional<ColumnRef> column_ref(std::string_view table, std::string_view column) const {
    auto t = table_index(table);
    if (!t) return std::nullopt;
    auto c = tables[*t].column_index(column);
    if (!c) return std::nullopt;
    return ColumnRef{*t, *c};
  }

  std::string qualified_name(ColumnRef ref) const {
    return tables[ref.table].name + "." + tables[ref.table].columns[ref.column].name;
  }

  bool is_null(std::string_view raw) const {
    return std::find(null_sentinels.begin(), null_sentinels.end(), raw) != null_sentinels.end();
  }

  bool is_key_column(ColumnRef ref) const {
    const auto& t = tables[ref.table];
    const auto& name = t.columns[ref.column].name;
    if (t.primary_key && *t.primary_key == name) return true;
    for (const auto& fk : fk_links) {
      if (fk.child_table == t.name && fk.child_column == name) return true;
    }
    return false;
  }

  bool is_multi_label(ColumnRef ref) const {
    return label_spec && label_spec->multi_label && tables[ref.table].name == label_spec->table &&
           tables[ref.table].columns[ref.column].name == label_spec->column;
  }

  // Throws ValidationError naming the first offending entity.
  void validate() const {
    std::set<std::string> table_names;
    for (const auto& t : tables) {
      if (!table_names.insert(t.name).second) {
        throw Error(ErrorCode::kValidationError, "duplicate table '" + t.name + "'");
      }
      if (t.columns.empty()) {
        throw Error(ErrorCode::kValidationError, "table '" + t.name + "' declares no columns");
      }
      std::set<std::string> column_names;
      for (const auto& c : t.columns) {
        if (!column_names.insert(c.name).second) {
          throw Error(ErrorCode::kValidationError,
                      "duplicate column '" + c.name + "' in table '" + t.name + "'");
        }
      }
      if (t.primary_key && !t.column_index(*t.primary_key)) {
        throw Error(ErrorCode::kValidationError,
                    "primary key '" + *t.primary_key + "' is not a column of '" + t.name + "'");
      }
    }
    for (const auto& fk : fk_links) {
      const auto child = table_index(fk.child_table);
      if (!child) throw Error(ErrorCode::kValidationError, "fk references unknown table '" + fk.child_table + "'");
      if (!tables[*child].column_index(fk.child_column)) {
        throw Error(ErrorCode::kValidationError,
                    "fk column '" + fk.child_column + "' not in table '" + fk.child_table + "'");
      }
      const auto parent = table_index(fk.parent_table);
      if (!parent) throw Error(ErrorCode::kValidationError, "fk references unknown table '" + fk.parent_table + "'");
      const auto& pt = tables[*parent];
      if (!pt.column_index(fk.parent_column)) {
        throw Error(ErrorCode::kValidationError,
                    "fk target column '" + fk.parent_column + "' not in table '" + fk.parent_table + "'");
      }
      if (!pt.primary_key || *pt.primary_key != fk.parent_column) {
        throw Error(ErrorCode::kValidationError,
                    "fk target '" + fk.parent_table + "." + fk.parent_column + "' is not a primary key");
      }
    }
    if (label_spec && !column_ref(label_spec->table, label_spec->column)) {
      throw Error(ErrorCode::kValidationError,
                  "label column '" + label_spec->table + "." + label_spec->column + "' does not exist");
    }
  }
};

// Line-oriented schema format:
//   table <name>
//   column <name> <categorical|numeric|text|id>
//   pk <column>
//   fk <column> -> <table>.<column>
//   label <table>.<column> [multi]
//   nulls <token>...        (replaces the null sentinel set; "" stays null)
// '#' starts a comment. column/pk/fk apply to the most recent table.
inline SchemaSet parse_schema(std::string_view text, const std::string& source = "<schema>") {
  SchemaSet schema;
  std::istringstream in{std::string(text)};
  std::string raw_line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kParseError, source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, raw_line)) {
    ++line_no;
    std::string_view line = raw_line;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::istringstream words{std::string(line)};
    std::vector<std::string> tok;
    for (std::string w; words >> w;) tok.push_back(w);
    const std::string& kw = tok[0];
    auto current = [&]() -> TableSchema& {
      if (schema.tables.empty()) fail("'" + kw + "' before any table");
      return schema.tables.back();
    };
    if (kw == "table") {
      if (tok.size() != 2) fail("expected: table <name>");
      schema.tables.push_back(TableSchema{tok[1], {}, std::nullopt});
    } else if (kw == "column") {
      if (tok.size() != 3) fail("expected: column <name> <kind>");
      auto kind = parse_column_kind(tok[2]);
      if (!kind) fail("unknown column kind '" + tok[2] + "'");
      current().columns.push_back(ColumnSchema{tok[1], *kind});
    } else if (kw == "pk") {
      if (tok.size() != 2) fail("expected: pk <column>");
      auto& t = current();
      if (t.primary_key) fail("table '" + t.name + "' already has a primary key");
      t.primary_key = tok[1];
    } else if (kw == "fk") {
      if (tok.size() != 4 || tok[2] != "->") fail("expected: fk <column> -> <table>.<column>");
      const auto dot = tok[3].find('.');
      if (dot == std::string::npos) fail("fk target must be <table>.<column>");
      schema.fk_links.push_back(
          ForeignKey{current().name, tok[1], tok[3].substr(0, dot), tok[3].substr(dot + 1)});
    } else if (kw == "label") {
      if (tok.size() < 2 || tok.size() > 3) fail("expected: label <table>.<column> [multi]");
      if (schema.label_spec) fail("only one label column may be declared");
      const auto dot = tok[1].find('.');
      if (dot == std::string::npos) fail("label must be <table>.<column>");
      bool multi = false;
      if (tok.size() == 3) {
        if (tok[2] != "multi") fail("unknown label flag '" + tok[2] + "'");
        multi = true;
      }
      schema.label_spec = LabelSpec{tok[1].substr(0, dot), tok[1].substr(dot + 1), multi};
    } else if (kw == "nulls") {
      schema.null_sentinels.assign(tok.begin() + 1, tok.end());
      schema.null_sentinels.insert(schema.null_sentinels.begin(), "");
    } else {
      fail("unknown directive '" + kw + "'");
    }
  }
  schema.validate();
  return schema;
}

inline SchemaSet load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open schema file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str(), path);
}

inline std::string format_schema(const SchemaSet& schema) {
  std::ostringstream out;
  for (const auto& t : schema.tables) {
    out << "table " << t.name << "\n";
    for (const auto& c : t.columns) out << "column " << c.name << " " << column_kind_name(c.kind) << "\n";
    if (t.primary_key) out << "pk " << *t.primary_key << "\n";
    for (const auto& fk : schema.fk_links) {
      if (fk.child_table == t.name) {
        out << "fk " << fk.child_column << " -> " << fk.parent_table << "." << fk.parent_column << "\n";
      }
    }
    out << "\n";
  }
  if (schema.label_spec) {
    out << "label " << schema.label_spec->table << "." << schema.label_spec->column
        << (schema.label_spec->multi_label ? " multi" : "") << "\n";
  }
  return out.str();
}

// A cell as an entity: equal raw text under different columns is a different
// value.
struct CellValue {
  std::string raw;
  ColumnRef column;
  friend bool operator==(const CellValue&, const CellValue&) = default;
};

using Cell = std::optional<std::string>;  // nullopt is the Missing marker.
using Tuple = std::vector<Cell>;

struct CellAddress {
  std::size_t table = 0;
  std::size_t row = 0;
  std::size_t column = 0;
  friend bool operator==(const CellAddress&, const CellAddress&) = default;
  friend auto operator<=>(const CellAddress&, const CellAddress&) = default;
};

struct Relation {
  std::size_t table = 0;
  std::vector<Tuple> rows;
};

// Immutable after ingestion.
class Database {
 public:
  Database() = default;
  Database(SchemaSet schema, std::vector<Relation> relations)
      : schema_(std::move(schema)), relations_(std::move(relations)) {
    if (relations_.size() != schema_.tables.size()) {
      throw Error(ErrorCode::kValidationError, "expected " + std::to_string(schema_.tables.size()) +
                                                   " relations, got " + std::to_string(relations_.size()));
    }
    for (std::size_t t = 0; t < relations_.size(); ++t) {
      relations_[t].table = t;
      for (const auto& row : relations_[t].rows) {
        if (row.size() != schema_.tables[t].columns.size()) {
          throw Error(ErrorCode::kRowArityError, "row of table '" + schema_.tables[t].name + "' has wrong arity");
        }
      }
    }
    build_indexes();
  }

  const SchemaSet& schema() const { return schema_; }
  const std::vector<Relation>& relations() const { return relations_; }
  const Relation& relation(std::size_t table) const { return relations_.at(table); }
  const Relation& relation(std::string_view table) const {
    auto idx = schema_.table_index(table);
    if (!idx) throw Error(ErrorCode::kValidationError, "unknown table '" + std::string(table) + "'");
    return relations_[*idx];
  }
  std::size_t row_count(std::size_t table) const { return relations_.at(table).rows.size(); }

  std::optional<CellValue> cell(std::size_t table, std::size_t row, std::size_t column) const {
    const auto& c = relations_.at(table).rows.at(row).at(column);
    if (!c) return std::nullopt;
    return CellValue{*c, ColumnRef{table, column}};
  }

  // Row of `table` whose primary key equals `key`; first occurrence wins.
  std::optional<std::size_t> find_by_key(std::size_t table, const std::string& key) const {
    const auto& idx = pk_index_.at(table);
    auto it = idx.find(key);
    if (it == idx.end()) return std::nullopt;
    return it->second;
  }

  // Child rows whose non-missing FK value has no matching parent key, per
  // entry of schema().fk_links.
  const std::vector<std::size_t>& dangling_references() const { return dangling_; }
  std::size_t dangling_reference_count() const {
    std::size_t total = 0;
    for (auto d : dangling_) total += d;
    return total;
  }

  std::size_t missing_count(std::size_t table) const {
    std::size_t n = 0;
    for (const auto& row : relations_.at(table).rows) {
      for (const auto& c : row) n += c ? 0 : 1;
    }
    return n;
  }

  // Copy with the listed cells replaced by Missing.
  Database with_hidden(const std::vector<CellAddress>& cells) const {
    Database copy = *this;
    for (const auto& a : cells) copy.relations_.at(a.table).rows.at(a.row).at(a.column).reset();
    copy.build_indexes();
    return copy;
  }

 private:
  void build_indexes() {
    pk_index_.assign(schema_.tables.size(), {});
    for (std::size_t t = 0; t < schema_.tables.size(); ++t) {
      const auto& ts = schema_.tables[t];
      if (!ts.primary_key) continue;
      const std::size_t pk = *ts.column_index(*ts.primary_key);
      const auto& rows = relations_[t].rows;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r][pk]) pk_index_[t].emplace(*rows[r][pk], r);
      }
    }
    dangling_.assign(schema_.fk_links.size(), 0);
    for (std::size_t f = 0; f < schema_.fk_links.size(); ++f) {
      const auto& fk = schema_.fk_links[f];
      const auto child = *schema_.table_index(fk.child_table);
      const auto parent = *schema_.table_index(fk.parent_table);
      const auto col = *schema_.tables[child].column_index(fk.child_column);
      for (const auto& row : relations_[child].rows) {
        if (row[col] && !pk_index_[parent].count(*row[col])) ++dangling_[f];
      }
    }
  }

  SchemaSet schema_;
  std::vector<Relation> relations_;
  std::vector<std::unordered_map<std::string, std::size_t>> pk_index_;
  std::vector<std::size_t> dangling_;
};

// Builds a Relation from parsed CSV records (header first).
inline Relation relation_from_records(const SchemaSet& schema, std::size_t table,
                                      const std::vector<csv::Row>& records, const std::string& source = "<records>") {
  const auto& ts = schema.tables[table];
  if (records.empty()) {
    throw Error(ErrorCode::kHeaderMismatch, source + ": missing header row for table '" + ts.name + "'");
  }
  const auto& header = records[0];
  std::vector<std::size_t> order(ts.columns.size());
  if (header.size() != ts.columns.size()) {
    throw Error(ErrorCode::kHeaderMismatch, source + ": header has " + std::to_string(header.size()) +
                                                " columns, table '" + ts.name + "' declares " +
                                                std::to_string(ts.columns.size()));
  }
  for (std::size_t c = 0; c < ts.columns.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), ts.columns[c].name);
    if (it == header.end()) {
      throw Error(ErrorCode::kHeaderMismatch,
                  source + ": header lacks column '" + ts.columns[c].name + "' of table '" + ts.name + "'");
    }
    if (std::find(it + 1, header.end(), ts.columns[c].name) != header.end()) {
      throw Error(ErrorCode::kHeaderMismatch, source + ": duplicate header column '" + ts.columns[c].name + "'");
    }
    order[c] = static_cast<std::size_t>(it - header.begin());
  }
  Relation rel{table, {}};
  rel.rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw Error(ErrorCode::kRowArityError, source + ": row " + std::to_string(r) + " has " +
                                                 std::to_string(rec.size()) + " fields, expected " +
                                                 std::to_string(header.size()));
    }
    Tuple tuple(ts.columns.size());
    for (std::size_t c = 0; c < ts.columns.size(); ++c) {
      const auto& raw = rec[order[c]];
      if (!schema.is_null(raw)) tuple[c] = raw;
    }
    rel.rows.push_back(std::move(tuple));
  }
  return rel;
}

// One CSV per declared table; rows keep file order.
inline Database ingest_csv(const SchemaSet& schema, const std::map<std::string, std::string>& files) {
  std::vector<Relation> relations;
  for (std::size_t t = 0; t < schema.tables.size(); ++t) {
    const auto& name = schema.tables[t].name;
    auto it = files.find(name);
    if (it == files.end() || !std::filesystem::exists(it->second)) {
      throw Error(ErrorCode::kMissingTableFile,
                  "no CSV for table '" + name + "'" + (it == files.end() ? "" : " at " + it->second));
    }
    relations.push_back(relation_from_records(schema, t, csv::read_file(it->second), it->second));
  }
  return Database(schema, std::move(relations));
}

// Expects <dir>/<table>.csv for every table.
inline Database ingest_directory(const SchemaSet& schema, const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& t : schema.tables) files[t.name] = (dir / (t.name + ".csv")).string();
  return ingest_csv(schema, files);
}

// Writes <dir>/<table>.csv in schema column order; Missing becomes "".
inline void write_database(const Database& db, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < db.schema().tables.size(); ++t) {
    const auto& ts = db.schema().tables[t];
    std::vector<csv::Row> records;
    csv::Row header;
    for (const auto& c : ts.columns) header.push_back(c.name);
    records.push_back(header);
    for (const auto& row : db.relation(t).rows) {
      csv::Row rec;
      for (const auto& c : row) rec.push_back(c.value_or(""));
      records.push_back(std::move(rec));
    }
    csv::write_file((dir / (ts.name + ".csv")).string(), records);
  }
}

struct ExpandedCell {
  ColumnRef column;
  Cell value;
};

struct ExpandedTuple {
  std::size_t table = 0;
  std::size_t row = 0;
  std::vector<ExpandedCell> cells;
};

// The tuple followed by parent tuples reached through fk_links, level by
// level up to `depth` hops. Parents appear in fk declaration order and drop
// their primary key column. A missing or dangling reference yields a block
// of Missing cells of the parent's arity.
inline ExpandedTuple join_tuple(const Database& db, std::size_t table, std::size_t row, std::size_t depth) {
  const auto& schema = db.schema();
  if (row >= db.row_count(table)) {
    throw Error(ErrorCode::kInvalidArgument, "row " + std::to_string(row) + " out of range for table '" +
                                                 schema.tables[table].name + "'");
  }
  ExpandedTuple out{table, row, {}};
  const auto& root = db.relation(table).rows[row];
  for (std::size_t c = 0; c < root.size(); ++c) out.cells.push_back({ColumnRef{table, c}, root[c]});

  struct Frontier {
    std::size_t table;
    std::optional<std::size_t> row;
  };
  std::vector<Frontier> frontier{{table, row}};
  for (std::size_t level = 0; level < depth && !frontier.empty(); ++level) {
    std::vector<Frontier> next;
    for (const auto& item : frontier) {
      const auto& child_name = schema.tables[item.table].name;
      for (const auto& fk : schema.fk_links) {
        if (fk.child_table != child_name) continue;
        const auto parent = *schema.table_index(fk.parent_table);
        const auto& pt = schema.tables[parent];
        const auto fk_col = *schema.tables[item.table].column_index(fk.child_column);
        const auto pk_col = *pt.column_index(fk.parent_column);
        std::optional<std::size_t> parent_row;
        if (item.row) {
          const auto& key = db.relation(item.table).rows[*item.row][fk_col];
          if (key) parent_row = db.find_by_key(parent, *key);
        }
        for (std::size_t c = 0; c < pt.columns.size(); ++c) {
          if (c == pk_col) continue;
          Cell v;
          if (parent_row) v = db.relation(parent).rows[*parent_row][c];
          out.cells.push_back({ColumnRef{parent, c}, v});
        }
        next.push_back({parent, parent_row});
      }
    }
    frontier = std::move(next);
  }
  return out;
}

}  // namespace relbert
