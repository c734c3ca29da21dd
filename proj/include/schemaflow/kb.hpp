#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "schemaflow/json_io.hpp"

namespace schemaflow {

using Scalar = std::variant<bool, std::int64_t, std::string>;

std::string scalar_to_string(const Scalar& v);
Json scalar_to_json(const Scalar& v);
// Accepts JSON booleans, integers and strings; throws Error(TypeMismatch).
Scalar scalar_from_json(const Json& j, const std::string& key);

struct KbItem {
  std::map<std::string, Scalar> fields;

  bool operator==(const KbItem&) const = default;
};

Json item_to_json(const KbItem& item);
KbItem item_from_json(const Json& j);
// "Key: Value, Key: Value" in field-name order.
std::string format_item(const KbItem& item);

enum class ConstraintOp { Eq, Neq, Gt, Ge, Lt, Le, Contains, OneOf };

std::string_view to_string(ConstraintOp op);
std::optional<ConstraintOp> constraint_op_from_string(std::string_view name);

struct Constraint {
  std::string key;
  ConstraintOp op = ConstraintOp::Eq;
  Scalar value;
  std::vector<Scalar> values;  // one_of only
  // Set for expressions that could not be interpreted; such a constraint
  // matches nothing. `raw` keeps the original value.
  bool opaque = false;
  Json raw;

  bool operator==(const Constraint&) const = default;
};

Constraint make_constraint(std::string key, ConstraintOp op, Scalar value);
Constraint make_one_of(std::string key, std::vector<Scalar> values);

// Reads the corpus encoding: literal values mean equality, strings of the form
// `api.is_<op>(<arg>)` map to comparison constraints.
std::vector<Constraint> parse_corpus_constraints(const Json& raw);
Json constraints_to_json(const std::vector<Constraint>& constraints);

struct QueryResult {
  std::optional<KbItem> item;
  std::int64_t total_items = -1;

  bool operator==(const QueryResult&) const = default;
};

enum class FieldType { String, Integer, Boolean };

struct FieldSpec {
  std::string name;
  FieldType type = FieldType::String;
};

class KbTable {
 public:
  KbTable(std::string name, std::vector<FieldSpec> fields, std::vector<KbItem> rows);
  // Fixture format: {table, fields:[{name,type,key?,values?}], rows?, seed?}.
  // Without explicit rows, rows are the cross product of key fields in field
  // order; non-key fields are drawn from their value lists with `seed`.
  static KbTable from_json(const Json& j);

  const std::string& name() const noexcept { return name_; }
  const std::vector<FieldSpec>& fields() const noexcept { return fields_; }
  const std::vector<KbItem>& rows() const noexcept { return rows_; }
  const FieldSpec* field(std::string_view name) const;

  // Throws Error(UnknownField) or Error(TypeMismatch) for unusable constraints.
  void check(const std::vector<Constraint>& constraints) const;
  bool matches(const KbItem& row, const std::vector<Constraint>& constraints) const;
  std::vector<std::size_t> match_indices(const std::vector<Constraint>& constraints) const;

 private:
  std::string name_;
  std::vector<FieldSpec> fields_;
  std::vector<KbItem> rows_;
};

class KnowledgeBase {
 public:
  void add(KbTable table);
  static KnowledgeBase load_dir(const std::filesystem::path& dir);

  bool contains(std::string_view table) const;
  const KbTable& table(std::string_view name) const;
  std::vector<std::string> table_names() const;

  // Samples one match uniformly with `rng`; total_items counts all matches.
  QueryResult query(std::string_view table, const std::vector<Constraint>& constraints, std::mt19937_64& rng) const;

 private:
  std::map<std::string, KbTable, std::less<>> tables_;
};

}  // namespace schemaflow
