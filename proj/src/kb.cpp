#include "schemaflow/kb.hpp"

#include <algorithm>
#include <regex>

#include "schemaflow/error.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

std::string scalar_to_string(const Scalar& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  return std::get<std::string>(v);
}

Json scalar_to_json(const Scalar& v) {
  return std::visit([](const auto& x) { return Json(x); }, v);
}

Scalar scalar_from_json(const Json& j, const std::string& key) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    double d = j.get<double>();
    auto i = static_cast<std::int64_t>(d);
    if (static_cast<double>(i) == d) return i;
  }
  if (j.is_string()) return j.get<std::string>();
  throw Error(ErrorCode::TypeMismatch, key, "expected string, integer or boolean, got " + j.dump());
}

Json item_to_json(const KbItem& item) {
  Json out = Json::object();
  for (const auto& [k, v] : item.fields) out[k] = scalar_to_json(v);
  return out;
}

KbItem item_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::TypeMismatch, "item", "KB item must be an object");
  KbItem item;
  for (const auto& [k, v] : j.items()) {
    if (k.empty()) throw Error(ErrorCode::InvalidField, "item", "empty field name");
    item.fields.emplace(k, scalar_from_json(v, k));
  }
  return item;
}

std::string format_item(const KbItem& item) {
  std::vector<std::string> parts;
  for (const auto& [k, v] : item.fields) parts.push_back(k + ": " + scalar_to_string(v));
  return join(parts, ", ");
}

std::string_view to_string(ConstraintOp op) {
  switch (op) {
    case ConstraintOp::Eq: return "eq";
    case ConstraintOp::Neq: return "neq";
    case ConstraintOp::Gt: return "gt";
    case ConstraintOp::Ge: return "ge";
    case ConstraintOp::Lt: return "lt";
    case ConstraintOp::Le: return "le";
    case ConstraintOp::Contains: return "contains";
    case ConstraintOp::OneOf: return "one_of";
  }
  return "eq";
}

std::optional<ConstraintOp> constraint_op_from_string(std::string_view name) {
  static const std::map<std::string, ConstraintOp, std::less<>> ops{
      {"eq", ConstraintOp::Eq}, {"neq", ConstraintOp::Neq}, {"gt", ConstraintOp::Gt},
      {"ge", ConstraintOp::Ge}, {"lt", ConstraintOp::Lt},   {"le", ConstraintOp::Le},
      {"contains", ConstraintOp::Contains}, {"one_of", ConstraintOp::OneOf}};
  auto it = ops.find(name);
  if (it == ops.end()) return std::nullopt;
  return it->second;
}

Constraint make_constraint(std::string key, ConstraintOp op, Scalar value) {
  Constraint c;
  c.key = std::move(key);
  c.op = op;
  c.value = std::move(value);
  return c;
}

Constraint make_one_of(std::string key, std::vector<Scalar> values) {
  Constraint c;
  c.key = std::move(key);
  c.op = ConstraintOp::OneOf;
  c.values = std::move(values);
  return c;
}

namespace {

// Corpus spelling of each comparison op.
const std::map<std::string, ConstraintOp, std::less<>>& api_ops() {
  static const std::map<std::string, ConstraintOp, std::less<>> ops{
      {"greater_than", ConstraintOp::Gt}, {"less_than", ConstraintOp::Lt},   {"at_least", ConstraintOp::Ge},
      {"at_most", ConstraintOp::Le},      {"not", ConstraintOp::Neq},        {"one_of", ConstraintOp::OneOf},
      {"contains", ConstraintOp::Contains}};
  return ops;
}

std::string api_name(ConstraintOp op) {
  for (const auto& [name, value] : api_ops()) {
    if (value == op) return name;
  }
  return {};
}

Constraint opaque(const std::string& key, const Json& raw) {
  Constraint c;
  c.key = key;
  c.opaque = true;
  c.raw = raw;
  return c;
}

std::optional<Json> parse_argument(const std::string& arg) {
  try {
    return Json::parse(arg);
  } catch (const Json::parse_error&) {
  }
  auto bare = trim(arg);
  if (bare.size() >= 2 && bare.front() == '\'' && bare.back() == '\'') bare = bare.substr(1, bare.size() - 2);
  if (bare.empty()) return std::nullopt;
  return Json(bare);
}

Constraint parse_one(const std::string& key, const Json& value) {
  if (value.is_array()) {
    std::vector<Scalar> values;
    for (const auto& v : value) {
      if (!(v.is_string() || v.is_boolean() || v.is_number_integer())) return opaque(key, value);
      values.push_back(scalar_from_json(v, key));
    }
    return make_one_of(key, std::move(values));
  }
  if (value.is_boolean() || value.is_number_integer()) return make_constraint(key, ConstraintOp::Eq, scalar_from_json(value, key));
  if (!value.is_string()) return opaque(key, value);

  const auto text = value.get<std::string>();
  if (!starts_with(text, "api.")) return make_constraint(key, ConstraintOp::Eq, text);
  static const std::regex pattern(R"(^api\.is_([a-z_]+)\((.*)\)$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) return opaque(key, value);
  auto op_it = api_ops().find(m[1].str());
  if (op_it == api_ops().end()) return opaque(key, value);
  auto arg = parse_argument(m[2].str());
  if (!arg) return opaque(key, value);
  const ConstraintOp op = op_it->second;
  if (op == ConstraintOp::OneOf) {
    Constraint c = parse_one(key, *arg);
    if (c.opaque || c.op != ConstraintOp::OneOf) return opaque(key, value);
    return c;
  }
  if (!(arg->is_string() || arg->is_boolean() || arg->is_number_integer())) return opaque(key, value);
  if (op == ConstraintOp::Contains && !arg->is_string()) return opaque(key, value);
  return make_constraint(key, op, scalar_from_json(*arg, key));
}

}  // namespace

std::vector<Constraint> parse_corpus_constraints(const Json& raw) {
  std::vector<Constraint> out;
  if (!raw.is_object()) {
    if (!raw.is_null()) out.push_back(opaque("", raw));
    return out;
  }
  for (const auto& [key, value] : raw.items()) out.push_back(parse_one(key, value));
  return out;
}

Json constraints_to_json(const std::vector<Constraint>& constraints) {
  Json out = Json::object();
  for (const auto& c : constraints) {
    if (c.opaque) {
      out[c.key] = c.raw;
    } else if (c.op == ConstraintOp::Eq) {
      out[c.key] = scalar_to_json(c.value);
    } else if (c.op == ConstraintOp::OneOf) {
      Json list = Json::array();
      for (const auto& v : c.values) list.push_back(scalar_to_json(v));
      out[c.key] = "api.is_one_of(" + list.dump() + ")";
    } else {
      out[c.key] = "api.is_" + api_name(c.op) + "(" + scalar_to_json(c.value).dump() + ")";
    }
  }
  return out;
}

namespace {

FieldType field_type_from_string(const std::string& name, const std::string& field) {
  if (name == "string") return FieldType::String;
  if (name == "integer" || name == "int") return FieldType::Integer;
  if (name == "boolean" || name == "bool") return FieldType::Boolean;
  throw Error(ErrorCode::InvalidField, field, "unknown field type '" + name + "'");
}

std::optional<Scalar> coerce(const Scalar& v, FieldType type) {
  switch (type) {
    case FieldType::String:
      return Scalar(scalar_to_string(v));
    case FieldType::Integer: {
      if (std::holds_alternative<std::int64_t>(v)) return v;
      if (const auto* s = std::get_if<std::string>(&v)) {
        try {
          std::size_t used = 0;
          auto parsed = std::stoll(*s, &used);
          if (used == s->size()) return Scalar(static_cast<std::int64_t>(parsed));
        } catch (const std::exception&) {
        }
      }
      return std::nullopt;
    }
    case FieldType::Boolean: {
      if (std::holds_alternative<bool>(v)) return v;
      if (const auto* s = std::get_if<std::string>(&v)) {
        if (*s == "true") return Scalar(true);
        if (*s == "false") return Scalar(false);
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

bool is_ordering(ConstraintOp op) {
  return op == ConstraintOp::Gt || op == ConstraintOp::Ge || op == ConstraintOp::Lt || op == ConstraintOp::Le;
}

bool satisfies(const Scalar& cell, const Constraint& c, FieldType type) {
  auto operand = [&](const Scalar& v) { return coerce(v, type); };
  switch (c.op) {
    case ConstraintOp::Eq: return operand(c.value) == cell;
    case ConstraintOp::Neq: return operand(c.value) != cell;
    case ConstraintOp::Gt:
    case ConstraintOp::Ge:
    case ConstraintOp::Lt:
    case ConstraintOp::Le: {
      auto v = operand(c.value);
      if (!v || !std::holds_alternative<std::int64_t>(cell)) return false;
      auto a = std::get<std::int64_t>(cell);
      auto b = std::get<std::int64_t>(*v);
      if (c.op == ConstraintOp::Gt) return a > b;
      if (c.op == ConstraintOp::Ge) return a >= b;
      if (c.op == ConstraintOp::Lt) return a < b;
      return a <= b;
    }
    case ConstraintOp::Contains: {
      const auto* s = std::get_if<std::string>(&cell);
      return s != nullptr && to_lower(*s).find(to_lower(scalar_to_string(c.value))) != std::string::npos;
    }
    case ConstraintOp::OneOf:
      return std::any_of(c.values.begin(), c.values.end(), [&](const Scalar& v) { return operand(v) == cell; });
  }
  return false;
}

}  // namespace

KbTable::KbTable(std::string name, std::vector<FieldSpec> fields, std::vector<KbItem> rows)
    : name_(std::move(name)), fields_(std::move(fields)), rows_(std::move(rows)) {
  for (const auto& row : rows_) {
    for (const auto& [key, value] : row.fields) {
      const auto* spec = field(key);
      if (spec == nullptr) throw Error(ErrorCode::UnknownField, key, "row field not declared in table " + name_);
      bool ok = (spec->type == FieldType::String && std::holds_alternative<std::string>(value)) ||
                (spec->type == FieldType::Integer && std::holds_alternative<std::int64_t>(value)) ||
                (spec->type == FieldType::Boolean && std::holds_alternative<bool>(value));
      if (!ok) throw Error(ErrorCode::TypeMismatch, key, "value " + scalar_to_string(value) + " in table " + name_);
    }
  }
}

KbTable KbTable::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("table") || !j.contains("fields")) {
    throw Error(ErrorCode::MissingField, "table", "KB fixture needs table and fields");
  }
  const auto name = j.at("table").get<std::string>();
  std::vector<FieldSpec> fields;
  std::vector<std::pair<std::size_t, std::vector<Scalar>>> keys;
  std::vector<std::pair<std::size_t, std::vector<Scalar>>> derived;
  for (const auto& f : j.at("fields")) {
    FieldSpec spec{f.at("name").get<std::string>(), field_type_from_string(f.value("type", "string"), f.at("name"))};
    std::vector<Scalar> values;
    if (f.contains("values")) {
      for (const auto& v : f.at("values")) values.push_back(scalar_from_json(v, spec.name));
    }
    if (f.value("key", false)) {
      keys.emplace_back(fields.size(), std::move(values));
    } else {
      derived.emplace_back(fields.size(), std::move(values));
    }
    fields.push_back(std::move(spec));
  }

  std::vector<KbItem> rows;
  if (j.contains("rows")) {
    for (const auto& r : j.at("rows")) rows.push_back(item_from_json(r));
    return KbTable(name, std::move(fields), std::move(rows));
  }

  std::mt19937_64 rng(j.value("seed", std::uint64_t{0}));
  std::vector<std::size_t> counter(keys.size(), 0);
  bool any_empty = keys.empty() || std::any_of(keys.begin(), keys.end(), [](const auto& k) { return k.second.empty(); });
  while (!any_empty) {
    KbItem item;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      item.fields[fields[keys[k].first].name] = keys[k].second[counter[k]];
    }
    for (const auto& [index, values] : derived) {
      if (values.empty()) throw Error(ErrorCode::MissingField, fields[index].name, "generated field needs values");
      std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
      item.fields[fields[index].name] = values[pick(rng)];
    }
    rows.push_back(std::move(item));
    // Advance the odometer; the last key field varies fastest.
    std::size_t k = keys.size();
    while (k > 0) {
      --k;
      if (++counter[k] < keys[k].second.size()) break;
      counter[k] = 0;
      if (k == 0) any_empty = true;
    }
  }
  return KbTable(name, std::move(fields), std::move(rows));
}

const FieldSpec* KbTable::field(std::string_view name) const {
  for (const auto& f : fields_) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

void KbTable::check(const std::vector<Constraint>& constraints) const {
  for (const auto& c : constraints) {
    if (c.opaque) continue;
    const auto* spec = field(c.key);
    if (spec == nullptr) throw Error(ErrorCode::UnknownField, c.key, "not a field of table " + name_);
    const auto op = std::string(to_string(c.op));
    if (is_ordering(c.op) && spec->type != FieldType::Integer) throw Error(ErrorCode::TypeMismatch, c.key, op);
    if (c.op == ConstraintOp::Contains && spec->type != FieldType::String) throw Error(ErrorCode::TypeMismatch, c.key, op);
    if (c.op == ConstraintOp::OneOf) {
      for (const auto& v : c.values) {
        if (!coerce(v, spec->type)) throw Error(ErrorCode::TypeMismatch, c.key, op);
      }
    } else if (!coerce(c.value, spec->type)) {
      throw Error(ErrorCode::TypeMismatch, c.key, op);
    }
  }
}

bool KbTable::matches(const KbItem& row, const std::vector<Constraint>& constraints) const {
  for (const auto& c : constraints) {
    if (c.opaque) return false;
    const auto* spec = field(c.key);
    auto cell = row.fields.find(c.key);
    if (spec == nullptr || cell == row.fields.end()) return false;
    if (!satisfies(cell->second, c, spec->type)) return false;
  }
  return true;
}

std::vector<std::size_t> KbTable::match_indices(const std::vector<Constraint>& constraints) const {
  check(constraints);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (matches(rows_[i], constraints)) out.push_back(i);
  }
  return out;
}

void KnowledgeBase::add(KbTable table) {
  auto name = table.name();
  tables_.insert_or_assign(std::move(name), std::move(table));
}

KnowledgeBase KnowledgeBase::load_dir(const std::filesystem::path& dir) {
  KnowledgeBase kb;
  for (const auto& file : list_json_files(dir)) kb.add(KbTable::from_json(parse_json(read_text_file(file))));
  return kb;
}

bool KnowledgeBase::contains(std::string_view table) const { return tables_.find(table) != tables_.end(); }

const KbTable& KnowledgeBase::table(std::string_view name) const {
  auto it = tables_.find(name);
  if (it == tables_.end()) throw Error(ErrorCode::UnknownTable, std::string(name));
  return it->second;
}

std::vector<std::string> KnowledgeBase::table_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tables_) out.push_back(name);
  return out;
}

QueryResult KnowledgeBase::query(std::string_view name, const std::vector<Constraint>& constraints,
                                 std::mt19937_64& rng) const {
  const auto& t = table(name);
  auto matches = t.match_indices(constraints);
  QueryResult result;
  result.total_items = static_cast<std::int64_t>(matches.size());
  if (!matches.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
    result.item = t.rows()[matches[pick(rng)]];
  }
  return result;
}

}  // namespace schemaflow
