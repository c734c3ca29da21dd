#include "schemaflow/schema.hpp"

#include <algorithm>
#include <set>

#include "schemaflow/json_io.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

bool is_valid_action_label(std::string_view label) {
  if (label.empty()) return false;
  return std::all_of(label.begin(), label.end(),
                     [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; });
}

namespace {

bool is_identifier(std::string_view id) {
  if (id.empty()) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

// Scans `text`; on success fills `out` and returns nothing, else the problem.
std::optional<std::string> scan_placeholders(std::string_view text, std::vector<Placeholder>* out) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '}') return "unbalanced '}' at offset " + std::to_string(i);
    if (text[i] != '{') continue;
    auto close = text.find('}', i + 1);
    if (close == std::string_view::npos) return "unbalanced '{' at offset " + std::to_string(i);
    auto inner = text.substr(i + 1, close - i - 1);
    if (inner.find('{') != std::string_view::npos) return "nested '{' at offset " + std::to_string(i);
    auto colon = inner.find(':');
    auto id = inner.substr(0, colon);
    if (!is_identifier(id)) return "bad placeholder identifier '" + std::string(id) + "'";
    if (out != nullptr) {
      std::string format = colon == std::string_view::npos ? std::string{} : std::string(inner.substr(colon + 1));
      out->push_back(Placeholder{std::string(id), std::move(format), i, close + 1});
    }
    i = close;
  }
  return std::nullopt;
}

}  // namespace

ResponseTemplate ResponseTemplate::parse(std::string text) {
  ResponseTemplate t;
  if (auto problem = scan_placeholders(text, &t.placeholders_)) {
    throw Error(ErrorCode::InvalidTemplate, text, *problem);
  }
  t.text_ = std::move(text);
  return t;
}

std::optional<std::string> ResponseTemplate::check(std::string_view text) { return scan_placeholders(text, nullptr); }

std::vector<std::string> ResponseTemplate::identifiers() const {
  std::vector<std::string> ids;
  for (const auto& p : placeholders_) {
    if (std::find(ids.begin(), ids.end(), p.identifier) == ids.end()) ids.push_back(p.identifier);
  }
  return ids;
}

std::string fill_template(const ResponseTemplate& t, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t cursor = 0;
  for (const auto& p : t.placeholders()) {
    auto it = values.find(p.identifier);
    if (it == values.end()) throw Error(ErrorCode::MissingPlaceholderValue, p.identifier);
    out.append(t.text(), cursor, p.begin - cursor);
    out += it->second;
    cursor = p.end;
  }
  out.append(t.text(), cursor);
  return out;
}

PartialFill fill_template_partial(const ResponseTemplate& t,
                                  const std::function<std::optional<std::string>(const std::string&)>& resolve,
                                  const std::function<std::string(const std::string&)>& on_missing) {
  PartialFill result;
  std::size_t cursor = 0;
  for (const auto& p : t.placeholders()) {
    result.text.append(t.text(), cursor, p.begin - cursor);
    if (auto value = resolve(p.identifier)) {
      result.text += *value;
    } else {
      result.text += on_missing(p.identifier);
      if (std::find(result.missing.begin(), result.missing.end(), p.identifier) == result.missing.end()) {
        result.missing.push_back(p.identifier);
      }
    }
    cursor = p.end;
  }
  result.text.append(t.text(), cursor);
  return result;
}

namespace {

struct MatchPlan {
  std::vector<std::string> literals;  // size = captures + 1
  std::vector<std::string> captures;
};

bool match_rest(const MatchPlan& plan, std::string_view text, std::size_t k, std::size_t pos,
                std::map<std::string, std::string>& out) {
  if (k == plan.captures.size()) return pos == text.size();
  const auto& next = plan.literals[k + 1];
  bool last = k + 1 == plan.captures.size();
  for (std::size_t end = pos + 1; end + next.size() <= text.size(); ++end) {
    if (last && end + next.size() != text.size()) continue;
    if (!iequals(text.substr(end, next.size()), next)) continue;
    std::string value(text.substr(pos, end - pos));
    const auto& id = plan.captures[k];
    auto existing = out.find(id);
    bool inserted = false;
    if (existing != out.end()) {
      if (existing->second != value) continue;
    } else {
      out.emplace(id, value);
      inserted = true;
    }
    if (match_rest(plan, text, k + 1, end + next.size(), out)) return true;
    if (inserted) out.erase(id);
  }
  return false;
}

}  // namespace

std::optional<std::map<std::string, std::string>> match_template(const ResponseTemplate& t, std::string_view text) {
  MatchPlan plan;
  std::size_t cursor = 0;
  for (const auto& p : t.placeholders()) {
    plan.literals.push_back(t.text().substr(cursor, p.begin - cursor));
    plan.captures.push_back(p.identifier);
    cursor = p.end;
  }
  plan.literals.push_back(t.text().substr(cursor));
  const auto& head = plan.literals.front();
  if (head.size() > text.size() || !iequals(text.substr(0, head.size()), head)) return std::nullopt;
  if (plan.captures.empty()) {
    if (head.size() != text.size()) return std::nullopt;
    return std::map<std::string, std::string>{};
  }
  std::map<std::string, std::string> out;
  if (!match_rest(plan, text, 0, head.size(), out)) return std::nullopt;
  return out;
}

bool is_query_label(std::string_view label) { return label == "query" || starts_with(label, "query_"); }

bool is_farewell_label(std::string_view label) {
  return label == "bye" || label == "goodbye" || ends_with(label, "_bye") || ends_with(label, "_goodbye");
}

bool Schema::has_node(std::string_view node) const { return replies_.find(std::string(node)) != replies_.end(); }

const ResponseTemplate& Schema::reply(std::string_view node) const {
  auto it = replies_.find(std::string(node));
  if (it == replies_.end()) throw Error(ErrorCode::UnknownNode, std::string(node), "not in schema " + task_);
  return it->second;
}

std::optional<std::string> Schema::next_node(std::string_view node) const {
  if (!has_node(node)) throw Error(ErrorCode::UnknownNode, std::string(node), "not in schema " + task_);
  auto it = graph_.find(std::string(node));
  if (it == graph_.end()) return std::nullopt;
  return it->second;
}

const std::string& Schema::node_text(std::string_view node) const { return reply(node).text(); }

namespace {

std::vector<std::string> walk(const std::map<std::string, std::string>& graph, const std::string& start) {
  std::vector<std::string> path{start};
  std::set<std::string> seen{start};
  auto it = graph.find(start);
  while (it != graph.end() && seen.insert(it->second).second) {
    path.push_back(it->second);
    it = graph.find(it->second);
  }
  return path;
}

std::set<std::string> graph_values(const std::map<std::string, std::string>& graph) {
  std::set<std::string> values;
  for (const auto& [k, v] : graph) values.insert(v);
  return values;
}

}  // namespace

std::optional<std::string> Schema::root() const {
  if (graph_.count("hello") != 0 || (graph_.empty() && replies_.count("hello") != 0)) return std::string("hello");
  auto values = graph_values(graph_);
  std::optional<std::string> best;
  std::size_t best_len = 0;
  for (const auto& [key, value] : graph_) {
    if (values.count(key) != 0) continue;
    auto len = walk(graph_, key).size();
    if (len > best_len) {
      best = key;
      best_len = len;
    }
  }
  return best;
}

NodeKind Schema::kind(std::string_view node) const {
  if (!has_node(node)) throw Error(ErrorCode::UnknownNode, std::string(node), "not in schema " + task_);
  auto r = root();
  if (r && *r == node) return NodeKind::Root;
  if (is_query_label(node)) return NodeKind::Query;
  if (node == "yes" || node == "no") return NodeKind::UserBranch;
  auto branches = branch_nodes();
  if (std::find(branches.begin(), branches.end(), node) != branches.end()) return NodeKind::KbBranch;
  return NodeKind::Reply;
}

std::vector<std::string> Schema::main_path() const {
  auto r = root();
  if (!r) return {};
  return walk(graph_, *r);
}

std::vector<std::string> Schema::branch_nodes() const {
  auto values = graph_values(graph_);
  auto r = root();
  std::vector<std::string> out;
  for (const auto& [key, value] : graph_) {
    if (values.count(key) == 0 && (!r || key != *r)) out.push_back(key);
  }
  return out;
}

std::optional<std::string> Schema::farewell_node() const {
  for (const auto& [label, t] : replies_) {
    if (is_farewell_label(label)) return label;
  }
  return std::nullopt;
}

std::optional<std::string> Schema::nothing_found_node() const {
  for (const auto& [label, t] : replies_) {
    if (ends_with(label, "nothing_found")) return label;
  }
  return std::nullopt;
}

std::vector<std::string> Schema::placeholder_identifiers() const {
  std::set<std::string> ids;
  for (const auto& [label, t] : replies_) {
    for (const auto& p : t.placeholders()) ids.insert(p.identifier);
  }
  return {ids.begin(), ids.end()};
}

namespace {

// Validates a parsed document; returns the schema when no violations were found.
std::optional<Schema> build_schema(const Json& doc, const std::vector<std::string>& duplicates,
                                   std::vector<Violation>& violations,
                                   const std::function<Schema(std::string, std::map<std::string, ResponseTemplate>,
                                                              std::map<std::string, std::string>)>& construct) {
  for (const auto& dup : duplicates) {
    if (starts_with(dup, "graph.")) {
      violations.push_back({ErrorCode::DuplicateEdge, dup.substr(6), "node has more than one outgoing edge"});
    } else if (starts_with(dup, "replies.")) {
      violations.push_back({ErrorCode::InvalidLabel, dup.substr(8), "duplicate reply label"});
    } else {
      violations.push_back({ErrorCode::InvalidField, dup, "duplicate key"});
    }
  }
  if (!doc.is_object()) {
    violations.push_back({ErrorCode::MalformedJson, "document", "top level must be an object"});
    return std::nullopt;
  }
  std::string task;
  std::map<std::string, ResponseTemplate> replies;
  std::map<std::string, std::string> graph;

  auto task_it = doc.find("task");
  if (task_it == doc.end()) {
    violations.push_back({ErrorCode::MissingField, "task", "schema has no task name"});
  } else if (!task_it->is_string()) {
    violations.push_back({ErrorCode::InvalidField, "task", "must be a string"});
  } else {
    task = task_it->get<std::string>();
    if (!is_valid_action_label(task)) violations.push_back({ErrorCode::InvalidLabel, task, "task name must match [a-z0-9_]+"});
  }

  auto replies_it = doc.find("replies");
  bool replies_ok = false;
  if (replies_it == doc.end()) {
    violations.push_back({ErrorCode::MissingField, "replies", "schema has no replies"});
  } else if (!replies_it->is_object()) {
    violations.push_back({ErrorCode::InvalidField, "replies", "must be an object"});
  } else {
    replies_ok = true;
    for (const auto& [label, text] : replies_it->items()) {
      if (!is_valid_action_label(label)) {
        violations.push_back({ErrorCode::InvalidLabel, label, "reply label must match [a-z0-9_]+"});
      }
      if (!text.is_string()) {
        violations.push_back({ErrorCode::InvalidField, label, "reply text must be a string"});
        continue;
      }
      auto raw = text.get<std::string>();
      if (auto problem = ResponseTemplate::check(raw)) {
        violations.push_back({ErrorCode::InvalidTemplate, label, *problem});
        continue;
      }
      replies.emplace(label, ResponseTemplate::parse(raw));
    }
  }

  auto graph_it = doc.find("graph");
  if (graph_it == doc.end()) {
    violations.push_back({ErrorCode::MissingField, "graph", "schema has no graph"});
  } else if (!graph_it->is_object()) {
    violations.push_back({ErrorCode::InvalidField, "graph", "must be an object"});
  } else {
    std::set<std::string> dangling;
    for (const auto& [from, to] : graph_it->items()) {
      if (!to.is_string()) {
        violations.push_back({ErrorCode::InvalidField, from, "graph target must be a string"});
        continue;
      }
      auto target = to.get<std::string>();
      graph.emplace(from, target);
      if (replies_ok && replies_it->find(from) == replies_it->end()) dangling.insert(from);
      if (replies_ok && replies_it->find(target) == replies_it->end()) dangling.insert(target);
    }
    for (const auto& label : dangling) {
      violations.push_back({ErrorCode::DanglingGraphNode, label, "graph node is not a reply label"});
    }
  }

  if (!violations.empty()) return std::nullopt;
  return construct(std::move(task), std::move(replies), std::move(graph));
}

}  // namespace

std::vector<Violation> validate_schema(std::string_view raw) {
  std::vector<std::string> duplicates;
  Json doc;
  try {
    doc = parse_json(raw, &duplicates);
  } catch (const Error& e) {
    return {Violation{ErrorCode::MalformedJson, "document", e.what()}};
  }
  std::vector<Violation> violations;
  build_schema(doc, duplicates, violations, [](auto, auto, auto) { return Schema{}; });
  return violations;
}

Schema parse_schema(std::string_view raw) {
  std::vector<std::string> duplicates;
  Json doc = parse_json(raw, &duplicates);
  std::vector<Violation> violations;
  auto schema = build_schema(doc, duplicates, violations, [](std::string task, auto replies, auto graph) {
    Schema s;
    s.task_ = std::move(task);
    s.replies_ = std::move(replies);
    s.graph_ = std::move(graph);
    return s;
  });
  if (!schema) throw ValidationError(std::move(violations));
  return std::move(*schema);
}

Schema make_schema(std::string task, std::map<std::string, std::string> replies, std::map<std::string, std::string> graph) {
  Json doc{{"task", std::move(task)}, {"replies", std::move(replies)}, {"graph", std::move(graph)}};
  return parse_schema(doc.dump());
}

std::string serialize_schema(const Schema& s) {
  Json replies = Json::object();
  for (const auto& [label, t] : s.replies()) replies[label] = t.text();
  Json doc{{"task", s.task()}, {"replies", replies}, {"graph", s.graph()}};
  return doc.dump(2);
}

std::optional<std::string> next_node(const Schema& s, std::string_view node) { return s.next_node(node); }

const std::string& node_text(const Schema& s, std::string_view node) { return s.node_text(node); }

void SchemaSet::add(Schema schema, std::string domain) {
  if (domain.empty()) throw Error(ErrorCode::InvalidField, schema.task(), "empty domain");
  if (schemas_.count(schema.task()) != 0) throw Error(ErrorCode::InvalidField, schema.task(), "duplicate task");
  domains_[schema.task()] = std::move(domain);
  auto task = schema.task();
  schemas_.emplace(std::move(task), std::move(schema));
}

SchemaSet SchemaSet::load(const std::filesystem::path& schema_dir, const std::filesystem::path& manifest) {
  Json domains = parse_json(read_text_file(manifest));
  if (!domains.is_object()) throw Error(ErrorCode::InvalidField, manifest.string(), "manifest must map task to domain");
  SchemaSet set;
  for (const auto& file : list_json_files(schema_dir)) {
    Schema schema = parse_schema(read_text_file(file));
    auto it = domains.find(schema.task());
    if (it == domains.end() || !it->is_string()) {
      throw Error(ErrorCode::UnknownTask, schema.task(), "no domain assigned in " + manifest.string());
    }
    set.add(std::move(schema), it->get<std::string>());
  }
  return set;
}

bool SchemaSet::contains(std::string_view task) const { return schemas_.find(task) != schemas_.end(); }

const Schema& SchemaSet::at(std::string_view task) const {
  auto it = schemas_.find(task);
  if (it == schemas_.end()) throw Error(ErrorCode::UnknownTask, std::string(task));
  return it->second;
}

const std::string& SchemaSet::domain_of(std::string_view task) const {
  auto it = domains_.find(task);
  if (it == domains_.end()) throw Error(ErrorCode::UnknownTask, std::string(task));
  return it->second;
}

std::vector<std::string> SchemaSet::tasks() const {
  std::vector<std::string> out;
  for (const auto& [task, s] : schemas_) out.push_back(task);
  return out;
}

std::vector<std::string> SchemaSet::domains() const {
  std::set<std::string> out;
  for (const auto& [task, d] : domains_) out.insert(d);
  return {out.begin(), out.end()};
}

std::vector<std::string> SchemaSet::tasks_in_domain(std::string_view domain) const {
  std::vector<std::string> out;
  for (const auto& [task, d] : domains_) {
    if (d == domain) out.push_back(task);
  }
  return out;
}

SchemaSet SchemaSet::subset(const std::vector<std::string>& tasks) const {
  SchemaSet out;
  for (const auto& task : tasks) out.add(at(task), domain_of(task));
  return out;
}

}  // namespace schemaflow
