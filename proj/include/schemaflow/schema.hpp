#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/error.hpp"

namespace schemaflow {

// True when `label` is a non-empty string over [a-z0-9_].
bool is_valid_action_label(std::string_view label);

// A `{identifier:formatspec}` occurrence; [begin, end) is its byte span.
struct Placeholder {
  std::string identifier;
  std::string format;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Placeholder&) const = default;
};

class ResponseTemplate {
 public:
  ResponseTemplate() = default;

  // Throws Error(InvalidTemplate) for unbalanced braces or bad identifiers.
  static ResponseTemplate parse(std::string text);
  // Returns a description of the first problem, or nothing if `text` is valid.
  static std::optional<std::string> check(std::string_view text);

  const std::string& text() const noexcept { return text_; }
  const std::vector<Placeholder>& placeholders() const noexcept { return placeholders_; }
  // Distinct identifiers in order of first appearance.
  std::vector<std::string> identifiers() const;

  bool operator==(const ResponseTemplate& other) const { return text_ == other.text_; }

 private:
  std::string text_;
  std::vector<Placeholder> placeholders_;
};

// Substitutes every placeholder. Format specs are retained but all values
// are substituted as strings. Throws Error(MissingPlaceholderValue).
std::string fill_template(const ResponseTemplate& t, const std::map<std::string, std::string>& values);

// Substitutes placeholders that `resolve` can answer and replaces the rest
// with `on_missing(id)`; missing identifiers are reported in order.
struct PartialFill {
  std::string text;
  std::vector<std::string> missing;
};
PartialFill fill_template_partial(const ResponseTemplate& t,
                                  const std::function<std::optional<std::string>(const std::string&)>& resolve,
                                  const std::function<std::string(const std::string&)>& on_missing);

// Inverse of fill_template: if `text` can be produced from `t`, returns the
// captured values (non-empty, repeated identifiers capture equal strings).
// Literal text is compared case-insensitively.
std::optional<std::map<std::string, std::string>> match_template(const ResponseTemplate& t, std::string_view text);

enum class NodeKind { Root, Query, UserBranch, KbBranch, Reply };

class Schema {
 public:
  Schema() = default;

  const std::string& task() const noexcept { return task_; }
  const std::map<std::string, ResponseTemplate>& replies() const noexcept { return replies_; }
  const std::map<std::string, std::string>& graph() const noexcept { return graph_; }

  bool has_node(std::string_view node) const;
  // Graph successor of `node`, absent for terminals. Throws Error(UnknownNode).
  std::optional<std::string> next_node(std::string_view node) const;
  const std::string& node_text(std::string_view node) const;
  const ResponseTemplate& reply(std::string_view node) const;

  // `hello` when defined, otherwise the smallest graph key that is never a
  // graph value. Absent for an empty graph.
  std::optional<std::string> root() const;
  NodeKind kind(std::string_view node) const;
  // Nodes reached by repeatedly applying next_node from the root, stopping
  // before the first repeated node.
  std::vector<std::string> main_path() const;
  // Graph keys that are never a graph value, excluding the root.
  std::vector<std::string> branch_nodes() const;

  std::optional<std::string> farewell_node() const;
  std::optional<std::string> nothing_found_node() const;
  // Distinct placeholder identifiers over all replies, sorted.
  std::vector<std::string> placeholder_identifiers() const;

  bool operator==(const Schema&) const = default;

 private:
  friend Schema parse_schema(std::string_view raw);
  friend Schema make_schema(std::string task, std::map<std::string, std::string> replies,
                            std::map<std::string, std::string> graph);

  std::string task_;
  std::map<std::string, ResponseTemplate> replies_;
  std::map<std::string, std::string> graph_;
};

bool is_query_label(std::string_view label);
bool is_farewell_label(std::string_view label);

// Every violation in a schema document; empty when valid.
std::vector<Violation> validate_schema(std::string_view raw);
// Throws ValidationError listing all violations.
Schema parse_schema(std::string_view raw);
// Validates in-memory parts the same way parse_schema does.
Schema make_schema(std::string task, std::map<std::string, std::string> replies,
                   std::map<std::string, std::string> graph);
std::string serialize_schema(const Schema& s);

// Free-function forms of the Schema queries.
std::optional<std::string> next_node(const Schema& s, std::string_view node);
const std::string& node_text(const Schema& s, std::string_view node);

class SchemaSet {
 public:
  // Throws Error(InvalidField) if the task is already present.
  void add(Schema schema, std::string domain);
  // Loads every `*.json` schema in `schema_dir` plus the task→domain manifest.
  static SchemaSet load(const std::filesystem::path& schema_dir, const std::filesystem::path& manifest);

  bool contains(std::string_view task) const;
  const Schema& at(std::string_view task) const;
  const std::string& domain_of(std::string_view task) const;
  std::vector<std::string> tasks() const;
  std::vector<std::string> domains() const;
  std::vector<std::string> tasks_in_domain(std::string_view domain) const;
  SchemaSet subset(const std::vector<std::string>& tasks) const;
  std::size_t size() const noexcept { return schemas_.size(); }
  bool empty() const noexcept { return schemas_.empty(); }

 private:
  std::map<std::string, Schema, std::less<>> schemas_;
  std::map<std::string, std::string, std::less<>> domains_;
};

}  // namespace schemaflow
