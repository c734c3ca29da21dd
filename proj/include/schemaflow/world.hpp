#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "schemaflow/kb.hpp"
#include "schemaflow/schema.hpp"

namespace schemaflow {

// How one slot of a task is asked, recognized and turned into a KB constraint.
struct SlotSpec {
  std::string slot;
  std::string node;
  std::optional<std::string> field;
  ConstraintOp op = ConstraintOp::Eq;
  std::vector<ResponseTemplate> templates;  // user answer patterns, `{value}` marks the filler
  std::vector<std::string> values;          // closed lexicon of fillers
};

struct TaskProfile {
  std::string task;
  std::vector<std::string> keywords;
  std::vector<std::string> requests;
  std::string kb_table;
  std::string branch_field = "Message";
  std::vector<SlotSpec> slots;
  std::map<std::string, std::vector<Constraint>> query_extras;  // query node -> fixed constraints

  const SlotSpec* slot_for_node(std::string_view node) const;
  const SlotSpec* slot(std::string_view id) const;
};

struct UserPools {
  std::map<std::string, std::vector<std::string>> utterances;
  std::map<int, std::vector<std::string>> refer_back;
  std::map<std::string, std::vector<std::string>> guide;
  std::map<std::string, std::vector<std::string>> slot_templates;
  std::map<std::string, std::vector<std::string>> values;

  // Throws Error(MissingField) for an unknown pool.
  const std::vector<std::string>& pool(std::string_view name) const;
};

struct PolicyLexicon {
  std::vector<std::string> affirm;
  std::vector<std::string> negate;
  std::map<int, std::vector<std::string>> refer_back;
};

struct World {
  SchemaSet schemas;
  KnowledgeBase kb;
  std::map<std::string, TaskProfile, std::less<>> profiles;
  UserPools pools;
  PolicyLexicon lexicon;

  // Expects schemas/, kb/, tasks/, manifest.json, user_pools.json and
  // policy_lexicon.json under `root`.
  static World load(const std::filesystem::path& root);
  static std::filesystem::path default_root();

  const TaskProfile& profile(std::string_view task) const;
  // Same world with only the given tasks.
  World restricted(const std::vector<std::string>& tasks) const;
  // task -> keywords, as consumed by detect_task.
  std::map<std::string, std::vector<std::string>> task_lexicon() const;
};

}  // namespace schemaflow
