#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/dialog.hpp"
#include "schemaflow/kb.hpp"
#include "schemaflow/world.hpp"

namespace schemaflow {

struct TaskState {
  std::optional<std::string> cursor;         // last executed schema node
  std::map<std::string, std::string> slots;  // collected slot values
  std::vector<std::string> asked;            // slot-asking nodes in emission order
  std::optional<QueryResult> last_kb;

  bool operator==(const TaskState&) const = default;
};

struct DialogState {
  std::vector<std::string> capabilities;
  std::optional<std::string> active_task;
  std::map<std::string, TaskState> tasks;
  bool greeted = false;

  bool operator==(const DialogState&) const = default;

  const TaskState* task_state(std::string_view task) const;
  std::optional<std::string> cursor() const;
  std::map<std::string, std::string> collected_slots() const;
  std::optional<QueryResult> last_kb() const;
};

DialogState initial_state(std::vector<std::string> capabilities);

struct KbQuery {
  std::string table;
  std::string api;
  std::vector<Constraint> constraints;
};

struct Decision {
  std::string action;  // node label, or `query <task>` when `query` is set
  std::string node;    // schema node executed; the query node for queries
  std::string task;    // empty while no task is active
  std::optional<KbQuery> query;
  bool switched_task = false;
  DialogState state;
};

// Next wizard action for a user event. Throws Error(NoActiveSchema) when no
// task can be determined after the greeting.
Decision decide(const DialogState& state, const World& world, const Event& user_event);
// Next wizard action once the KB answered the pending query.
Decision resume_after_kb(const DialogState& state, const World& world, const QueryResult& result);

// Keyword scoring: most keyword hits wins, ties go to the earliest mention,
// then to capability order.
std::optional<std::string> detect_task(std::string_view utterance, const std::vector<std::string>& capabilities,
                                       const std::map<std::string, std::vector<std::string>>& lexicon);

struct SlotRule {
  std::vector<ResponseTemplate> templates;
  std::vector<std::string> values;
};

// First tries each expected slot's answer templates against the whole
// utterance, then falls back to a word-bounded lexicon search.
std::map<std::string, std::string> extract_slots(std::string_view utterance, const std::vector<std::string>& expected,
                                                 const std::map<std::string, SlotRule>& rules);

enum class Polarity { None, Yes, No };
Polarity detect_polarity(std::string_view utterance, const PolicyLexicon& lexicon);
// Distance of a vague reference to an earlier answer (1 = last answer).
std::optional<int> detect_refer_back(std::string_view utterance, const PolicyLexicon& lexicon);

// Slot-asking nodes on the main path after the root, then the first query.
std::vector<std::string> prescribed_actions(const Schema& schema, const TaskProfile& profile);

// Action label a node produces: `query <task>` for query nodes, else the label.
std::string action_of_node(const Schema& schema, std::string_view node);

}  // namespace schemaflow
