#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/json_io.hpp"
#include "schemaflow/kb.hpp"

namespace schemaflow {

inline constexpr int kFormatVersion = 6;

enum class Agent { User, Wizard, KnowledgeBase, UserGuide };
enum class EventAction {
  Utter,
  Complete,
  RequestSuggestions,
  PickSuggestion,
  Query,
  SelectTopic,
  SelectPrimary,
  SelectSecondary,
  Return,
  Instruct,
};

std::string_view to_string(Agent agent);
std::string_view to_string(EventAction action);
std::optional<Agent> agent_from_string(std::string_view s);
std::optional<EventAction> action_from_string(std::string_view s);

// One dialog event. Which optional fields are present depends on
// (agent, action); validate_event enforces the table of legal shapes.
// KB items are kept as raw JSON objects (or null) so corpus files
// round-trip exactly; use item_from_json for typed access.
struct Event {
  Agent agent = Agent::User;
  EventAction action = EventAction::Utter;
  std::optional<std::string> text;
  std::optional<std::string> intent;
  std::optional<std::vector<std::string>> intent_options;
  std::optional<Json> constraints;
  std::optional<std::string> api;
  std::optional<Json> primary_item;
  std::optional<Json> secondary_item;
  std::optional<Json> item;
  std::optional<std::int64_t> total_items;
  std::optional<std::string> topic;
  Json extras = Json::object();

  bool operator==(const Event&) const = default;

  static Event user_utter(std::string text);
  static Event user_complete();
  static Event request_suggestions(std::string query);
  static Event pick_suggestion(std::string text, std::string intent, std::vector<std::string> options);
  static Event wizard_utter(std::string text);
  static Event query(const std::vector<Constraint>& constraints, std::string api);
  static Event select_topic(std::string topic);
  static Event kb_return(const QueryResult& result, std::string topic);
  static Event instruct(std::string text);
};

// Throws Error(IllegalEventShape) naming the offending field.
void validate_event(const Event& e);
Json event_to_json(const Event& e);
Event event_from_json(const Json& j);

struct Scenario {
  std::vector<std::string> domains;
  std::string user_task;
  std::string wizard_task;
  std::vector<std::string> capabilities;
  // Original capability entries when they were not plain task names.
  Json capabilities_raw;
  bool happy = true;
  bool multi_task = false;
  Json extras = Json::object();

  bool operator==(const Scenario&) const = default;
};

struct Dialog {
  int format_version = kFormatVersion;
  std::int64_t dialog_id = 0;
  std::string batch_id;
  std::string completion_level;
  Scenario scenario;
  std::vector<Event> events;
  std::string wizard_worker;
  std::string user_worker;
  Json user_questionnaire = Json::array();
  Json wizard_questionnaire = Json::array();
  Json extras = Json::object();

  bool operator==(const Dialog&) const = default;
};

Dialog read_dialog(std::string_view raw);
// Canonical form: keys sorted, two-space indentation.
std::string write_dialog(const Dialog& d);

// Labels of wizard turns: pick_suggestion intents and `query <api>` for
// queries, optionally restricted to one task.
std::vector<std::string> wizard_action_sequence(const Dialog& d, const std::optional<std::string>& task = std::nullopt);

std::string query_action(std::string_view task);

// Counts utter, pick_suggestion and query events; a wizard utter repeating
// the preceding pick_suggestion text is part of the same turn.
std::size_t count_turns(const Dialog& d);

enum class Speaker { User, Wizard, KnowledgeBase };
std::string_view to_string(Speaker s);

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;

  bool operator==(const Turn&) const = default;
};

// A wizard decision point: the action taken, the number of turns that
// precede it, and the text the wizard produced.
struct WizardStep {
  std::size_t event_index = 0;
  std::string label;
  std::size_t history_size = 0;
  std::string response;
  std::string task;
  bool is_query = false;
};

struct DialogView {
  std::vector<Turn> turns;
  std::vector<WizardStep> steps;
};

DialogView view_dialog(const Dialog& d);

}  // namespace schemaflow
