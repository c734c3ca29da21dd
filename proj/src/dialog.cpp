#include "schemaflow/dialog.hpp"

#include <algorithm>
#include <array>

#include "schemaflow/error.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

namespace {

constexpr std::array<std::pair<Agent, std::string_view>, 4> kAgents{{
    {Agent::User, "User"},
    {Agent::Wizard, "Wizard"},
    {Agent::KnowledgeBase, "KnowledgeBase"},
    {Agent::UserGuide, "UserGuide"},
}};

constexpr std::array<std::pair<EventAction, std::string_view>, 10> kActions{{
    {EventAction::Utter, "utter"},
    {EventAction::Complete, "complete"},
    {EventAction::RequestSuggestions, "request_suggestions"},
    {EventAction::PickSuggestion, "pick_suggestion"},
    {EventAction::Query, "query"},
    {EventAction::SelectTopic, "select_topic"},
    {EventAction::SelectPrimary, "select_primary"},
    {EventAction::SelectSecondary, "select_secondary"},
    {EventAction::Return, "return"},
    {EventAction::Instruct, "instruct"},
}};

enum Field : unsigned {
  kText = 1U << 0,
  kIntent = 1U << 1,
  kIntentOptions = 1U << 2,
  kPrimaryItem = 1U << 3,
  kSecondaryItem = 1U << 4,
  kConstraints = 1U << 5,
  kApi = 1U << 6,
  kTopic = 1U << 7,
  kItem = 1U << 8,
  kTotalItems = 1U << 9,
};

constexpr std::array<std::pair<Field, std::string_view>, 10> kFieldNames{{
    {kText, "Text"},
    {kIntent, "Intent"},
    {kIntentOptions, "IntentOptions"},
    {kPrimaryItem, "PrimaryItem"},
    {kSecondaryItem, "SecondaryItem"},
    {kConstraints, "Constraints"},
    {kApi, "API"},
    {kTopic, "Topic"},
    {kItem, "Item"},
    {kTotalItems, "TotalItems"},
}};

constexpr unsigned kSelection = kPrimaryItem | kSecondaryItem;

// Required field set per legal (agent, action); nothing for illegal pairs.
std::optional<unsigned> required_fields(Agent agent, EventAction action) {
  switch (agent) {
    case Agent::User:
      if (action == EventAction::Utter) return kText;
      if (action == EventAction::Complete) return 0U;
      return std::nullopt;
    case Agent::Wizard:
      switch (action) {
        case EventAction::RequestSuggestions: return kText | kSelection;
        case EventAction::PickSuggestion: return kText | kIntent | kIntentOptions | kSelection;
        case EventAction::Utter: return kText | kSelection;
        case EventAction::Query: return kConstraints | kApi | kSelection;
        case EventAction::SelectTopic: return kTopic | kSelection;
        case EventAction::SelectPrimary:
        case EventAction::SelectSecondary: return kSelection;
        default: return std::nullopt;
      }
    case Agent::KnowledgeBase:
      if (action == EventAction::Return) return kItem | kTotalItems | kTopic;
      return std::nullopt;
    case Agent::UserGuide:
      if (action == EventAction::Instruct) return kText;
      return std::nullopt;
  }
  return std::nullopt;
}

unsigned present_fields(const Event& e) {
  unsigned mask = 0;
  if (e.text) mask |= kText;
  if (e.intent) mask |= kIntent;
  if (e.intent_options) mask |= kIntentOptions;
  if (e.primary_item) mask |= kPrimaryItem;
  if (e.secondary_item) mask |= kSecondaryItem;
  if (e.constraints) mask |= kConstraints;
  if (e.api) mask |= kApi;
  if (e.topic) mask |= kTopic;
  if (e.item) mask |= kItem;
  if (e.total_items) mask |= kTotalItems;
  return mask;
}

std::string shape_subject(const Event& e) {
  return std::string(to_string(e.agent)) + "/" + std::string(to_string(e.action));
}

bool item_like(const std::optional<Json>& j) { return !j || j->is_null() || j->is_object(); }

Json selection_json(const KbItem* item) { return item == nullptr ? Json(nullptr) : item_to_json(*item); }

}  // namespace

std::string_view to_string(Agent agent) {
  for (const auto& [a, name] : kAgents) {
    if (a == agent) return name;
  }
  return "User";
}

std::string_view to_string(EventAction action) {
  for (const auto& [a, name] : kActions) {
    if (a == action) return name;
  }
  return "utter";
}

std::optional<Agent> agent_from_string(std::string_view s) {
  for (const auto& [a, name] : kAgents) {
    if (name == s) return a;
  }
  return std::nullopt;
}

std::optional<EventAction> action_from_string(std::string_view s) {
  for (const auto& [a, name] : kActions) {
    if (name == s) return a;
  }
  return std::nullopt;
}

void validate_event(const Event& e) {
  auto required = required_fields(e.agent, e.action);
  if (!required) throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "agent never performs this action");
  unsigned present = present_fields(e);
  for (const auto& [bit, name] : kFieldNames) {
    if ((*required & bit) != 0 && (present & bit) == 0) {
      throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "missing field " + std::string(name));
    }
    if ((*required & bit) == 0 && (present & bit) != 0) {
      throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "unexpected field " + std::string(name));
    }
  }
  if (e.intent && e.intent_options && *e.intent != "custom" &&
      std::find(e.intent_options->begin(), e.intent_options->end(), *e.intent) == e.intent_options->end()) {
    throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "Intent not among IntentOptions");
  }
  if (e.total_items && *e.total_items < -1) throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "TotalItems < -1");
  if (!item_like(e.item) || !item_like(e.primary_item) || !item_like(e.secondary_item)) {
    throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "KB items must be objects or null");
  }
  if (e.constraints && !e.constraints->is_object()) {
    throw Error(ErrorCode::IllegalEventShape, shape_subject(e), "Constraints must be an object");
  }
}

Event Event::user_utter(std::string text) {
  Event e;
  e.agent = Agent::User;
  e.action = EventAction::Utter;
  e.text = std::move(text);
  return e;
}

Event Event::user_complete() {
  Event e;
  e.agent = Agent::User;
  e.action = EventAction::Complete;
  return e;
}

Event Event::request_suggestions(std::string query) {
  Event e;
  e.agent = Agent::Wizard;
  e.action = EventAction::RequestSuggestions;
  e.text = std::move(query);
  e.primary_item = selection_json(nullptr);
  e.secondary_item = selection_json(nullptr);
  return e;
}

Event Event::pick_suggestion(std::string text, std::string intent, std::vector<std::string> options) {
  Event e;
  e.agent = Agent::Wizard;
  e.action = EventAction::PickSuggestion;
  e.text = std::move(text);
  e.intent = std::move(intent);
  e.intent_options = std::move(options);
  e.primary_item = selection_json(nullptr);
  e.secondary_item = selection_json(nullptr);
  validate_event(e);
  return e;
}

Event Event::wizard_utter(std::string text) {
  Event e;
  e.agent = Agent::Wizard;
  e.action = EventAction::Utter;
  e.text = std::move(text);
  e.primary_item = selection_json(nullptr);
  e.secondary_item = selection_json(nullptr);
  return e;
}

Event Event::query(const std::vector<Constraint>& constraints, std::string api) {
  Event e;
  e.agent = Agent::Wizard;
  e.action = EventAction::Query;
  e.constraints = constraints_to_json(constraints);
  e.api = std::move(api);
  e.primary_item = selection_json(nullptr);
  e.secondary_item = selection_json(nullptr);
  return e;
}

Event Event::select_topic(std::string topic) {
  Event e;
  e.agent = Agent::Wizard;
  e.action = EventAction::SelectTopic;
  e.topic = std::move(topic);
  e.primary_item = selection_json(nullptr);
  e.secondary_item = selection_json(nullptr);
  return e;
}

Event Event::kb_return(const QueryResult& result, std::string topic) {
  Event e;
  e.agent = Agent::KnowledgeBase;
  e.action = EventAction::Return;
  e.item = result.item ? item_to_json(*result.item) : Json(nullptr);
  e.total_items = result.total_items;
  e.topic = std::move(topic);
  return e;
}

Event Event::instruct(std::string text) {
  Event e;
  e.agent = Agent::UserGuide;
  e.action = EventAction::Instruct;
  e.text = std::move(text);
  return e;
}

Json event_to_json(const Event& e) {
  validate_event(e);
  Json j = e.extras;
  j["Agent"] = to_string(e.agent);
  j["Action"] = to_string(e.action);
  if (e.text) j["Text"] = *e.text;
  if (e.intent) j["Intent"] = *e.intent;
  if (e.intent_options) j["IntentOptions"] = *e.intent_options;
  if (e.primary_item) j["PrimaryItem"] = *e.primary_item;
  if (e.secondary_item) j["SecondaryItem"] = *e.secondary_item;
  if (e.constraints) j["Constraints"] = *e.constraints;
  if (e.api) j["API"] = *e.api;
  if (e.topic) j["Topic"] = *e.topic;
  if (e.item) j["Item"] = *e.item;
  if (e.total_items) j["TotalItems"] = *e.total_items;
  return j;
}

namespace {

std::string string_field(const Json& j, const char* key, const std::string& subject) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw Error(ErrorCode::IllegalEventShape, subject, std::string(key) + " must be a string");
  return v.get<std::string>();
}

}  // namespace

Event event_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::IllegalEventShape, "event", "event must be an object");
  if (!j.contains("Agent") || !j.contains("Action") || !j["Agent"].is_string() || !j["Action"].is_string()) {
    throw Error(ErrorCode::IllegalEventShape, "event", "missing Agent or Action");
  }
  auto agent = agent_from_string(j["Agent"].get<std::string>());
  auto action = action_from_string(j["Action"].get<std::string>());
  if (!agent || !action) {
    throw Error(ErrorCode::IllegalEventShape, j["Agent"].get<std::string>() + "/" + j["Action"].get<std::string>(),
                "unknown agent or action");
  }
  Event e;
  e.agent = *agent;
  e.action = *action;
  const auto subject = shape_subject(e);
  for (const auto& [key, value] : j.items()) {
    if (key == "Agent" || key == "Action") continue;
    if (key == "Text") {
      e.text = string_field(j, "Text", subject);
    } else if (key == "Intent") {
      e.intent = string_field(j, "Intent", subject);
    } else if (key == "IntentOptions") {
      if (!value.is_array()) throw Error(ErrorCode::IllegalEventShape, subject, "IntentOptions must be a list");
      std::vector<std::string> options;
      for (const auto& o : value) {
        if (!o.is_string()) throw Error(ErrorCode::IllegalEventShape, subject, "IntentOptions entries must be strings");
        options.push_back(o.get<std::string>());
      }
      e.intent_options = std::move(options);
    } else if (key == "PrimaryItem") {
      e.primary_item = value;
    } else if (key == "SecondaryItem") {
      e.secondary_item = value;
    } else if (key == "Constraints") {
      e.constraints = value;
    } else if (key == "API") {
      e.api = string_field(j, "API", subject);
    } else if (key == "Topic") {
      e.topic = string_field(j, "Topic", subject);
    } else if (key == "Item") {
      e.item = value;
    } else if (key == "TotalItems") {
      if (!value.is_number_integer()) throw Error(ErrorCode::IllegalEventShape, subject, "TotalItems must be an integer");
      e.total_items = value.get<std::int64_t>();
    } else {
      e.extras[key] = value;
    }
  }
  validate_event(e);
  return e;
}

namespace {

const Json& require(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::MissingField, key);
  return *it;
}

template <typename T>
T require_as(const Json& j, const char* key) {
  const auto& v = require(j, key);
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::InvalidField, key, "unexpected type " + std::string(v.type_name()));
  }
}

std::string capability_name(const Json& c) {
  if (c.is_string()) return c.get<std::string>();
  if (c.is_object()) {
    for (const char* key : {"Task", "task", "Name", "name"}) {
      auto it = c.find(key);
      if (it != c.end() && it->is_string()) return it->get<std::string>();
    }
  }
  throw Error(ErrorCode::InvalidField, "WizardCapabilities", "cannot determine task name of " + c.dump());
}

Scenario scenario_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidField, "Scenario", "must be an object");
  Scenario s;
  s.domains = require_as<std::vector<std::string>>(j, "Domains");
  s.user_task = require_as<std::string>(j, "UserTask");
  s.wizard_task = require_as<std::string>(j, "WizardTask");
  const auto& caps = require(j, "WizardCapabilities");
  if (!caps.is_array()) throw Error(ErrorCode::InvalidField, "WizardCapabilities", "must be a list");
  bool plain = std::all_of(caps.begin(), caps.end(), [](const Json& c) { return c.is_string(); });
  for (const auto& c : caps) s.capabilities.push_back(capability_name(c));
  if (!plain) s.capabilities_raw = caps;
  s.happy = require_as<bool>(j, "Happy");
  s.multi_task = require_as<bool>(j, "MultiTask");
  if (s.multi_task != (s.capabilities.size() > 1)) {
    throw Error(ErrorCode::InvalidField, "MultiTask", "must be true exactly when there is more than one capability");
  }
  for (const auto& [key, value] : j.items()) {
    static const std::array<std::string_view, 6> known{"Domains", "UserTask", "WizardTask", "WizardCapabilities",
                                                       "Happy", "MultiTask"};
    if (std::find(known.begin(), known.end(), key) == known.end()) s.extras[key] = value;
  }
  return s;
}

Json scenario_to_json(const Scenario& s) {
  Json j = s.extras;
  j["Domains"] = s.domains;
  j["UserTask"] = s.user_task;
  j["WizardTask"] = s.wizard_task;
  j["WizardCapabilities"] = s.capabilities_raw.is_null() ? Json(s.capabilities) : s.capabilities_raw;
  j["Happy"] = s.happy;
  j["MultiTask"] = s.multi_task;
  return j;
}

}  // namespace

Dialog read_dialog(std::string_view raw) {
  Json j = parse_json(raw);
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "document", "dialog must be an object");
  Dialog d;
  d.format_version = require_as<int>(j, "FORMAT-VERSION");
  if (d.format_version != kFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, std::to_string(d.format_version), "expected " + std::to_string(kFormatVersion));
  }
  d.dialog_id = require_as<std::int64_t>(j, "dialogID");
  d.batch_id = require_as<std::string>(j, "BatchID");
  d.completion_level = require_as<std::string>(j, "CompletionLevel");
  d.scenario = scenario_from_json(require(j, "Scenario"));
  const auto& events = require(j, "Events");
  if (!events.is_array()) throw Error(ErrorCode::InvalidField, "Events", "must be a list");
  for (const auto& e : events) d.events.push_back(event_from_json(e));
  d.wizard_worker = require_as<std::string>(j, "AnonymizedWizardWorkerID");
  d.user_worker = require_as<std::string>(j, "AnonymizedUserWorkerID");
  d.user_questionnaire = require(j, "UserQuestionnaire");
  d.wizard_questionnaire = require(j, "WizardQuestionnaire");
  static const std::array<std::string_view, 11> known{
      "FORMAT-VERSION", "dialogID",         "BatchID",           "CompletionLevel", "Scenario",
      "Events",         "AnonymizedWizardWorkerID", "AnonymizedUserWorkerID", "UserQuestionnaire",
      "WizardQuestionnaire", ""};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) d.extras[key] = value;
  }
  return d;
}

std::string write_dialog(const Dialog& d) {
  Json j = d.extras;
  j["FORMAT-VERSION"] = d.format_version;
  j["dialogID"] = d.dialog_id;
  j["BatchID"] = d.batch_id;
  j["CompletionLevel"] = d.completion_level;
  j["Scenario"] = scenario_to_json(d.scenario);
  Json events = Json::array();
  for (const auto& e : d.events) events.push_back(event_to_json(e));
  j["Events"] = std::move(events);
  j["AnonymizedWizardWorkerID"] = d.wizard_worker;
  j["AnonymizedUserWorkerID"] = d.user_worker;
  j["UserQuestionnaire"] = d.user_questionnaire;
  j["WizardQuestionnaire"] = d.wizard_questionnaire;
  return j.dump(2);
}

std::string query_action(std::string_view task) { return "query " + std::string(task); }

std::string_view to_string(Speaker s) {
  switch (s) {
    case Speaker::User: return "user";
    case Speaker::Wizard: return "wizard";
    case Speaker::KnowledgeBase: return "kb";
  }
  return "user";
}

namespace {

std::string flatten_object(const Json& j) {
  if (!j.is_object()) return {};
  std::vector<std::string> parts;
  for (const auto& [key, value] : j.items()) {
    parts.push_back(key + ": " + (value.is_string() ? value.get<std::string>() : value.dump()));
  }
  return join(parts, ", ");
}

}  // namespace

DialogView view_dialog(const Dialog& d) {
  DialogView view;
  std::string topic = d.scenario.capabilities.size() == 1 ? d.scenario.capabilities.front() : std::string{};
  std::optional<std::string> last_pick;
  for (std::size_t i = 0; i < d.events.size(); ++i) {
    const auto& e = d.events[i];
    bool keep_pick = false;
    if (e.agent == Agent::User && e.action == EventAction::Utter) {
      view.turns.push_back({Speaker::User, *e.text});
    } else if (e.agent == Agent::Wizard && e.action == EventAction::PickSuggestion) {
      view.steps.push_back({i, *e.intent, view.turns.size(), *e.text, topic, false});
      view.turns.push_back({Speaker::Wizard, *e.text});
      last_pick = *e.text;
      keep_pick = true;
    } else if (e.agent == Agent::Wizard && e.action == EventAction::Utter) {
      if (!(last_pick && *last_pick == *e.text)) view.turns.push_back({Speaker::Wizard, *e.text});
    } else if (e.agent == Agent::Wizard && e.action == EventAction::Query) {
      topic = *e.api;
      view.steps.push_back({i, query_action(*e.api), view.turns.size(), {}, topic, true});
      std::string text = query_action(*e.api);
      auto constraints = flatten_object(*e.constraints);
      if (!constraints.empty()) text += " " + constraints;
      view.turns.push_back({Speaker::Wizard, text});
    } else if (e.agent == Agent::Wizard && e.action == EventAction::SelectTopic) {
      topic = *e.topic;
    } else if (e.agent == Agent::KnowledgeBase && e.action == EventAction::Return) {
      if (e.topic) topic = *e.topic;
      std::string text = e.item && e.item->is_object() ? flatten_object(*e.item) : std::string("no results");
      view.turns.push_back({Speaker::KnowledgeBase, text});
    } else if (e.agent == Agent::Wizard && e.action == EventAction::RequestSuggestions) {
      keep_pick = last_pick.has_value();
    }
    if (!keep_pick) last_pick.reset();
  }
  return view;
}

std::vector<std::string> wizard_action_sequence(const Dialog& d, const std::optional<std::string>& task) {
  std::vector<std::string> labels;
  for (const auto& step : view_dialog(d).steps) {
    if (!task || step.task == *task) labels.push_back(step.label);
  }
  return labels;
}

std::size_t count_turns(const Dialog& d) {
  std::size_t turns = 0;
  std::optional<std::string> last_pick;
  for (const auto& e : d.events) {
    bool keep_pick = false;
    if (e.action == EventAction::Utter && e.agent == Agent::User) {
      ++turns;
    } else if (e.agent == Agent::Wizard && e.action == EventAction::PickSuggestion) {
      ++turns;
      last_pick = e.text;
      keep_pick = true;
    } else if (e.agent == Agent::Wizard && e.action == EventAction::Utter) {
      if (!(last_pick && *last_pick == *e.text)) ++turns;
    } else if (e.agent == Agent::Wizard && e.action == EventAction::Query) {
      ++turns;
    } else if (e.agent == Agent::Wizard && e.action == EventAction::RequestSuggestions) {
      keep_pick = last_pick.has_value();
    }
    if (!keep_pick) last_pick.reset();
  }
  return turns;
}

}  // namespace schemaflow
