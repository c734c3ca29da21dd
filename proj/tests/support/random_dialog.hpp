#pragma once

#include <random>
#include <string>

#include "schemaflow/dialog.hpp"

namespace schemaflow::testing {

inline std::string random_word(std::mt19937_64& rng) {
  static const char* words[] = {"yes", "Dr. Lee", "2 pm", "hotel", "\"quoted\"", "caf\xc3\xa9", "a\nb", "", "{x:s}", "tab\t"};
  std::uniform_int_distribution<int> pick(0, 9);
  return words[pick(rng)];
}

inline Json random_item(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 3);
  if (coin(rng) == 0) return nullptr;
  Json j = Json::object();
  j["Name"] = random_word(rng);
  j["Rating"] = coin(rng);
  j["Open"] = coin(rng) % 2 == 0;
  return j;
}

// A structurally valid dialog with every event shape represented at random.
inline Dialog random_dialog(std::mt19937_64& rng, std::int64_t id) {
  std::uniform_int_distribution<int> kind(0, 10), count(0, 25), coin(0, 1), total(-1, 40);
  Dialog d;
  d.dialog_id = id;
  d.batch_id = "batch-" + std::to_string(id % 7);
  d.completion_level = coin(rng) ? "Complete" : "UserDisconnect";
  int n_caps = 1 + count(rng) % 3;
  for (int i = 0; i < n_caps; ++i) d.scenario.capabilities.push_back("task_" + std::to_string(i));
  d.scenario.multi_task = n_caps > 1;
  d.scenario.happy = coin(rng) == 1;
  d.scenario.domains = {"d" + std::to_string(id % 3)};
  d.scenario.user_task = random_word(rng);
  d.scenario.wizard_task = random_word(rng);
  d.wizard_worker = "W" + std::to_string(id);
  d.user_worker = "U" + std::to_string(id);
  if (coin(rng)) d.user_questionnaire.push_back(Json::array({"Q1", random_word(rng)}));
  if (coin(rng)) d.extras["Notes"] = random_word(rng);
  int n = count(rng);
  for (int i = 0; i < n; ++i) {
    Event e;
    switch (kind(rng)) {
      case 0: e = Event::user_utter(random_word(rng)); break;
      case 1: e = Event::user_complete(); break;
      case 2: e = Event::request_suggestions(random_word(rng)); break;
      case 3: e = Event::pick_suggestion(random_word(rng), coin(rng) ? "custom" : "ask_name", {"ask_name", "hello"}); break;
      case 4: e = Event::wizard_utter(random_word(rng)); break;
      case 5:
        e = Event::query({make_constraint("Name", ConstraintOp::Eq, random_word(rng)),
                          make_constraint("Rating", ConstraintOp::Gt, std::int64_t{total(rng)})},
                         "task_0");
        break;
      case 6: e = Event::select_topic("task_1"); break;
      case 7: {
        QueryResult r;
        r.total_items = total(rng);
        e = Event::kb_return(r, "task_0");
        e.item = random_item(rng);
        break;
      }
      case 8: e = Event::instruct(random_word(rng)); break;
      case 9:
        e.agent = Agent::Wizard;
        e.action = coin(rng) ? EventAction::SelectPrimary : EventAction::SelectSecondary;
        e.primary_item = random_item(rng);
        e.secondary_item = random_item(rng);
        break;
      default:
        e = Event::user_utter(random_word(rng));
        e.extras["UnixTime"] = static_cast<std::int64_t>(1600000000 + i);
        break;
    }
    d.events.push_back(std::move(e));
  }
  return d;
}

}  // namespace schemaflow::testing
