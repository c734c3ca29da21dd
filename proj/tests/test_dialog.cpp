#include <gtest/gtest.h>

#include <random>
#include <set>

#include "schemaflow/dialog.hpp"
#include "schemaflow/error.hpp"
#include "support/random_dialog.hpp"

using namespace schemaflow;

namespace {

// The legal (agent, action) pairs and their fields, written out by hand.
const std::map<std::pair<std::string, std::string>, std::set<std::string>> kShapes{
    {{"User", "utter"}, {"Text"}},
    {{"User", "complete"}, {}},
    {{"Wizard", "request_suggestions"}, {"Text", "PrimaryItem", "SecondaryItem"}},
    {{"Wizard", "pick_suggestion"}, {"Text", "Intent", "IntentOptions", "PrimaryItem", "SecondaryItem"}},
    {{"Wizard", "utter"}, {"Text", "PrimaryItem", "SecondaryItem"}},
    {{"Wizard", "query"}, {"Constraints", "API", "PrimaryItem", "SecondaryItem"}},
    {{"Wizard", "select_topic"}, {"Topic", "PrimaryItem", "SecondaryItem"}},
    {{"Wizard", "select_primary"}, {"PrimaryItem", "SecondaryItem"}},
    {{"Wizard", "select_secondary"}, {"PrimaryItem", "SecondaryItem"}},
    {{"KnowledgeBase", "return"}, {"Item", "TotalItems", "Topic"}},
    {{"UserGuide", "instruct"}, {"Text"}},
};

const std::vector<std::string> kAgentNames{"User", "Wizard", "KnowledgeBase", "UserGuide"};
const std::vector<std::string> kActionNames{"utter",        "complete",       "request_suggestions", "pick_suggestion",
                                            "query",        "select_topic",   "select_primary",      "select_secondary",
                                            "return",       "instruct"};
const std::vector<std::string> kFields{"Text", "Intent", "IntentOptions", "PrimaryItem", "SecondaryItem",
                                       "Constraints", "API", "Topic", "Item", "TotalItems"};

Json field_value(const std::string& field) {
  if (field == "IntentOptions") return Json::array({"ask_name"});
  if (field == "Intent") return "ask_name";
  if (field == "PrimaryItem" || field == "SecondaryItem" || field == "Item") return nullptr;
  if (field == "Constraints") return Json::object();
  if (field == "TotalItems") return -1;
  return "x";
}

Dialog hotel_happy() {
  Dialog d;
  d.dialog_id = 1;
  d.batch_id = "b";
  d.completion_level = "Complete";
  d.scenario.domains = {"hotel"};
  d.scenario.capabilities = {"hotel_service_request"};
  d.scenario.user_task = "order room service";
  d.scenario.wizard_task = "follow the flow chart";
  d.wizard_worker = "W";
  d.user_worker = "U";
  auto pick = [&](const std::string& text, const std::string& intent) {
    d.events.push_back(Event::request_suggestions(intent));
    d.events.push_back(Event::pick_suggestion(text, intent, {intent, "anything_else"}));
  };
  d.events.push_back(Event::user_utter("I would like to make a service request for 6 am"));
  pick("Could I get your name, please?", "ask_name");
  d.events.push_back(Event::user_utter("Mark"));
  pick("At what hotel are you currently staying?", "hotel_ask_hotel");
  d.events.push_back(Event::user_utter("Old Town Inn room 359"));
  pick("Right, please let us know your request now.", "hotel_ask_request");
  d.events.push_back(Event::user_utter("I want to order medium rare steak and a glass of red wine"));
  d.events.push_back(Event::query({make_constraint("RoomNumber", ConstraintOp::Eq, std::string("359")),
                                   make_constraint("Time", ConstraintOp::Eq, std::string("6 am"))},
                                  "hotel_service_request"));
  QueryResult r;
  r.total_items = 1;
  r.item = KbItem{{{"RequestStatus", std::string("Request Confirmed")},
                   {"RoomNumber", std::string("359")},
                   {"Time", std::string("6 am")}}};
  d.events.push_back(Event::kb_return(r, "hotel_service_request"));
  pick("Your request has been submitted successfully. A member of the service team will knock on the door of room 359 at 6 am!",
       "hotel_inform_request_successful");
  d.events.push_back(Event::user_utter("okay thanks"));
  pick("Is there anything else that I can do for you?", "anything_else");
  d.events.push_back(Event::user_complete());
  return d;
}

}  // namespace

TEST(Dialog, ShapeMatrixMatchesTable) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> coin(0, 1);
  int accepted = 0;
  for (int trial = 0; trial < 4000; ++trial) {
    const auto& agent = kAgentNames[trial % kAgentNames.size()];
    const auto& action = kActionNames[(trial / 4) % kActionNames.size()];
    auto shape = kShapes.find({agent, action});
    std::set<std::string> fields;
    if (shape != kShapes.end() && trial % 3 == 0) {
      fields = shape->second;
    } else {
      for (const auto& f : kFields) {
        if (coin(rng)) fields.insert(f);
      }
    }
    Json j{{"Agent", agent}, {"Action", action}};
    for (const auto& f : fields) j[f] = field_value(f);
    bool expected = shape != kShapes.end() && shape->second == fields;
    bool valid = true;
    try {
      event_from_json(j);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::IllegalEventShape);
      valid = false;
    }
    EXPECT_EQ(valid, expected) << j.dump();
    accepted += valid ? 1 : 0;
  }
  EXPECT_GT(accepted, 100);
}

TEST(Dialog, UserCompleteHasNoFields) {
  auto e = event_from_json(Json::parse(R"({"Agent":"User","Action":"complete"})"));
  EXPECT_EQ(e, Event::user_complete());
}

TEST(Dialog, UsersNeverQuery) {
  try {
    event_from_json(Json::parse(R"({"Agent":"User","Action":"query"})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IllegalEventShape);
  }
}

TEST(Dialog, IntentMustBeAnOption) {
  EXPECT_THROW(Event::pick_suggestion("t", "bye", {"hello"}), Error);
  EXPECT_NO_THROW(Event::pick_suggestion("t", "custom", {"hello"}));
}

TEST(Dialog, MinimalDialogSerializes) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  d.events.push_back(Event::user_utter("hi"));
  auto text = write_dialog(d);
  EXPECT_NE(text.find("\"Events\": ["), std::string::npos);
  EXPECT_NE(text.find("\"Action\": \"utter\""), std::string::npos);
  EXPECT_NE(text.find("\"FORMAT-VERSION\": 6"), std::string::npos);
  EXPECT_EQ(read_dialog(text), d);
}

TEST(Dialog, TranscriptRoundTripsAndSequence) {
  auto d = hotel_happy();
  auto text = write_dialog(d);
  EXPECT_EQ(read_dialog(text), d);
  EXPECT_EQ(write_dialog(read_dialog(text)), text);
  std::vector<std::string> expected{"ask_name", "hotel_ask_hotel", "hotel_ask_request", "query hotel_service_request",
                                    "hotel_inform_request_successful", "anything_else"};
  EXPECT_EQ(wizard_action_sequence(d), expected);
  EXPECT_EQ(wizard_action_sequence(d, std::string("hotel_service_request")), expected);
  EXPECT_TRUE(wizard_action_sequence(d, std::string("other")).empty());
  // 5 user utterances, 5 picks and 1 query.
  EXPECT_EQ(count_turns(d), 11u);
}

TEST(Dialog, NegativeTotalItemsPreserved) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  QueryResult r;
  r.total_items = -1;
  d.events.push_back(Event::kb_return(r, "t"));
  auto back = read_dialog(write_dialog(d));
  EXPECT_EQ(*back.events[0].total_items, -1);
}

TEST(Dialog, ZeroWizardEvents) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  d.events.push_back(Event::user_utter("hello"));
  EXPECT_TRUE(wizard_action_sequence(d).empty());
}

TEST(Dialog, VersionMismatch) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  auto j = Json::parse(write_dialog(d));
  j["FORMAT-VERSION"] = 5;
  try {
    read_dialog(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
  }
}

TEST(Dialog, MalformedJson) {
  try {
    read_dialog("{");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedJson);
  }
}

TEST(Dialog, UnknownFieldsPreserved) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  auto j = Json::parse(write_dialog(d));
  j["Extra"] = {1, 2};
  j["Scenario"]["Note"] = "n";
  j["Events"] = Json::array({Json{{"Agent", "User"}, {"Action", "utter"}, {"Text", "hi"}, {"UnixTime", 17}}});
  auto back = read_dialog(j.dump());
  EXPECT_EQ(Json::parse(write_dialog(back)), j);
}

TEST(Dialog, CapabilityObjectsRoundTrip) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  auto j = Json::parse(write_dialog(d));
  j["Scenario"]["WizardCapabilities"] = Json::array({Json{{"Task", "weather"}, {"Domain", "weather"}}});
  auto back = read_dialog(j.dump());
  EXPECT_EQ(back.scenario.capabilities, std::vector<std::string>{"weather"});
  EXPECT_EQ(Json::parse(write_dialog(back)), j);
}

TEST(Dialog, CollapsedWizardUtter) {
  Dialog d;
  d.scenario.capabilities = {"t"};
  d.events.push_back(Event::pick_suggestion("Hi", "hello", {"hello"}));
  d.events.push_back(Event::wizard_utter("Hi"));
  d.events.push_back(Event::wizard_utter("Something else"));
  EXPECT_EQ(count_turns(d), 2u);
  EXPECT_EQ(view_dialog(d).turns.size(), 2u);
}

TEST(Dialog, RandomRoundTrip) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    auto d = schemaflow::testing::random_dialog(rng, i);
    auto text = write_dialog(d);
    auto back = read_dialog(text);
    ASSERT_EQ(back, d) << text;
    ASSERT_EQ(write_dialog(back), text);
  }
}
