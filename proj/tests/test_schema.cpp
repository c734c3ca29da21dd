#include <gtest/gtest.h>

#include "schemaflow/json_io.hpp"
#include "schemaflow/schema.hpp"
#include "schemaflow/world.hpp"

using namespace schemaflow;

namespace {

std::string doctor_text() { return read_text_file(World::default_root() / "schemas" / "book_doctor_appointment.json"); }

// Edge list of the doctor fixture, typed out independently of the file.
const std::vector<std::pair<std::string, std::string>> kDoctorEdges{
    {"hello", "ask_name"},
    {"ask_name", "doctor_ask_doctor_name"},
    {"doctor_ask_doctor_name", "doctor_ask_day"},
    {"doctor_ask_day", "doctor_ask_start_time"},
    {"doctor_ask_start_time", "doctor_ask_symptoms"},
    {"doctor_ask_symptoms", "query_check"},
    {"available", "doctor_inform_booking_available"},
    {"unavailable", "doctor_inform_booking_unavailable"},
    {"yes", "query_book"},
    {"no", "doctor_ask_doctor_name"},
    {"query_book", "doctor_inform_booking_successful"},
    {"doctor_inform_booking_successful", "anything_else"},
};

}  // namespace

TEST(Schema, DoctorFixtureShape) {
  auto s = parse_schema(doctor_text());
  EXPECT_EQ(s.task(), "book_doctor_appointment");
  EXPECT_EQ(s.replies().size(), 19u);
  EXPECT_EQ(s.graph().size(), 12u);
  EXPECT_EQ(s.graph().at("hello"), "ask_name");
}

TEST(Schema, DoctorEdgesReproduced) {
  auto s = parse_schema(doctor_text());
  for (const auto& [from, to] : kDoctorEdges) {
    auto next = next_node(s, from);
    ASSERT_TRUE(next.has_value()) << from;
    EXPECT_EQ(*next, to) << from;
  }
}

TEST(Schema, NextNodeTerminalAndUnknown) {
  auto s = parse_schema(doctor_text());
  EXPECT_FALSE(next_node(s, "doctor_bye").has_value());
  EXPECT_EQ(*next_node(s, "doctor_ask_day"), "doctor_ask_start_time");
  EXPECT_EQ(*next_node(s, "no"), "doctor_ask_doctor_name");
  try {
    next_node(s, "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownNode);
  }
}

TEST(Schema, NodeText) {
  auto s = parse_schema(doctor_text());
  EXPECT_EQ(node_text(s, "ask_name"), "Could I have your name, please?");
  EXPECT_EQ(node_text(s, "yes"), "Yes");
  auto one = make_schema("t", {{"a", "hi"}}, {});
  EXPECT_EQ(node_text(one, "a"), "hi");
}

TEST(Schema, EmptySchemaIsValid) {
  auto s = parse_schema(R"({"task":"t","replies":{},"graph":{}})");
  EXPECT_TRUE(s.graph().empty());
  EXPECT_TRUE(s.replies().empty());
  EXPECT_FALSE(s.root().has_value());
}

TEST(Schema, DanglingNodeAfterRemovingReply) {
  auto doc = parse_json(doctor_text());
  doc["replies"].erase("yes");
  auto violations = validate_schema(doc.dump());
  ASSERT_EQ(violations.size(), 1u);
  EXPECT_EQ(violations[0].code, ErrorCode::DanglingGraphNode);
  EXPECT_EQ(violations[0].subject, "yes");
  try {
    parse_schema(doc.dump());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.code(), ErrorCode::DanglingGraphNode);
  }
}

TEST(Schema, DuplicateEdgeDetected) {
  auto raw = R"({"task":"t","replies":{"a":"A","b":"B","c":"C"},"graph":{"a":"b","a":"c"}})";
  auto violations = validate_schema(raw);
  ASSERT_EQ(violations.size(), 1u);
  EXPECT_EQ(violations[0].code, ErrorCode::DuplicateEdge);
  EXPECT_EQ(violations[0].subject, "a");
}

TEST(Schema, AllViolationsListed) {
  auto raw = R"({"replies":{"Bad Label":"x {", "a":"A"},"graph":{"a":"z","q":"a"}})";
  auto violations = validate_schema(raw);
  std::set<ErrorCode> codes;
  for (const auto& v : violations) codes.insert(v.code);
  EXPECT_TRUE(codes.count(ErrorCode::MissingField));
  EXPECT_TRUE(codes.count(ErrorCode::InvalidLabel));
  EXPECT_TRUE(codes.count(ErrorCode::InvalidTemplate));
  EXPECT_TRUE(codes.count(ErrorCode::DanglingGraphNode));
  EXPECT_GE(violations.size(), 5u);
}

TEST(Schema, MalformedJson) {
  auto violations = validate_schema("{\"task\": ");
  ASSERT_EQ(violations.size(), 1u);
  EXPECT_EQ(violations[0].code, ErrorCode::MalformedJson);
}

TEST(Schema, CyclesAreAllowed) {
  auto s = make_schema("trivia", {{"ask", "Q?"}, {"check", "C"}, {"hello", "Hi"}},
                       {{"hello", "ask"}, {"ask", "check"}, {"check", "ask"}});
  auto path = s.main_path();
  ASSERT_EQ(path.size(), 3u);
  EXPECT_EQ(path[2], "check");
}

TEST(Schema, MainPathOfDoctorFixture) {
  auto s = parse_schema(doctor_text());
  std::vector<std::string> expected{"hello", "ask_name", "doctor_ask_doctor_name", "doctor_ask_day",
                                    "doctor_ask_start_time", "doctor_ask_symptoms", "query_check"};
  EXPECT_EQ(s.main_path(), expected);
  EXPECT_FALSE(next_node(s, "query_check").has_value());
}

TEST(Schema, RoundTrip) {
  auto first = parse_schema(doctor_text());
  auto second = parse_schema(serialize_schema(first));
  EXPECT_EQ(first, second);
}

TEST(Schema, NodeKinds) {
  auto s = parse_schema(doctor_text());
  EXPECT_EQ(s.kind("hello"), NodeKind::Root);
  EXPECT_EQ(s.kind("query_check"), NodeKind::Query);
  EXPECT_EQ(s.kind("yes"), NodeKind::UserBranch);
  EXPECT_EQ(s.kind("available"), NodeKind::KbBranch);
  EXPECT_EQ(s.kind("doctor_ask_day"), NodeKind::Reply);
  EXPECT_EQ(*s.farewell_node(), "doctor_bye");
  EXPECT_EQ(*s.nothing_found_node(), "doctor_inform_nothing_found");
}

TEST(Template, FillAvailableMessage) {
  auto s = parse_schema(doctor_text());
  auto out = fill_template(s.reply("doctor_inform_booking_available"), {{"doctor_name", "Dr. Morgan"}, {"time", "2 pm"}});
  EXPECT_EQ(out, "Alright, Dr. Morgan is available at 2 pm. Can I book the appointment for you?");
}

TEST(Template, FillWithoutPlaceholders) {
  EXPECT_EQ(fill_template(ResponseTemplate::parse("Hello, how can I help?"), {}), "Hello, how can I help?");
}

TEST(Template, RepeatedPlaceholder) {
  EXPECT_EQ(fill_template(ResponseTemplate::parse("{a:s}{a:s}"), {{"a", "x"}}), "xx");
}

TEST(Template, MissingValue) {
  try {
    fill_template(ResponseTemplate::parse("at {time:s}"), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingPlaceholderValue);
    EXPECT_EQ(e.subject(), "time");
  }
}

TEST(Template, PlaceholderInventory) {
  auto t = ResponseTemplate::parse("{doctor_name:s} at {time:s} with {doctor_name:s} {x}");
  EXPECT_EQ(t.placeholders().size(), 4u);
  EXPECT_EQ(t.identifiers(), (std::vector<std::string>{"doctor_name", "time", "x"}));
  EXPECT_EQ(t.placeholders()[0].format, "s");
  EXPECT_EQ(t.placeholders()[3].format, "");
}

TEST(Template, BraceErrors) {
  EXPECT_TRUE(ResponseTemplate::check("a } b").has_value());
  EXPECT_TRUE(ResponseTemplate::check("a { b").has_value());
  EXPECT_TRUE(ResponseTemplate::check("{:s}").has_value());
  EXPECT_TRUE(ResponseTemplate::check("{a-b}").has_value());
  EXPECT_FALSE(ResponseTemplate::check("{a_1:s} ok").has_value());
}

TEST(Template, FilledTextHasNoPlaceholderBraces) {
  auto s = parse_schema(doctor_text());
  for (const auto& [label, t] : s.replies()) {
    std::map<std::string, std::string> values;
    for (const auto& id : t.identifiers()) values[id] = "v";
    EXPECT_EQ(fill_template(t, values).find('{'), std::string::npos) << label;
  }
}

TEST(Template, InverseMatch) {
  auto t = ResponseTemplate::parse("Alright, {doctor_name:s} is available at {time:s}.");
  auto m = match_template(t, "Alright, Dr. Lee is available at 2 pm.");
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->at("doctor_name"), "Dr. Lee");
  EXPECT_EQ(m->at("time"), "2 pm");
  EXPECT_FALSE(match_template(t, "Alright, Dr. Lee is busy.").has_value());
  EXPECT_TRUE(match_template(ResponseTemplate::parse("hi"), "HI").has_value());
  EXPECT_FALSE(match_template(ResponseTemplate::parse("{a}-{a}"), "x-y").has_value());
  EXPECT_TRUE(match_template(ResponseTemplate::parse("{a}-{a}"), "x-x").has_value());
}

TEST(SchemaSet, FixtureCoversDomains) {
  auto set = SchemaSet::load(World::default_root() / "schemas", World::default_root() / "manifest.json");
  EXPECT_GE(set.domains().size(), 3u);
  bool has_pair = false;
  for (const auto& d : set.domains()) has_pair = has_pair || set.tasks_in_domain(d).size() >= 2;
  EXPECT_TRUE(has_pair);
  for (const auto& t : set.tasks()) EXPECT_FALSE(set.domain_of(t).empty());
}

TEST(SchemaSet, EveryFixtureSchemaValidates) {
  for (const auto& file : list_json_files(World::default_root() / "schemas")) {
    EXPECT_TRUE(validate_schema(read_text_file(file)).empty()) << file;
  }
}
