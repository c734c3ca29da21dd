#include <gtest/gtest.h>

#include "schemaflow/error.hpp"
#include "schemaflow/response.hpp"
#include "schemaflow/world.hpp"

using namespace schemaflow;

namespace {

const World& world() {
  static const World w = World::load(World::default_root());
  return w;
}

ActionDistribution peaked(const std::vector<std::string>& vocab, const std::vector<std::pair<std::string, double>>& mass) {
  ActionDistribution d;
  d.probs.assign(vocab.size(), 0.0);
  double left = 1.0;
  for (const auto& [a, p] : mass) {
    d.probs[static_cast<std::size_t>(std::find(vocab.begin(), vocab.end(), a) - vocab.begin())] = p;
    left -= p;
  }
  for (auto& p : d.probs) {
    if (p == 0.0) p = left / static_cast<double>(vocab.size() - mass.size());
  }
  return d;
}

std::vector<Turn> two_turns() {
  return {{Speaker::User, "Hi, I need a doctor"}, {Speaker::Wizard, "Hello, how can I help?"}};
}

}  // namespace

TEST(Context, TopThreeTemplatesInRankOrder) {
  const auto vocab = action_vocab(world().schemas);
  auto dist = peaked(vocab, {{"ask_name", 0.5}, {"doctor_ask_day", 0.2}, {"query book_doctor_appointment", 0.1}});
  auto ctx = context_from_distribution(dist, vocab, two_turns(), world().schemas, {"book_doctor_appointment"});
  EXPECT_EQ(ctx.actions, (std::vector<std::string>{"ask_name", "doctor_ask_day", "query book_doctor_appointment"}));
  const auto& s = world().schemas.at("book_doctor_appointment");
  EXPECT_EQ(ctx.templates[0], s.node_text("ask_name"));
  EXPECT_EQ(ctx.templates[1], s.node_text("doctor_ask_day"));
  std::string query_text;
  for (const auto& [label, reply] : s.replies()) {
    if (query_text.empty() && s.kind(label) == NodeKind::Query) query_text = reply.text();
  }
  EXPECT_EQ(ctx.templates[2], query_text);
  EXPECT_EQ(ctx.serialize(), ctx.history_text + " ; " + ctx.templates[0] + " ; " + ctx.templates[1] + " ; " + ctx.templates[2]);
  EXPECT_EQ(ctx.history_text, "User: Hi, I need a doctor\nWizard: Hello, how can I help?");
}

TEST(Context, OutOfScopeActionsAreSkipped) {
  const auto vocab = action_vocab(world().schemas);
  auto dist = peaked(vocab, {{"weather_ask_day", 0.6}, {"custom", 0.2}, {"doctor_ask_day", 0.1}});
  auto ctx = context_from_distribution(dist, vocab, two_turns(), world().schemas, {"book_doctor_appointment"});
  EXPECT_EQ(ctx.actions.front(), "doctor_ask_day");
  EXPECT_EQ(std::count(ctx.actions.begin(), ctx.actions.end(), "weather_ask_day"), 0);
  EXPECT_EQ(std::count(ctx.actions.begin(), ctx.actions.end(), "custom"), 0);
}

TEST(Context, SeparatorIsScrubbed) {
  const auto vocab = action_vocab(world().schemas);
  auto dist = peaked(vocab, {{"ask_name", 0.5}});
  std::vector<Turn> h{{Speaker::User, "a ; b"}};
  auto ctx = context_from_distribution(dist, vocab, h, world().schemas, {"weather", "book_doctor_appointment"});
  EXPECT_EQ(ctx.history_text.find(" ; "), std::string::npos);
}

TEST(Context, TooFewActionsThrows) {
  const std::vector<std::string> vocab{"a", "b"};
  SchemaSet set;
  set.add(make_schema("t", {{"a", "A"}, {"b", "B"}}, {{"a", "b"}}), "d");
  ActionDistribution d{{0.5, 0.5}};
  try {
    context_from_distribution(d, vocab, {}, set, {"t"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VocabTooSmall);
  }
  EXPECT_THROW(context_from_distribution(ActionDistribution{{1.0}}, vocab, {}, set, {"t"}), Error);
}

TEST(Context, BuildContextUsesModel) {
  GuidanceConfig c;
  c.dim = 8;
  c.buckets = 256;
  auto m = GuidanceModel::for_schemas(world().schemas, c);
  auto ctx = build_context(m, two_turns(), world().schemas, {"weather"});
  EXPECT_EQ(ctx.actions.size(), 3u);
  auto allowed = task_actions(world().schemas.at("weather"));
  for (const auto& a : ctx.actions) EXPECT_NE(std::find(allowed.begin(), allowed.end(), a), allowed.end()) << a;
}

TEST(Realize, FillsAskNameFromT1) {
  const auto vocab = action_vocab(world().schemas);
  auto dist = peaked(vocab, {{"ask_name", 0.9}});
  auto ctx = context_from_distribution(dist, vocab, two_turns(), world().schemas, {"book_doctor_appointment"});
  auto state = initial_state({"book_doctor_appointment"});
  auto r = realize(ctx, state);
  EXPECT_EQ(r.text, world().schemas.at("book_doctor_appointment").node_text("ask_name"));
  EXPECT_FALSE(r.flagged());
}

TEST(Realize, MissingValuesGetSentinel) {
  auto state = initial_state({"book_doctor_appointment"});
  auto r = realize_template(ResponseTemplate::parse("See {doctor_name:s} at {time:s}."), state);
  EXPECT_EQ(r.text, "See ⟨unk:doctor_name⟩ at ⟨unk:time⟩.");
  EXPECT_EQ(r.unresolved, (std::vector<std::string>{"doctor_name", "time"}));
  EXPECT_TRUE(r.flagged());
}

TEST(Realize, SnakeCase) {
  EXPECT_EQ(snake_case("StartTimeHour"), "start_time_hour");
  EXPECT_EQ(snake_case("RideStatus"), "ride_status");
  EXPECT_EQ(snake_case("Message"), "message");
  EXPECT_EQ(snake_case("ETAMinutes"), "eta_minutes");
}

TEST(Entities, InverseTemplateThenPattern) {
  EntityExtractor ex(world().schemas);
  const auto& s = world().schemas.at("weather");
  auto text = fill_template(s.reply("weather_inform_forecast"),
                            {{"city", "Paris"}, {"day", "Monday"}, {"weather", "sunny"}, {"temperature", "21"}});
  EXPECT_EQ(ex.extract(text), (std::vector<std::string>{"Paris", "Monday", "sunny", "21"}));
  EXPECT_EQ(ex.extract("It leaves at 5 pm, gate 12."), (std::vector<std::string>{"5 pm", "12"}));
  EXPECT_TRUE(ex.extract("Hello there").empty());
}

TEST(Generation, ScoresAndAlignment) {
  EntityExtractor ex(world().schemas);
  auto generic = default_generic_labels(world().schemas);
  EXPECT_NE(std::find(generic.begin(), generic.end(), "doctor_bye"), generic.end());
  EXPECT_NE(std::find(generic.begin(), generic.end(), "anything_else"), generic.end());
  std::vector<std::string> refs{"It leaves at 5 pm from gate 12 today", "Hello, how can I help?"};
  auto s = evaluate_generation(refs, refs, {"inform", "hello"}, generic, ex);
  EXPECT_DOUBLE_EQ(s.bleu4, 1.0);
  EXPECT_DOUBLE_EQ(s.iem, 1.0);
  EXPECT_DOUBLE_EQ(s.entity_f1, 1.0);
  EXPECT_THROW(evaluate_generation({"a"}, refs, {"x", "y"}, generic, ex), Error);
}
