#include <gtest/gtest.h>

#include <random>

#include "schemaflow/error.hpp"
#include "schemaflow/kb.hpp"
#include "schemaflow/world.hpp"

using namespace schemaflow;

namespace {

KbTable five_rows() {
  std::vector<KbItem> rows;
  const std::int64_t ratings[] = {3, 5, 4, 5, 1};
  for (int i = 0; i < 5; ++i) {
    rows.push_back(KbItem{{{"id", std::int64_t{i}}, {"AverageRating", ratings[i]}, {"Name", std::string("r") + std::to_string(i)}}});
  }
  return KbTable("t", {{"id", FieldType::Integer}, {"AverageRating", FieldType::Integer}, {"Name", FieldType::String}}, rows);
}

// Straight-line re-statement of the constraint semantics used as an oracle.
bool oracle_matches(const KbItem& row, const std::vector<Constraint>& cs) {
  for (const auto& c : cs) {
    if (c.opaque) return false;
    const auto& cell = row.fields.at(c.key);
    if (std::holds_alternative<std::int64_t>(cell)) {
      auto a = std::get<std::int64_t>(cell);
      auto b = std::get<std::int64_t>(c.value);
      bool ok = true;
      switch (c.op) {
        case ConstraintOp::Eq: ok = a == b; break;
        case ConstraintOp::Neq: ok = a != b; break;
        case ConstraintOp::Gt: ok = a > b; break;
        case ConstraintOp::Ge: ok = a >= b; break;
        case ConstraintOp::Lt: ok = a < b; break;
        case ConstraintOp::Le: ok = a <= b; break;
        default: ok = false;
      }
      if (!ok) return false;
    } else {
      const auto& a = std::get<std::string>(cell);
      if (c.op == ConstraintOp::Eq && a != std::get<std::string>(c.value)) return false;
      if (c.op == ConstraintOp::Neq && a == std::get<std::string>(c.value)) return false;
      if (c.op == ConstraintOp::OneOf) {
        bool any = false;
        for (const auto& v : c.values) any = any || std::get<std::string>(v) == a;
        if (!any) return false;
      }
    }
  }
  return true;
}

struct RandomCase {
  KbTable table;
  std::vector<Constraint> constraints;
};

RandomCase random_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_rows(0, 30), small(0, 5), letter(0, 3), n_cons(0, 4), op_pick(0, 5);
  std::vector<KbItem> rows;
  const char* letters[] = {"a", "b", "c", "d"};
  int n = n_rows(rng);
  for (int i = 0; i < n; ++i) {
    rows.push_back(KbItem{{{"x", std::int64_t{small(rng)}}, {"y", std::int64_t{small(rng)}}, {"s", std::string(letters[letter(rng)])}}});
  }
  KbTable table("r", {{"x", FieldType::Integer}, {"y", FieldType::Integer}, {"s", FieldType::String}}, rows);
  std::vector<Constraint> cs;
  int k = n_cons(rng);
  const ConstraintOp ops[] = {ConstraintOp::Eq, ConstraintOp::Neq, ConstraintOp::Gt,
                              ConstraintOp::Ge, ConstraintOp::Lt,  ConstraintOp::Le};
  for (int i = 0; i < k; ++i) {
    int which = letter(rng);
    if (which == 3) {
      if (small(rng) % 2 == 0) {
        cs.push_back(make_constraint("s", small(rng) % 2 ? ConstraintOp::Eq : ConstraintOp::Neq, std::string(letters[letter(rng)])));
      } else {
        cs.push_back(make_one_of("s", {std::string(letters[letter(rng)]), std::string(letters[letter(rng)])}));
      }
    } else {
      cs.push_back(make_constraint(which % 2 ? "x" : "y", ops[op_pick(rng)], std::int64_t{small(rng)}));
    }
  }
  return {table, cs};
}

}  // namespace

TEST(Kb, NoConstraintsMatchesEverything) {
  KnowledgeBase kb;
  kb.add(five_rows());
  std::mt19937_64 rng(1);
  auto r = kb.query("t", {}, rng);
  EXPECT_EQ(r.total_items, 5);
  EXPECT_TRUE(r.item.has_value());
}

TEST(Kb, GreaterThanFour) {
  KnowledgeBase kb;
  kb.add(five_rows());
  std::mt19937_64 rng(7);
  std::vector<Constraint> cs{make_constraint("AverageRating", ConstraintOp::Gt, std::int64_t{4})};
  auto r = kb.query("t", cs, rng);
  EXPECT_EQ(r.total_items, 2);
  EXPECT_EQ(std::get<std::int64_t>(r.item->fields.at("AverageRating")), 5);
}

TEST(Kb, Errors) {
  KnowledgeBase kb;
  kb.add(five_rows());
  std::mt19937_64 rng(1);
  auto code_of = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  EXPECT_EQ(code_of([&] { kb.query("missing", {}, rng); }), ErrorCode::UnknownTable);
  EXPECT_EQ(code_of([&] { kb.query("t", {make_constraint("Nope", ConstraintOp::Eq, std::string("x"))}, rng); }),
            ErrorCode::UnknownField);
  EXPECT_EQ(code_of([&] { kb.query("t", {make_constraint("Name", ConstraintOp::Gt, std::int64_t{1})}, rng); }),
            ErrorCode::TypeMismatch);
  EXPECT_EQ(code_of([&] { kb.query("t", {make_constraint("AverageRating", ConstraintOp::Eq, std::string("high"))}, rng); }),
            ErrorCode::TypeMismatch);
}

TEST(Kb, RestaurantFixtureNorthNotChinese) {
  auto kb = KnowledgeBase::load_dir(World::default_root() / "kb");
  std::mt19937_64 rng(3);
  std::vector<Constraint> cs{make_constraint("Location", ConstraintOp::Eq, std::string("North")),
                             make_constraint("Food", ConstraintOp::Neq, std::string("Chinese"))};
  auto r = kb.query("restaurant_search", cs, rng);
  ASSERT_TRUE(r.item.has_value());
  EXPECT_GE(r.total_items, 1);
  EXPECT_EQ(std::get<std::string>(r.item->fields.at("Location")), "North");
  bool legume_matches = false;
  for (const auto& row : kb.table("restaurant_search").rows()) {
    if (std::get<std::string>(row.fields.at("Name")) == "Legume") {
      legume_matches = legume_matches || kb.table("restaurant_search").matches(row, cs);
    }
  }
  EXPECT_TRUE(legume_matches);
}

TEST(Kb, ParseCorpusConstraints) {
  auto cs = parse_corpus_constraints(Json::parse(R"j({"AverageRating": "api.is_greater_than(4)"})j"));
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0], make_constraint("AverageRating", ConstraintOp::Gt, std::int64_t{4}));

  cs = parse_corpus_constraints(Json::parse(R"({"Name": "Legume"})"));
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0], make_constraint("Name", ConstraintOp::Eq, std::string("Legume")));

  cs = parse_corpus_constraints(Json::parse(R"j({"X": "api.is_weird(1)"})j"));
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_TRUE(cs[0].opaque);
  EXPECT_FALSE(five_rows().matches(five_rows().rows()[0], cs));
  KnowledgeBase kb;
  kb.add(five_rows());
  std::mt19937_64 rng(1);
  EXPECT_EQ(kb.query("t", cs, rng).total_items, 0);
}

TEST(Kb, ConstraintJsonRoundTrip) {
  std::vector<Constraint> cs{make_constraint("a", ConstraintOp::Eq, std::string("x")),
                             make_constraint("b", ConstraintOp::Ge, std::int64_t{3}),
                             make_constraint("c", ConstraintOp::Neq, std::string("y z")),
                             make_constraint("d", ConstraintOp::Le, std::int64_t{-2}),
                             make_constraint("e", ConstraintOp::Contains, std::string("Por")),
                             make_one_of("f", {std::string("p"), std::string("q")})};
  auto j = constraints_to_json(cs);
  EXPECT_EQ(j["b"], "api.is_at_least(3)");
  EXPECT_EQ(parse_corpus_constraints(j), cs);
}

TEST(Kb, ContainsIsCaseInsensitive) {
  auto t = five_rows();
  EXPECT_EQ(t.match_indices({make_constraint("Name", ConstraintOp::Contains, std::string("R1"))}).size(), 1u);
}

TEST(Kb, OracleEquivalenceDeterminismMonotonicity) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 500; ++trial) {
    auto [table, cs] = random_case(gen);
    std::int64_t expected = 0;
    for (const auto& row : table.rows()) expected += oracle_matches(row, cs) ? 1 : 0;
    KnowledgeBase kb;
    kb.add(table);
    std::mt19937_64 a(trial), b(trial);
    auto ra = kb.query("r", cs, a);
    auto rb = kb.query("r", cs, b);
    EXPECT_EQ(ra.total_items, expected);
    EXPECT_EQ(ra, rb);
    EXPECT_EQ(ra.item.has_value(), expected > 0);
    if (ra.item) EXPECT_TRUE(oracle_matches(*ra.item, cs));
    auto more = cs;
    more.push_back(make_constraint("x", ConstraintOp::Ge, std::int64_t{2}));
    std::mt19937_64 c(trial);
    EXPECT_LE(kb.query("r", more, c).total_items, ra.total_items);
  }
}

TEST(Kb, GeneratedFixtureIsCrossProduct) {
  auto kb = KnowledgeBase::load_dir(World::default_root() / "kb");
  const auto& t = kb.table("book_doctor_appointment");
  EXPECT_EQ(t.rows().size(), 5u * 5u * 7u * 2u);
  auto again = KnowledgeBase::load_dir(World::default_root() / "kb");
  EXPECT_EQ(again.table("book_doctor_appointment").rows(), t.rows());
}
