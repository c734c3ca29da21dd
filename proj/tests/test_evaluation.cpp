#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "schemaflow/error.hpp"
#include "schemaflow/evaluation.hpp"
#include "schemaflow/simulator.hpp"

using namespace schemaflow;

namespace {

const World& world() {
  static const World w = World::load(World::default_root());
  return w;
}

Dialog tagged(const std::vector<std::string>& tasks, bool happy, std::int64_t id) {
  Dialog d;
  d.dialog_id = id;
  d.scenario.capabilities = tasks;
  d.scenario.happy = happy;
  d.scenario.multi_task = tasks.size() > 1;
  return d;
}

std::vector<Dialog> simulated(std::size_t n, std::uint64_t seed, const std::vector<std::string>& tasks,
                              double happy_ratio = 1.0, double multi_ratio = 0.0) {
  ScenarioConfig c;
  c.happy_ratio = happy_ratio;
  c.multi_ratio = multi_ratio;
  c.tasks = tasks;
  c.seed = seed;
  return simulate_corpus(world(), c, n);
}

ModelSetup tiny_setup() {
  ModelSetup s;
  s.guidance.dim = 16;
  s.guidance.buckets = 4096;
  s.guidance.seed = 3;
  s.train.epochs = 1;
  s.train.seed = 3;
  return s;
}

// Upper tail of Student's t by Simpson integration of the density.
double t_upper_tail(double t, double df) {
  auto pdf = [df](double x) {
    return std::tgamma((df + 1) / 2) / (std::sqrt(df * M_PI) * std::tgamma(df / 2)) *
           std::pow(1 + x * x / df, -(df + 1) / 2);
  };
  const double hi = 2000.0;
  const int n = 2000000;
  const double h = (hi - t) / n;
  double s = pdf(t) + pdf(hi);
  for (int i = 1; i < n; ++i) s += pdf(t + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

}  // namespace

TEST(Splits, StageIncludesEarlierStagesInTrain) {
  std::vector<Dialog> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(tagged({"weather"}, true, i));
  for (int i = 0; i < 20; ++i) corpus.push_back(tagged({i % 2 ? "weather" : "ride_book"}, false, 10 + i));
  for (int i = 0; i < 5; ++i) corpus.push_back(tagged({"weather", "ride_book"}, false, 30 + i));
  SplitPlan plan;
  plan.stage = Stage::Unhappy;
  plan.seed = 4;
  auto s = make_splits(corpus, plan, world().schemas);
  EXPECT_EQ(s.train.size(), 10u + 16u);
  EXPECT_EQ(s.test.size(), 4u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_TRUE(std::binary_search(s.train.begin(), s.train.end(), i));
  for (auto i : s.test) EXPECT_EQ(dialog_stage(corpus[i]), Stage::Unhappy);
  // Two test dialogs per task.
  std::map<std::string, int> per_task;
  for (auto i : s.test) per_task[dialog_task(corpus[i])]++;
  EXPECT_EQ(per_task["weather"], 2);
  EXPECT_EQ(per_task["ride_book"], 2);
  for (std::size_t i = 30; i < 35; ++i) {
    EXPECT_FALSE(std::binary_search(s.train.begin(), s.train.end(), i));
    EXPECT_FALSE(std::binary_search(s.test.begin(), s.test.end(), i));
  }
}

TEST(Splits, TenDialogsGiveEightAndTwo) {
  std::vector<Dialog> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(tagged({"weather"}, true, i));
  auto s = make_splits(corpus, SplitPlan{}, world().schemas);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Splits, DeterministicDisjointAndSeedDependent) {
  auto corpus = simulated(60, 1, {"weather", "ride_book", "hotel_reserve"});
  SplitPlan plan;
  plan.seed = 9;
  auto a = make_splits(corpus, plan, world().schemas);
  auto b = make_splits(corpus, plan, world().schemas);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::vector<std::size_t> both;
  std::set_intersection(a.train.begin(), a.train.end(), a.test.begin(), a.test.end(), std::back_inserter(both));
  EXPECT_TRUE(both.empty());
  EXPECT_EQ(a.train.size() + a.test.size(), corpus.size());
  plan.seed = 10;
  EXPECT_NE(make_splits(corpus, plan, world().schemas).test, a.test);
}

TEST(Splits, EmptyStageThrows) {
  std::vector<Dialog> corpus{tagged({"weather"}, true, 0)};
  SplitPlan plan;
  plan.stage = Stage::Multi;
  try {
    make_splits(corpus, plan, world().schemas);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyHeldOut);
  }
}

TEST(Splits, LeaveOneTaskOutExcludesHeldTaskFromTrain) {
  auto corpus = simulated(80, 2, {"weather", "ride_book", "ride_status", "hotel_reserve"}, 0.7, 0.3);
  const auto tasks = corpus_tasks(corpus);
  ASSERT_EQ(tasks.size(), 4u);
  std::set<std::size_t> covered;
  for (const auto& held : tasks) {
    SplitPlan plan;
    plan.kind = SplitKind::LeaveOneTaskOut;
    plan.held_out = held;
    auto s = make_splits(corpus, plan, world().schemas);
    for (auto i : s.train) {
      auto t = dialog_tasks(corpus[i]);
      EXPECT_EQ(std::find(t.begin(), t.end(), held), t.end());
    }
    for (auto i : s.test) {
      auto t = dialog_tasks(corpus[i]);
      EXPECT_NE(std::find(t.begin(), t.end(), held), t.end());
    }
    EXPECT_EQ(s.train.size() + s.test.size(), corpus.size());
    covered.insert(s.test.begin(), s.test.end());
  }
  EXPECT_EQ(covered.size(), corpus.size());
  SplitPlan missing;
  missing.kind = SplitKind::LeaveOneTaskOut;
  missing.held_out = "trivia";
  EXPECT_THROW(make_splits(corpus, missing, world().schemas), Error);
  missing.held_out.reset();
  EXPECT_THROW(make_splits(corpus, missing, world().schemas), Error);
}

TEST(Splits, LeaveOneDomainOutPartitionsSingleTaskCorpus) {
  auto corpus = simulated(60, 3, {"book_doctor_appointment", "followup_doctor_appointment", "ride_book", "weather"});
  const auto domains = corpus_domains(corpus, world().schemas);
  EXPECT_EQ(domains, (std::vector<std::string>{"doctor", "ride", "weather"}));
  std::vector<std::size_t> all;
  for (const auto& dom : domains) {
    SplitPlan plan;
    plan.kind = SplitKind::LeaveOneDomainOut;
    plan.held_out = dom;
    auto s = make_splits(corpus, plan, world().schemas);
    for (auto i : s.test) EXPECT_EQ(world().schemas.domain_of(dialog_task(corpus[i])), dom);
    all.insert(all.end(), s.test.begin(), s.test.end());
  }
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all.size(), corpus.size());
  EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
}

TEST(OrderConsistency, PlaneExamples) {
  const auto checked = checked_actions(world(), "plane_book");
  EXPECT_EQ(checked, (std::vector<std::string>{"ask_name", "plane_ask_flight_id", "query plane_book"}));
  EXPECT_TRUE(order_consistency({"hello", "ask_name", "plane_ask_flight_id", "query plane_book"}, checked));
  EXPECT_FALSE(order_consistency({"hello", "query plane_book", "ask_name", "plane_ask_flight_id"}, checked));
  EXPECT_TRUE(
      order_consistency({"hello", "ask_name", "ask_name", "plane_ask_flight_id", "query plane_book"}, checked));
  // Skipping is allowed.
  EXPECT_TRUE(order_consistency({"hello", "plane_ask_flight_id", "query plane_book"}, checked));
  EXPECT_FALSE(order_consistency({"plane_ask_flight_id", "ask_name"}, checked));
  // Revisiting after later actions collapses onto the first occurrence.
  EXPECT_TRUE(order_consistency({"ask_name", "plane_ask_flight_id", "ask_name", "query plane_book"}, checked));
  EXPECT_THROW(checked_actions(world(), "trivia"), Error);
}

TEST(OrderConsistency, SimulatedHappyDialogsAreConsistent) {
  auto corpus = simulated(90, 5, {});
  auto r = consistency_sweep(corpus, world());
  for (const auto& [task, tc] : r.per_task) {
    if (tc.n_all == 0) {
      EXPECT_FALSE(tc.all.has_value()) << task;
      continue;
    }
    EXPECT_DOUBLE_EQ(*tc.happy, 1.0) << task;
    EXPECT_DOUBLE_EQ(*tc.all, 1.0) << task;
  }
  ASSERT_TRUE(r.mean_happy.has_value());
  EXPECT_DOUBLE_EQ(*r.mean_happy, 1.0);
}

TEST(OrderConsistency, EmptyBucketsAreLeftOutOfTheMean) {
  auto corpus = simulated(10, 6, {"weather"});
  auto r = consistency_sweep(corpus, world());
  EXPECT_EQ(r.per_task.at("weather").n_all, 10u);
  EXPECT_FALSE(r.per_task.at("ride_book").all.has_value());
  EXPECT_DOUBLE_EQ(*r.mean_all, 1.0);
  auto none = consistency_sweep({}, world());
  EXPECT_FALSE(none.mean_all.has_value());
}

TEST(Replay, ReproducesEveryWizardResponse) {
  auto corpus = simulated(150, 7, {}, 0.4, 0.3);
  for (const auto& d : corpus) {
    const auto view = view_dialog(d);
    const auto states = replay_states(d, world());
    ASSERT_EQ(states.size(), view.steps.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      ASSERT_TRUE(states[i].has_value()) << "dialog " << d.dialog_id << " step " << i;
      const auto& step = view.steps[i];
      if (step.is_query) continue;
      const auto& schema = world().schemas.at(step.task.empty() ? d.scenario.capabilities.front() : step.task);
      EXPECT_EQ(realize_template(schema.reply(step.label), *states[i]).text, step.response);
    }
  }
}

TEST(Replay, DivergenceLeavesLaterStepsEmpty) {
  auto d = simulated(1, 8, {"weather"}).front();
  for (auto& e : d.events) {
    if (e.action == EventAction::PickSuggestion && e.intent == std::string("weather_ask_day")) e.intent = "hello";
  }
  const auto states = replay_states(d, world());
  bool seen_empty = false;
  for (const auto& s : states) {
    if (!s) seen_empty = true;
    if (seen_empty) EXPECT_FALSE(s.has_value());
  }
  EXPECT_TRUE(seen_empty);
}

TEST(Examples, OnePerWizardStep) {
  auto corpus = simulated(5, 9, {"hotel_reserve"});
  const auto vocab = action_vocab(world().schemas);
  auto steps = extract_examples(corpus, world(), vocab, true);
  std::size_t expected = 0;
  for (const auto& d : corpus) expected += view_dialog(d).steps.size();
  EXPECT_EQ(steps.size(), expected);
  for (const auto& s : steps) {
    EXPECT_EQ(s.example.scope, std::vector<std::string>{"hotel_reserve"});
    EXPECT_TRUE(s.state.has_value());
    EXPECT_EQ(s.is_query, s.response.empty());
  }
  auto unknown = extract_examples(corpus, world(), {"hello"});
  EXPECT_EQ(unknown.front().example.gold, "hello");
  EXPECT_EQ(unknown[1].example.gold, "custom");
}

TEST(Reports, JsonRoundTripCsvAndFingerprint) {
  MetricsReport r;
  r.experiment = "stage";
  r.split.kind = SplitKind::LeaveOneTaskOut;
  r.split.held_out = "weather";
  r.metrics = {{"weighted_f1", 0.25}, {"accuracy", 1.0 / 3.0}};
  r.per_task["weather"] = {{"weighted_f1", 0.5}};
  r.config = {{"dim", 16}};
  r.fingerprint = config_fingerprint(r.config);
  r.seed = 12;
  auto back = MetricsReport::from_json(parse_json(r.to_json().dump()));
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(r.to_csv(), "scope,metric,value\nall,accuracy,0.33333333333333331\nall,weighted_f1,0.25\nweather,weighted_f1,0.5\n");
  EXPECT_EQ(config_fingerprint({{"dim", 16}}), r.fingerprint);
  EXPECT_NE(config_fingerprint({{"dim", 17}}), r.fingerprint);
  EXPECT_EQ(r.fingerprint.size(), 16u);
  EXPECT_THROW(MetricsReport::from_json(Json::object()), Error);
}

TEST(PairedTest, MatchesNumericIntegration) {
  auto r = paired_t_test({1.0, 2.5, 3.0, 4.5}, {0.5, 0.0, 1.0, 1.0});
  // Differences 0.5, 2.5, 2, 3.5: mean 2.125, sd sqrt(1.5625), t = 2.125 / (1.25 / 2) = 3.4.
  EXPECT_NEAR(r.mean_difference, 2.125, 1e-12);
  EXPECT_NEAR(r.t, 3.4, 1e-12);
  EXPECT_EQ(r.df, 3.0);
  EXPECT_NEAR(r.p_one_sided, t_upper_tail(3.4, 3.0), 1e-7);
  auto flipped = paired_t_test({0.5, 0.0, 1.0, 1.0}, {1.0, 2.5, 3.0, 4.5});
  EXPECT_NEAR(flipped.p_one_sided, 1.0 - r.p_one_sided, 1e-12);
  EXPECT_EQ(paired_t_test({2, 2}, {1, 1}).p_one_sided, 0.0);
  EXPECT_THROW(paired_t_test({1}, {0}), Error);
  EXPECT_THROW(paired_t_test({1, 2}, {0}), Error);
}

TEST(Stage, ReportCarriesMetricsAndPerTask) {
  auto corpus = simulated(40, 10, {"weather", "ride_status"});
  auto r = evaluate_stage(corpus, world(), SplitPlan{}, tiny_setup());
  for (const char* m : {"weighted_f1", "accuracy", "n_train_dialogs", "n_test_dialogs", "initial_loss", "final_loss"}) {
    EXPECT_TRUE(r.report.metrics.count(m)) << m;
  }
  EXPECT_EQ(r.report.per_task.size(), 2u);
  EXPECT_EQ(r.report.metrics.at("n_test_dialogs"), 8.0);
  auto again = evaluate_stage(corpus, world(), SplitPlan{}, tiny_setup());
  EXPECT_EQ(again.report.to_json(), r.report.to_json());
}

TEST(History, DeterministicAndSaturating) {
  auto corpus = refer_back_corpus(world(), 40, 11, 1, 2, {"book_doctor_appointment", "hotel_reserve"});
  ASSERT_EQ(corpus.size(), 40u);
  for (const auto& d : corpus) EXPECT_FALSE(d.scenario.happy);
  auto a = history_sweep(corpus, world(), {1, 500, 1000}, tiny_setup(), 2);
  auto b = history_sweep(corpus, world(), {1, 500, 1000}, tiny_setup(), 2, 2);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].window, b[i].window);
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
  }
  EXPECT_EQ(a[1].accuracy, a[2].accuracy);
  EXPECT_THROW(history_sweep(corpus, world(), {}, tiny_setup(), 2), Error);
  EXPECT_THROW(history_sweep(corpus, world(), {0}, tiny_setup(), 2), Error);
}

TEST(Transfer, FoldsMeansAndDeterminism) {
  auto corpus = simulated(48, 12, {"weather", "ride_book", "ride_status", "hotel_reserve"}, 0.5);
  TransferConfig c;
  c.setup = tiny_setup();
  auto r = transfer_sweep(corpus, world(), c);
  ASSERT_EQ(r.folds.size(), 4u);
  double sum = 0.0;
  for (const auto& f : r.folds) {
    sum += f.scm.at("weighted_f1");
    EXPECT_GT(f.n_test, 0u);
    EXPECT_EQ(f.n_train + f.n_test, corpus.size());
    for (const char* m : {"weighted_f1", "accuracy", "bleu4", "iem", "entity_f1", "unresolved_rate"}) {
      EXPECT_TRUE(f.clf.count(m)) << m;
      EXPECT_TRUE(f.scm.count(m)) << m;
    }
  }
  EXPECT_NEAR(r.scm.metrics.at("weighted_f1"), sum / 4.0, 1e-12);
  EXPECT_EQ(r.scm.per_task.size(), 4u);
  EXPECT_NE(r.clf.fingerprint, r.scm.fingerprint);

  c.jobs = 3;
  auto again = transfer_sweep(corpus, world(), c);
  EXPECT_EQ(again.clf.to_json(), r.clf.to_json());
  EXPECT_EQ(again.scm.to_json(), r.scm.to_json());
}

TEST(Transfer, DomainFolds) {
  auto corpus = simulated(30, 13, {"weather", "ride_book", "ride_status"});
  TransferConfig c;
  c.kind = TransferKind::Domain;
  c.setup = tiny_setup();
  c.generation = false;
  auto r = transfer_sweep(corpus, world(), c);
  ASSERT_EQ(r.folds.size(), 2u);
  EXPECT_EQ(r.folds[0].held_out, "ride");
  EXPECT_FALSE(r.folds[0].clf.count("bleu4"));
}

TEST(Transfer, NeedsTwoTasks) {
  auto corpus = simulated(5, 14, {"weather"});
  TransferConfig c;
  c.setup = tiny_setup();
  try {
    transfer_sweep(corpus, world(), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientTasks);
  }
}
