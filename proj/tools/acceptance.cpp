// Acceptance runner: one PASS/FAIL/SKIP line per criterion on stdout,
// progress on stderr. Exit status is 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "cli.hpp"
#include "schemaflow/dialog.hpp"
#include "schemaflow/evaluation.hpp"
#include "schemaflow/guidance.hpp"
#include "schemaflow/metrics.hpp"
#include "schemaflow/policy.hpp"
#include "schemaflow/schema.hpp"
#include "schemaflow/simulator.hpp"
#include "schemaflow/text.hpp"
#include "schemaflow/world.hpp"
#include "support/graph_walk.hpp"
#include "support/oracles.hpp"
#include "support/random_dialog.hpp"

namespace fs = std::filesystem;
using namespace schemaflow;

namespace {

// Pinned thresholds.
constexpr std::size_t kFixtureReplies = 18;
constexpr std::size_t kFixtureEdges = 12;
constexpr double kFixtureSeconds = 1.0;

constexpr std::size_t kWalkDialogs = 1000;
constexpr std::size_t kWalkMinSchemas = 6;
constexpr double kWalkSeconds = 30.0;

constexpr std::size_t kStarDialogs = 5820;
constexpr std::size_t kStarTurns = 127833;
constexpr double kStarTurnsPerDialog = 21.71;
constexpr double kStarTurnsTol = 0.01;
constexpr double kStarConsistency = 0.91;
constexpr double kStarConsistencyTol = 0.01;

constexpr int kConvexModels = 10000;
constexpr double kShiftTol = 1e-12;
constexpr double kHandTol = 1e-12;
constexpr double kConvexTol = 1e-12;
constexpr double kSaturationBias = 50.0;
constexpr double kSaturationTol = 1e-6;
constexpr double kEquationSeconds = 10.0;

constexpr int kGradTrials = 20;
constexpr std::size_t kGradBatch = 5;
constexpr double kGradEps = 1e-4;
constexpr double kGradFloor = 1e-6;
constexpr double kGradTol = 1e-3;

constexpr int kOracleCases = 100;
constexpr double kBleuTol = 1e-9;

constexpr std::size_t kTransferDialogs = 2000;
constexpr int kTransferSeeds = 10;
constexpr int kTransferDim = 64;
constexpr int kTransferEpochs = 3;
constexpr double kTransferAlpha = 0.05;
constexpr double kTransferSeconds = 600.0;

constexpr std::size_t kProbeDialogs = 600;
constexpr int kProbeSeeds = 5;
constexpr int kProbeDim = 64;
constexpr int kProbeEpochs = 3;
constexpr int kProbePerDialog = 3;
constexpr double kProbeGap = 0.05;

constexpr std::size_t kRoundTripDialogs = 1000;

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const World& world() {
  static const World w = World::load(World::default_root());
  return w;
}

unsigned jobs_flag = 1;

// ---------------------------------------------------------------------------

Outcome fixture_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto path = World::default_root() / "schemas" / "book_doctor_appointment.json";
  const auto schema = parse_schema(read_text_file(path));
  const std::vector<std::pair<std::string, std::string>> edges{
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
  std::size_t reproduced = 0;
  for (const auto& [from, to] : edges) {
    if (schema.next_node(from) == to) ++reproduced;
  }
  const double secs = seconds_since(t0);
  const bool ok = schema.replies().size() == kFixtureReplies && schema.graph().size() == kFixtureEdges &&
                  reproduced == edges.size() && secs < kFixtureSeconds;
  return verdict(ok, std::to_string(schema.replies().size()) + " replies (want " + std::to_string(kFixtureReplies) +
                         "), " + std::to_string(schema.graph().size()) + " edges, next_node " +
                         std::to_string(reproduced) + "/" + std::to_string(edges.size()) + ", " + fixed(secs, 3) +
                         " s");
}

Outcome policy_graph_walk() {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioConfig c;
  c.happy_ratio = 1.0;
  c.multi_ratio = 0.0;
  c.seed = 20240611;
  const auto corpus = simulate_corpus(world(), c, kWalkDialogs, jobs_flag);
  std::size_t equal = 0, consistent = 0;
  std::set<std::string> schemas;
  for (const auto& d : corpus) {
    const auto& task = d.scenario.capabilities.front();
    schemas.insert(task);
    const auto walk = testing::happy_graph_walk(world().schemas.at(task), world().profile(task), d);
    if (wizard_action_sequence(d) == walk) ++equal;
    if (order_consistency(d, world(), task)) ++consistent;
  }
  const double secs = seconds_since(t0);
  const bool ok = corpus.size() == kWalkDialogs && equal == corpus.size() && consistent == corpus.size() &&
                  schemas.size() >= kWalkMinSchemas && secs < kWalkSeconds;
  return verdict(ok, std::to_string(equal) + "/" + std::to_string(corpus.size()) + " equal the walk over " +
                         std::to_string(schemas.size()) + " schemas, order_consistency " +
                         fixed(static_cast<double>(consistent) / static_cast<double>(corpus.size()), 2) + ", " +
                         fixed(secs, 2) + " s");
}

// STAR layout: dialogues/*.json and tasks/<task>/<task>.json.
Outcome corpus_ingestion() {
  const char* env = std::getenv("SCHEMAFLOW_CORPUS_DIR");
  if (env == nullptr || !fs::is_directory(env)) return {Status::Skip, "SCHEMAFLOW_CORPUS_DIR not set; corpus absent"};
  const fs::path root(env);
  const auto dialog_dir = fs::is_directory(root / "dialogues") ? root / "dialogues" : root;
  std::vector<Dialog> corpus;
  for (const auto& f : list_json_files(dialog_dir)) corpus.push_back(read_dialog(read_text_file(f)));
  std::size_t turns = 0;
  for (const auto& d : corpus) turns += count_turns(d);
  const double per_dialog = corpus.empty() ? 0.0 : static_cast<double>(turns) / static_cast<double>(corpus.size());

  // Checked actions without task profiles: main-path nodes after the root up
  // to and including the first query.
  std::map<std::string, std::vector<std::string>> checked;
  if (fs::is_directory(root / "tasks")) {
    for (const auto& entry : fs::directory_iterator(root / "tasks")) {
      const auto file = entry.path() / (entry.path().filename().string() + ".json");
      if (!fs::exists(file)) continue;
      const auto schema = parse_schema(read_text_file(file));
      auto& list = checked[schema.task()];
      const auto path = schema.main_path();
      for (std::size_t i = 1; i < path.size(); ++i) {
        if (is_query_label(path[i])) {
          list.push_back(query_action(schema.task()));
          break;
        }
        list.push_back(path[i]);
      }
    }
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_task;
  for (const auto& d : corpus) {
    if (d.scenario.multi_task || d.scenario.capabilities.size() != 1) continue;
    const auto& task = d.scenario.capabilities.front();
    auto it = checked.find(task);
    if (it == checked.end()) continue;
    auto& [ok, n] = per_task[task];
    ++n;
    if (order_consistency(wizard_action_sequence(d, task), it->second)) ++ok;
  }
  double mean = 0.0;
  for (const auto& [_, v] : per_task) mean += static_cast<double>(v.first) / static_cast<double>(v.second);
  if (!per_task.empty()) mean /= static_cast<double>(per_task.size());
  auto rate = [&](const std::string& task) {
    auto it = per_task.find(task);
    return it == per_task.end() ? -1.0 : static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
  };
  const bool ok = corpus.size() == kStarDialogs && turns == kStarTurns &&
                  std::abs(per_dialog - kStarTurnsPerDialog) <= kStarTurnsTol &&
                  std::abs(mean - kStarConsistency) <= kStarConsistencyTol && rate("weather") == 1.0 &&
                  rate("trivia") == 1.0;
  return verdict(ok, std::to_string(corpus.size()) + " dialogs, " + std::to_string(turns) + " turns, " +
                         fixed(per_dialog, 2) + " turns/dialog, consistency " + fixed(mean, 3) + " (weather " +
                         fixed(rate("weather"), 2) + ", trivia " + fixed(rate("trivia"), 2) + ")");
}

Outcome equation_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failures;
  GuidanceConfig config;
  config.dim = 8;
  config.buckets = 4096;
  config.seed = 3;

  // P_scm on a 3-node chain a -> b -> c.
  SchemaSet chain;
  chain.add(make_schema("chain", {{"a", "alpha first"}, {"b", "beta second"}, {"c", "gamma third"}},
                        {{"a", "b"}, {"b", "c"}}),
            "test");
  auto cm = GuidanceModel::for_schemas(chain, config);
  std::size_t node_a = 0;
  for (std::size_t i = 0; i < cm.nodes().size(); ++i) {
    if (cm.nodes()[i].label == "a") node_a = i;
  }
  const auto one_hot = cm.predict_scm(Eigen::VectorXd::Random(config.dim), {node_a}).probs;
  const auto uniform = cm.predict_scm(Eigen::VectorXd::Zero(config.dim), cm.scope_nodes({"chain"})).probs;
  for (std::size_t i = 0; i < cm.vocab().size(); ++i) {
    const auto& a = cm.vocab()[i];
    if (std::abs(one_hot[i] - (a == "b" ? 1.0 : 0.0)) > kHandTol) failures.push_back("one-hot " + a);
    const double want = (a == "b" || a == "c" || a == "terminal") ? 1.0 / 3.0 : 0.0;
    if (std::abs(uniform[i] - want) > kHandTol) failures.push_back("uniform " + a);
  }

  auto m = GuidanceModel::for_schemas(world().schemas, config);
  const auto nodes = m.scope_nodes({"ride_book", "weather", "hotel_reserve"});
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  double worst_shift = 0.0, worst_convex = 0.0, worst_saturation = 0.0;
  for (int trial = 0; trial < kConvexModels; ++trial) {
    testing::randomize_parameters(m, static_cast<std::uint64_t>(trial), 2.0);
    Eigen::VectorXd h(config.dim);
    for (Eigen::Index k = 0; k < h.size(); ++k) h[k] = normal(rng);
    const auto clf = m.predict_clf(h).probs;
    const auto scm = m.predict_scm(h, nodes).probs;
    const auto fin = m.predict_fin(h, nodes);
    const double g = 1.0 / (1.0 + std::exp(-(m.Wh().dot(h) + m.bh())));
    double total = 0.0;
    for (std::size_t i = 0; i < clf.size(); ++i) {
      const double mix = g * scm[i] + (1.0 - g) * clf[i];
      double err = std::abs(fin.dist.probs[i] - mix);
      err = std::max(err, std::min(scm[i], clf[i]) - fin.dist.probs[i]);
      err = std::max(err, fin.dist.probs[i] - std::max(scm[i], clf[i]));
      worst_convex = std::max(worst_convex, err);
      total += fin.dist.probs[i];
    }
    worst_convex = std::max({worst_convex, std::abs(total - 1.0), std::abs(fin.gate - g)});

    if (trial % 100 == 0) {
      const Eigen::VectorXd b = m.b();
      m.b().array() += shift(rng);
      const auto shifted = m.predict_clf(h).probs;
      m.b() = b;
      for (std::size_t i = 0; i < clf.size(); ++i) worst_shift = std::max(worst_shift, std::abs(shifted[i] - clf[i]));

      const double bh = m.bh();
      m.bh() = kSaturationBias;
      const auto high = m.predict_fin(h, nodes).dist.probs;
      m.bh() = -kSaturationBias;
      const auto low = m.predict_fin(h, nodes).dist.probs;
      m.bh() = bh;
      for (std::size_t i = 0; i < clf.size(); ++i) {
        worst_saturation = std::max({worst_saturation, std::abs(high[i] - scm[i]), std::abs(low[i] - clf[i])});
      }
    }
  }
  if (worst_shift > kShiftTol) failures.push_back("shift " + sci(worst_shift));
  if (worst_convex > kConvexTol) failures.push_back("convexity " + sci(worst_convex));
  if (worst_saturation > kSaturationTol) failures.push_back("saturation " + sci(worst_saturation));
  const double secs = seconds_since(t0);
  if (secs >= kEquationSeconds) failures.push_back("runtime");
  return verdict(failures.empty(), "hand fixtures " + std::string(failures.empty() ? "ok" : join(failures, ", ")) +
                                       "; shift " + sci(worst_shift) + ", convexity over " +
                                       std::to_string(kConvexModels) + " models " + sci(worst_convex) +
                                       ", saturation " + sci(worst_saturation) + ", " + fixed(secs, 2) + " s");
}

Outcome gradient_check() {
  ScenarioConfig c;
  c.seed = 777;
  const auto corpus = simulate_corpus(world(), c, 120, jobs_flag);
  GuidanceConfig config;
  config.dim = 8;
  config.buckets = 4096;
  auto base = GuidanceModel::for_schemas(world().schemas, config);
  const auto examples = examples_only(extract_examples(corpus, world(), base.vocab()));
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (int trial = 0; trial < kGradTrials; ++trial) {
    config.seed = static_cast<std::uint64_t>(trial);
    auto m = GuidanceModel::for_schemas(world().schemas, config);
    testing::randomize_parameters(m, 1000 + static_cast<std::uint64_t>(trial));
    std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
    std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
    std::vector<Example> batch;
    for (std::size_t i = 0; i < kGradBatch; ++i) batch.push_back(examples[pick(rng)]);
    const auto prepared = prepare(m, batch, trial % 2 == 1);
    const auto r = testing::check_gradients(m, prepared, kGradEps, kGradFloor);
    checked += r.checked;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      where = r.worst + " in trial " + std::to_string(trial);
    }
  }
  return verdict(worst < kGradTol, "max relative error " + sci(worst) + (where.empty() ? "" : " (" + where + ")") +
                                       " over " + std::to_string(checked) + " coordinates, " +
                                       std::to_string(kGradTrials) + " trials");
}

Outcome metric_oracles() {
  std::mt19937_64 rng(2024);
  std::size_t f1_ok = 0, bleu_ok = 0, iem_ok = 0, ent_ok = 0;
  double bleu_worst = 0.0;
  std::uniform_int_distribution<int> label(0, 5);
  const std::vector<std::string> sentences{"Booked.", " Booked. ", "Sorry", "hello there", ""};
  const std::vector<std::string> actions{"hello", "inform_booked", "inform_sorry", "anything_else"};
  const std::vector<std::string> generic{"hello", "anything_else"};
  const std::vector<std::string> entities{"Dr. Morgan", "5 pm", "Monday", "Paris", "2"};
  std::uniform_int_distribution<std::size_t> ps(0, sentences.size() - 1), pa(0, actions.size() - 1),
      pe(0, entities.size() - 1), count(0, 3);
  for (int trial = 0; trial < kOracleCases; ++trial) {
    std::vector<std::string> gold, pred;
    for (int i = 0; i < 1 + trial % 40; ++i) {
      gold.push_back("c" + std::to_string(label(rng)));
      pred.push_back("c" + std::to_string(label(rng)));
    }
    if (weighted_f1(gold, pred).weighted_f1 == testing::oracle_weighted_f1(gold, pred)) ++f1_ok;

    std::vector<std::vector<std::string>> hyps, refs;
    for (int i = 0; i < 1 + trial % 7; ++i) {
      hyps.push_back(testing::random_sentence(rng, 12));
      refs.push_back(testing::random_sentence(rng, 12));
      if (trial % 3 == 0) hyps.back() = refs.back();
    }
    const double diff = std::abs(corpus_bleu_tokens(hyps, refs) - testing::oracle_bleu(hyps, refs));
    bleu_worst = std::max(bleu_worst, diff);
    if (diff <= kBleuTol) ++bleu_ok;

    std::vector<std::string> h, r, a;
    for (int i = 0; i < 1 + trial % 9; ++i) {
      h.push_back(sentences[ps(rng)]);
      r.push_back(sentences[ps(rng)]);
      a.push_back(actions[pa(rng)]);
    }
    if (in_domain_exact_match(h, r, a, generic) == testing::oracle_iem(h, r, a, generic)) ++iem_ok;

    std::vector<std::vector<std::string>> he, re;
    for (int i = 0; i < 1 + trial % 6; ++i) {
      he.emplace_back(count(rng));
      re.emplace_back(count(rng));
      for (auto& e : he.back()) e = entities[pe(rng)];
      for (auto& e : re.back()) e = entities[pe(rng)];
    }
    if (entity_f1(he, re) == testing::oracle_entity_f1(he, re)) ++ent_ok;
  }
  // Hand example: p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0/1, so BLEU-4 = 0.
  const auto counts = ngram_counts(word_tokens("the cat sat on"), word_tokens("the cat sat down"));
  const bool hand = counts.matches[0] == 3 && counts.totals[0] == 4 && counts.matches[1] == 2 &&
                    counts.totals[1] == 3 && counts.matches[2] == 1 && counts.totals[2] == 2 &&
                    counts.matches[3] == 0 && counts.totals[3] == 1 &&
                    corpus_bleu({"the cat sat on"}, {"the cat sat down"}) == 0.0;
  const auto n = static_cast<std::size_t>(kOracleCases);
  const bool ok = f1_ok == n && bleu_ok == n && iem_ok == n && ent_ok == n && hand;
  return verdict(ok, "F1 " + std::to_string(f1_ok) + "/" + std::to_string(n) + ", BLEU " + std::to_string(bleu_ok) +
                         "/" + std::to_string(n) + " (max diff " + sci(bleu_worst) + "), IEM " +
                         std::to_string(iem_ok) + "/" + std::to_string(n) + ", entity F1 " + std::to_string(ent_ok) +
                         "/" + std::to_string(n) + ", p4 = 0 example " + (hand ? "ok" : "wrong"));
}

Outcome transfer_claim() {
  const auto t0 = std::chrono::steady_clock::now();
  std::set<std::string> domains;
  for (const auto& t : cli::kTransferTasks) domains.insert(world().schemas.domain_of(t));
  std::vector<double> clf, scm;
  for (int i = 0; i < kTransferSeeds; ++i) {
    const auto seed = derive_seed(4152, static_cast<std::uint64_t>(i));
    ScenarioConfig c;
    c.tasks = cli::kTransferTasks;
    c.seed = seed;
    const auto corpus = simulate_corpus(world(), c, kTransferDialogs, jobs_flag);
    TransferConfig tc;
    tc.kind = TransferKind::Task;
    tc.generation = false;
    tc.jobs = jobs_flag;
    tc.setup.guidance.dim = kTransferDim;
    tc.setup.guidance.seed = seed;
    tc.setup.train.epochs = kTransferEpochs;
    tc.setup.train.seed = seed;
    const auto r = transfer_sweep(corpus, world(), tc);
    clf.push_back(r.clf.metrics.at("weighted_f1"));
    scm.push_back(r.scm.metrics.at("weighted_f1"));
    std::cerr << "transfer seed " << i << ": schema-free " << fixed(clf.back()) << ", schema-guided "
              << fixed(scm.back()) << '\n';
  }
  const auto t = paired_t_test(scm, clf);
  const double secs = seconds_since(t0);
  const double mc = std::accumulate(clf.begin(), clf.end(), 0.0) / static_cast<double>(clf.size());
  const double ms = std::accumulate(scm.begin(), scm.end(), 0.0) / static_cast<double>(scm.size());
  const bool ok = cli::kTransferTasks.size() == 6 && domains.size() == 3 && ms > mc &&
                  t.p_one_sided < kTransferAlpha && secs < kTransferSeconds;
  return verdict(ok, "mean F1 schema-guided " + fixed(ms) + " vs schema-free " + fixed(mc) + ", t = " +
                         fixed(t.t, 2) + ", p = " + sci(t.p_one_sided) + " over " + std::to_string(kTransferSeeds) +
                         " seeds, " + std::to_string(kTransferDialogs) + " dialogs each, " + fixed(secs, 1) + " s");
}

Outcome history_probe() {
  std::vector<double> gaps;
  for (int i = 0; i < kProbeSeeds; ++i) {
    const auto seed = derive_seed(600, static_cast<std::uint64_t>(i));
    const auto corpus = refer_back_corpus(world(), kProbeDialogs, seed, 1, kProbePerDialog);
    ModelSetup setup;
    setup.guidance.dim = kProbeDim;
    setup.guidance.seed = seed;
    setup.train.epochs = kProbeEpochs;
    setup.train.seed = seed;
    const auto points = history_sweep(corpus, world(), {1, 5}, setup, seed, jobs_flag);
    gaps.push_back(points[1].accuracy - points[0].accuracy);
    std::cerr << "history seed " << i << ": window 1 " << fixed(points[0].accuracy) << ", window 5 "
              << fixed(points[1].accuracy) << '\n';
  }
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
  const double lowest = *std::min_element(gaps.begin(), gaps.end());
  return verdict(mean >= kProbeGap, "window 5 - window 1 accuracy: mean " + fixed(mean) + ", min " + fixed(lowest) +
                                        " over " + std::to_string(kProbeSeeds) + " seeds");
}

Outcome round_trip_and_determinism() {
  std::mt19937_64 rng(5);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < kRoundTripDialogs; ++i) {
    const auto d = testing::random_dialog(rng, static_cast<std::int64_t>(i));
    const auto text = write_dialog(d);
    const auto back = read_dialog(text);
    if (back == d && write_dialog(back) == text && parse_json(text) == parse_json(write_dialog(back))) ++ok;
  }

  const auto tmp = fs::temp_directory_path() / ("schemaflow_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  auto run = [&](const std::vector<std::string>& args) {
    std::istringstream in;
    std::ostringstream out, err;
    return cli::run(args, in, out, err);
  };
  std::vector<std::string> outputs[2];
  bool all_zero = true;
  for (int k = 0; k < 2; ++k) {
    const auto dir = tmp / std::to_string(k);
    const auto p = [&](const char* name) { return (dir / name).string(); };
    const auto jobs = std::to_string(k == 0 ? 1u : std::max(2u, jobs_flag));
    all_zero &= run({"--jobs", jobs, "simulate", "--n", "200", "--seed", "5", "--out", p("sim")}) == 0;
    all_zero &= run({"train", "--corpus", p("sim"), "--seed", "5", "--dim", "32", "--epochs", "2", "--out",
                     p("model")}) == 0;
    all_zero &= run({"eval", "stage", "--corpus", p("sim"), "--seed", "5", "--model", p("model/model.ckpt"), "--out",
                     p("eval")}) == 0;
    all_zero &= run({"--jobs", jobs, "eval", "history", "--corpus", p("sim"), "--seed", "5", "--dim", "16",
                     "--epochs", "1", "--windows", "1", "3", "--out", p("eval")}) == 0;
    for (const auto& f : {"sim/manifest.json", "model/model.ckpt", "model/train.json", "eval/stage.json",
                          "eval/stage.csv", "eval/history.json", "eval/history.csv"}) {
      outputs[k].push_back(fs::exists(dir / f) ? read_text_file(dir / f) : std::string());
    }
    for (const auto& f : list_json_files(dir / "sim" / "dialogues")) outputs[k].push_back(read_text_file(f));
  }
  fs::remove_all(tmp);
  const bool identical = all_zero && outputs[0] == outputs[1] && outputs[0].size() > 200;
  return verdict(ok == kRoundTripDialogs && identical,
                 std::to_string(ok) + "/" + std::to_string(kRoundTripDialogs) + " dialogs round-trip; " +
                     std::to_string(outputs[0].size()) + " rerun artifacts " +
                     (identical ? "byte-identical" : "differ"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria runner", "schemaflow_acceptance");
  std::vector<int> only;
  jobs_flag = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--jobs", jobs_flag, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"schema fixture fidelity", fixture_fidelity},
      {"policy equals graph walk", policy_graph_walk},
      {"corpus ingestion", corpus_ingestion},
      {"equation suite", equation_suite},
      {"gradient check", gradient_check},
      {"metric oracles", metric_oracles},
      {"directional transfer", transfer_claim},
      {"history dependence", history_probe},
      {"round-trip and determinism", round_trip_and_determinism},
  };
  bool failed = false;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    std::cerr << "running " << id << ": " << criteria[i].first << '\n';
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    failed |= o.status == Status::Fail;
    std::cout << tag << " [" << id << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
