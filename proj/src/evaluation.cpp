#include "schemaflow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "schemaflow/error.hpp"
#include "schemaflow/metrics.hpp"
#include "schemaflow/simulator.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

namespace {

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the lowest-index failure.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](unsigned j) {
    for (std::size_t i = j; i < n; i += jobs) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (unsigned j = 0; j < jobs; ++j) threads.emplace_back(work, j);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int stage_rank(Stage s) {
  switch (s) {
    case Stage::Happy: return 0;
    case Stage::Unhappy: return 1;
    case Stage::Multi: return 2;
  }
  return 0;
}

std::set<std::string> dialog_domains(const Dialog& d, const SchemaSet& schemas) {
  std::set<std::string> out;
  for (const auto& t : dialog_tasks(d)) {
    if (schemas.contains(t)) out.insert(schemas.domain_of(t));
  }
  return out;
}

// Per primary task, a seeded shuffle sends round((1 - f) n) dialogs to train.
void stratified(const std::vector<Dialog>& corpus, const std::vector<std::size_t>& pool, double test_fraction,
                std::uint64_t seed, Split& out) {
  std::map<std::string, std::vector<std::size_t>> by_task;
  for (auto i : pool) by_task[dialog_task(corpus[i])].push_back(i);
  for (auto& [task, idx] : by_task) {
    std::mt19937_64 rng(derive_seed(seed, fnv1a64(task)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train =
        static_cast<std::size_t>(std::llround((1.0 - test_fraction) * static_cast<double>(idx.size())));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    out.test.insert(out.test.end(), idx.begin() + static_cast<long>(n_train), idx.end());
  }
}

void finish(Split& s) {
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
}

std::vector<Dialog> pick(const std::vector<Dialog>& corpus, const std::vector<std::size_t>& idx) {
  std::vector<Dialog> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(corpus[i]);
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json guidance_json(const GuidanceConfig& g) {
  return {{"dim", g.dim},
          {"window", g.window},
          {"temperature", g.temperature},
          {"schema_guided", g.schema_guided},
          {"freeze_nodes", g.freeze_nodes},
          {"init_scale", g.init_scale},
          {"buckets", g.buckets},
          {"seed", g.seed}};
}

Json train_json(const TrainConfig& t) {
  return {{"lr", t.lr}, {"epochs", t.epochs}, {"batch", t.batch}, {"seed", t.seed}, {"l2", t.l2}};
}

MetricsReport make_report(std::string experiment, const SplitPlan& plan, Json config, std::uint64_t seed) {
  MetricsReport r;
  r.experiment = std::move(experiment);
  r.split = plan;
  r.fingerprint = config_fingerprint(config);
  r.config = std::move(config);
  r.seed = seed;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Happy: return "happy";
    case Stage::Unhappy: return "unhappy";
    case Stage::Multi: return "multi";
  }
  return "happy";
}

std::optional<Stage> stage_from_string(std::string_view name) {
  for (auto s : {Stage::Happy, Stage::Unhappy, Stage::Multi}) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

Stage dialog_stage(const Dialog& d) {
  if (d.scenario.multi_task || d.scenario.capabilities.size() > 1) return Stage::Multi;
  return d.scenario.happy ? Stage::Happy : Stage::Unhappy;
}

std::vector<std::string> dialog_tasks(const Dialog& d) { return d.scenario.capabilities; }

std::string dialog_task(const Dialog& d) {
  return d.scenario.capabilities.empty() ? std::string{} : d.scenario.capabilities.front();
}

std::string_view to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::Stage8020: return "stage_80_20";
    case SplitKind::LeaveOneTaskOut: return "leave_one_task_out";
    case SplitKind::LeaveOneDomainOut: return "leave_one_domain_out";
  }
  return "stage_80_20";
}

std::optional<SplitKind> split_kind_from_string(std::string_view name) {
  for (auto k : {SplitKind::Stage8020, SplitKind::LeaveOneTaskOut, SplitKind::LeaveOneDomainOut}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

Json SplitPlan::to_json() const {
  Json j{{"kind", to_string(kind)}, {"stage", to_string(stage)}, {"seed", seed}, {"test_fraction", test_fraction}};
  j["held_out"] = held_out ? Json(*held_out) : Json(nullptr);
  return j;
}

Split make_splits(const std::vector<Dialog>& corpus, const SplitPlan& plan, const SchemaSet& schemas) {
  Split out;
  if (plan.kind == SplitKind::Stage8020) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const int rank = stage_rank(dialog_stage(corpus[i]));
      if (rank < stage_rank(plan.stage)) {
        out.train.push_back(i);
      } else if (rank == stage_rank(plan.stage)) {
        pool.push_back(i);
      }
    }
    stratified(corpus, pool, plan.test_fraction, plan.seed, out);
    finish(out);
    if (out.test.empty()) throw Error(ErrorCode::EmptyHeldOut, std::string(to_string(plan.stage)), "no test dialogs");
    return out;
  }
  if (!plan.held_out) throw Error(ErrorCode::InvalidConfig, "held_out", "leave-one-out needs a held-out name");
  const auto& held = *plan.held_out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    bool touches = false;
    if (plan.kind == SplitKind::LeaveOneTaskOut) {
      const auto tasks = dialog_tasks(corpus[i]);
      touches = std::find(tasks.begin(), tasks.end(), held) != tasks.end();
    } else {
      touches = dialog_domains(corpus[i], schemas).count(held) != 0;
    }
    (touches ? out.test : out.train).push_back(i);
  }
  if (out.test.empty()) throw Error(ErrorCode::EmptyHeldOut, held, "no dialogs touch the held-out set");
  return out;
}

std::vector<std::string> corpus_tasks(const std::vector<Dialog>& corpus) {
  std::set<std::string> out;
  for (const auto& d : corpus) {
    for (const auto& t : dialog_tasks(d)) out.insert(t);
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> corpus_domains(const std::vector<Dialog>& corpus, const SchemaSet& schemas) {
  std::set<std::string> out;
  for (const auto& d : corpus) {
    for (const auto& dom : dialog_domains(d, schemas)) out.insert(dom);
  }
  return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------

std::vector<std::string> checked_actions(const World& world, std::string_view task) {
  if (!world.schemas.contains(task)) throw Error(ErrorCode::UnknownTask, std::string(task), "no schema");
  return prescribed_actions(world.schemas.at(task), world.profile(task));
}

bool order_consistency(const std::vector<std::string>& labels, const std::vector<std::string>& checked) {
  std::set<std::string> seen;
  std::size_t last = 0;
  for (const auto& label : labels) {
    auto it = std::find(checked.begin(), checked.end(), label);
    if (it == checked.end() || !seen.insert(label).second) continue;
    const auto pos = static_cast<std::size_t>(it - checked.begin());
    if (pos < last) return false;
    last = pos;
  }
  return true;
}

bool order_consistency(const Dialog& d, const World& world, std::string_view task) {
  return order_consistency(wizard_action_sequence(d, std::string(task)), checked_actions(world, task));
}

ConsistencyReport consistency_sweep(const std::vector<Dialog>& corpus, const World& world) {
  ConsistencyReport r;
  std::map<std::string, std::pair<std::size_t, std::size_t>> happy, all;  // task -> (consistent, n)
  for (const auto& task : world.schemas.tasks()) r.per_task[task];
  for (const auto& d : corpus) {
    if (dialog_stage(d) == Stage::Multi || d.scenario.capabilities.size() != 1) continue;
    const auto& task = d.scenario.capabilities.front();
    if (!world.schemas.contains(task)) continue;
    const bool ok = order_consistency(d, world, task);
    auto& a = all[task];
    a.first += ok ? 1 : 0;
    a.second += 1;
    if (d.scenario.happy) {
      auto& h = happy[task];
      h.first += ok ? 1 : 0;
      h.second += 1;
    }
  }
  double sum_h = 0, sum_a = 0;
  std::size_t n_h = 0, n_a = 0;
  for (auto& [task, tc] : r.per_task) {
    if (auto it = all.find(task); it != all.end()) {
      tc.n_all = it->second.second;
      tc.all = static_cast<double>(it->second.first) / static_cast<double>(tc.n_all);
      sum_a += *tc.all;
      ++n_a;
    }
    if (auto it = happy.find(task); it != happy.end()) {
      tc.n_happy = it->second.second;
      tc.happy = static_cast<double>(it->second.first) / static_cast<double>(tc.n_happy);
      sum_h += *tc.happy;
      ++n_h;
    }
  }
  if (n_a) r.mean_all = sum_a / static_cast<double>(n_a);
  if (n_h) r.mean_happy = sum_h / static_cast<double>(n_h);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::optional<DialogState>> replay_states(const Dialog& d, const World& world) {
  std::vector<std::optional<DialogState>> out;
  DialogState state = initial_state(d.scenario.capabilities);
  std::optional<Decision> pending;
  bool ok = true;
  for (const auto& e : d.events) {
    try {
      if (e.agent == Agent::User && e.action == EventAction::Utter) {
        if (ok) pending = decide(state, world, e);
      } else if (e.agent == Agent::Wizard && e.action == EventAction::Query) {
        ok = ok && pending && pending->query && pending->action == query_action(e.api.value_or(""));
        out.push_back(ok ? std::optional<DialogState>(pending->state) : std::nullopt);
      } else if (e.agent == Agent::KnowledgeBase && e.action == EventAction::Return) {
        if (ok && pending && pending->query) {
          QueryResult result;
          if (e.item && e.item->is_object()) result.item = item_from_json(*e.item);
          result.total_items = e.total_items.value_or(result.item ? 1 : 0);
          pending = resume_after_kb(pending->state, world, result);
        } else {
          ok = false;
        }
      } else if (e.agent == Agent::Wizard && e.action == EventAction::PickSuggestion) {
        ok = ok && pending && !pending->query && pending->action == e.intent.value_or("");
        if (ok) {
          state = pending->state;
          pending.reset();
        }
        out.push_back(ok ? std::optional<DialogState>(state) : std::nullopt);
      }
    } catch (const Error&) {
      ok = false;
    }
  }
  return out;
}

std::vector<StepExample> extract_examples(const std::vector<Dialog>& dialogs, const World& world,
                                          const std::vector<std::string>& vocab, bool replay) {
  const std::set<std::string> known(vocab.begin(), vocab.end());
  std::vector<StepExample> out;
  for (const auto& d : dialogs) {
    const auto view = view_dialog(d);
    std::vector<std::optional<DialogState>> states;
    if (replay) states = replay_states(d, world);
    const auto scope = dialog_tasks(d);
    for (std::size_t i = 0; i < view.steps.size(); ++i) {
      const auto& step = view.steps[i];
      StepExample s;
      s.example.history.assign(view.turns.begin(), view.turns.begin() + static_cast<long>(step.history_size));
      s.example.gold = known.empty() || known.count(step.label) ? step.label : std::string(kCustomAction);
      s.example.scope = scope;
      s.response = step.response;
      s.is_query = step.is_query;
      if (i < states.size()) s.state = states[i];
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Example> examples_only(const std::vector<StepExample>& steps) {
  std::vector<Example> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.example);
  return out;
}

// ---------------------------------------------------------------------------

Json MetricsReport::to_json() const {
  return {{"experiment", experiment}, {"split", split.to_json()}, {"metrics", metrics}, {"per_task", per_task},
          {"fingerprint", fingerprint}, {"seed", seed},           {"config", config}};
}

MetricsReport MetricsReport::from_json(const Json& j) {
  MetricsReport r;
  try {
    r.experiment = j.at("experiment").get<std::string>();
    const auto& s = j.at("split");
    auto kind = split_kind_from_string(s.at("kind").get<std::string>());
    auto stage = stage_from_string(s.at("stage").get<std::string>());
    if (!kind || !stage) throw Error(ErrorCode::InvalidField, "split", "unknown split kind or stage");
    r.split.kind = *kind;
    r.split.stage = *stage;
    r.split.seed = s.at("seed").get<std::uint64_t>();
    r.split.test_fraction = s.at("test_fraction").get<double>();
    if (!s.at("held_out").is_null()) r.split.held_out = s.at("held_out").get<std::string>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    r.per_task = j.at("per_task").get<std::map<std::string, std::map<std::string, double>>>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::MissingField, "report", e.what());
  }
  return r;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "scope,metric,value\n";
  for (const auto& [name, value] : metrics) out << "all," << name << ',' << format_double(value) << '\n';
  for (const auto& [task, m] : per_task) {
    for (const auto& [name, value] : m) out << task << ',' << name << ',' << format_double(value) << '\n';
  }
  return out.str();
}

std::string config_fingerprint(const Json& config) { return hex64(fnv1a64(config.dump())); }

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, "paired_t_test", std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw Error(ErrorCode::EmptyDataset, "paired_t_test", "needs at least two pairs");
  const auto n = static_cast<double>(a.size());
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : diff) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  PairedTest r;
  r.mean_difference = mean;
  r.df = n - 1.0;
  if (sd == 0.0) {
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0;
    r.p_one_sided = mean > 0 ? 0.0 : mean < 0 ? 1.0 : 0.5;
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(r.df);
  r.p_one_sided = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

// ---------------------------------------------------------------------------

Json ModelSetup::to_json() const {
  return {{"guidance", guidance_json(guidance)},
          {"train", train_json(train)},
          {"mask_train", mask_train},
          {"mask_test", mask_test}};
}

namespace {

GuidanceModel fit(const std::vector<Dialog>& train_dialogs, const World& world, const GuidanceConfig& g,
                  const ModelSetup& setup, TrainResult* result) {
  auto model = GuidanceModel::for_schemas(world.schemas, g);
  const auto steps = extract_examples(train_dialogs, world, model.vocab());
  auto r = train(model, prepare(model, examples_only(steps), setup.mask_train), setup.train);
  if (result) *result = std::move(r);
  return model;
}

}  // namespace

void score_next_action(const GuidanceModel& model, const std::vector<Dialog>& dialogs, const World& world, bool mask,
                       MetricsReport& report) {
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> per_task;
  std::vector<std::string> gold, pred;
  for (const auto& d : dialogs) {
    const auto steps = extract_examples({d}, world, model.vocab());
    const auto prepared = prepare(model, examples_only(steps), mask);
    auto& [tg, tp] = per_task[dialog_task(d)];
    for (const auto& ex : prepared) {
      const auto g = model.vocab()[ex.gold];
      const auto p = model.vocab()[predict_action(model, ex)];
      gold.push_back(g);
      pred.push_back(p);
      tg.push_back(g);
      tp.push_back(p);
    }
  }
  const auto f1 = weighted_f1(gold, pred);
  report.metrics["weighted_f1"] = f1.weighted_f1;
  report.metrics["accuracy"] = f1.accuracy;
  report.metrics["n_test_examples"] = static_cast<double>(gold.size());
  for (const auto& [task, gp] : per_task) {
    if (gp.first.empty()) continue;
    const auto r = weighted_f1(gp.first, gp.second);
    report.per_task[task] = {{"weighted_f1", r.weighted_f1}, {"accuracy", r.accuracy},
                             {"n", static_cast<double>(gp.first.size())}};
  }
}

StageResult evaluate_stage(const std::vector<Dialog>& corpus, const World& world, const SplitPlan& plan,
                           const ModelSetup& setup) {
  const auto split = make_splits(corpus, plan, world.schemas);
  StageResult out;
  const auto train_dialogs = pick(corpus, split.train);
  if (train_dialogs.empty()) throw Error(ErrorCode::EmptyDataset, "train", "no training dialogs");
  auto model = fit(train_dialogs, world, setup.guidance, setup, &out.training);

  const auto test_dialogs = pick(corpus, split.test);
  Json config{{"experiment", "stage"}, {"setup", setup.to_json()}, {"split", plan.to_json()}};
  out.report = make_report("stage", plan, config, plan.seed);
  score_next_action(model, test_dialogs, world, setup.mask_test, out.report);
  out.report.metrics["n_train_dialogs"] = static_cast<double>(split.train.size());
  out.report.metrics["n_test_dialogs"] = static_cast<double>(split.test.size());
  out.report.metrics["initial_loss"] = out.training.initial_loss;
  out.report.metrics["final_loss"] = out.training.final_loss;
  return out;
}

std::vector<Dialog> refer_back_corpus(const World& world, std::size_t n, std::uint64_t seed, int distance,
                                      int per_dialog, const std::vector<std::string>& tasks) {
  std::vector<Dialog> out;
  ScenarioConfig c;
  c.happy_ratio = 0.0;
  c.kinds = {PerturbationKind::ReferBack};
  c.max_perturbations = per_dialog;
  c.tasks = tasks;
  for (std::uint64_t i = 0; out.size() < n; ++i) {
    if (i > 20 * n + 100) throw Error(ErrorCode::Deadlock, "refer_back_corpus", "too many scenarios deadlocked");
    c.seed = derive_seed(seed, i);
    auto spec = sample_scenario(world, c);
    for (auto& p : spec.perturbations) p.distance = distance;
    try {
      out.push_back(run_dialog(spec, world, static_cast<std::int64_t>(out.size())));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Deadlock) throw;
    }
  }
  return out;
}

std::vector<HistoryPoint> history_sweep(const std::vector<Dialog>& corpus, const World& world,
                                        const std::vector<int>& windows, const ModelSetup& setup,
                                        std::uint64_t split_seed, unsigned jobs) {
  if (windows.empty()) throw Error(ErrorCode::InvalidConfig, "windows", "no window sizes given");
  for (int w : windows) {
    if (w < 1) throw Error(ErrorCode::InvalidConfig, "windows", "window sizes must be positive");
  }
  Split split;
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), 0);
  stratified(corpus, all, 0.2, split_seed, split);
  finish(split);
  if (split.train.empty() || split.test.empty()) throw Error(ErrorCode::EmptyDataset, "history", "corpus too small");
  const auto train_dialogs = pick(corpus, split.train);
  const auto test_dialogs = pick(corpus, split.test);

  std::vector<HistoryPoint> out(windows.size());
  parallel_for(windows.size(), jobs, [&](std::size_t i) {
    auto g = setup.guidance;
    g.window = windows[i];
    g.schema_guided = false;
    auto model = fit(train_dialogs, world, g, setup, nullptr);
    const auto test = prepare(model, examples_only(extract_examples(test_dialogs, world, model.vocab())), setup.mask_test);
    const auto r = evaluate_next_action(model, test);
    out[i] = {windows[i], r.accuracy, r.weighted_f1};
  });
  return out;
}

std::string_view to_string(TransferKind kind) { return kind == TransferKind::Task ? "task" : "domain"; }

namespace {

std::map<std::string, double> score_fold(const GuidanceModel& model, const std::vector<StepExample>& steps,
                                         const std::vector<PreparedExample>& prepared, const World& world,
                                         bool generation, double* gate_mean) {
  std::vector<std::string> gold, pred, hyps, refs, ref_actions;
  std::size_t flagged = 0;
  double gate_sum = 0.0;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const auto fd = predict_distribution(model, prepared[i]);
    gate_sum += fd.gate;
    const auto p = predict_action(model, prepared[i]);
    gold.push_back(model.vocab()[prepared[i].gold]);
    pred.push_back(model.vocab()[p]);
    const auto& step = steps[i];
    if (!generation || step.is_query || !step.state) continue;
    std::string hyp;
    try {
      auto ctx = context_from_distribution(fd.dist, model.vocab(), step.example.history, world.schemas,
                                           step.example.scope);
      auto real = realize(ctx, *step.state);
      flagged += real.flagged() ? 1 : 0;
      hyp = std::move(real.text);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::VocabTooSmall) throw;
    }
    hyps.push_back(std::move(hyp));
    refs.push_back(step.response);
    ref_actions.push_back(step.example.gold);
  }
  const auto f1 = weighted_f1(gold, pred);
  std::map<std::string, double> m{{"weighted_f1", f1.weighted_f1}, {"accuracy", f1.accuracy}};
  if (generation && !hyps.empty()) {
    EntityExtractor ex(world.schemas);
    const auto s = evaluate_generation(hyps, refs, ref_actions, default_generic_labels(world.schemas), ex);
    m["bleu4"] = s.bleu4;
    m["iem"] = s.iem;
    m["entity_f1"] = s.entity_f1;
    m["unresolved_rate"] = static_cast<double>(flagged) / static_cast<double>(hyps.size());
  }
  if (gate_mean) *gate_mean = prepared.empty() ? 0.0 : gate_sum / static_cast<double>(prepared.size());
  return m;
}

std::map<std::string, double> mean_over(const std::vector<TransferFold>& folds,
                                        std::map<std::string, double> TransferFold::*member) {
  std::map<std::string, double> sum;
  for (const auto& f : folds) {
    for (const auto& [k, v] : f.*member) sum[k] += v;
  }
  for (auto& [k, v] : sum) v /= static_cast<double>(folds.size());
  return sum;
}

}  // namespace

TransferReport transfer_sweep(const std::vector<Dialog>& corpus, const World& world, const TransferConfig& config) {
  const auto held = config.kind == TransferKind::Task ? corpus_tasks(corpus) : corpus_domains(corpus, world.schemas);
  if (held.size() < 2) {
    throw Error(ErrorCode::InsufficientTasks, std::string(to_string(config.kind)),
                "transfer needs at least two, found " + std::to_string(held.size()));
  }
  TransferReport report;
  report.kind = config.kind;
  report.folds.resize(held.size());

  // Fold x model, so both variants of a fold can train in parallel.
  parallel_for(held.size() * 2, config.jobs, [&](std::size_t job) {
    const auto fold = job / 2;
    const bool guided = job % 2 == 1;
    SplitPlan plan;
    plan.kind = config.kind == TransferKind::Task ? SplitKind::LeaveOneTaskOut : SplitKind::LeaveOneDomainOut;
    plan.held_out = held[fold];
    const auto split = make_splits(corpus, plan, world.schemas);
    if (split.train.empty()) throw Error(ErrorCode::EmptyDataset, held[fold], "nothing left to train on");
    auto g = config.setup.guidance;
    g.schema_guided = guided;
    auto model = fit(pick(corpus, split.train), world, g, config.setup, nullptr);
    const auto steps = extract_examples(pick(corpus, split.test), world, model.vocab(), config.generation);
    const auto prepared = prepare(model, examples_only(steps), config.setup.mask_test);
    double gate = 0.0;
    auto metrics = score_fold(model, steps, prepared, world, config.generation, &gate);
    auto& f = report.folds[fold];
    if (guided) {
      f.scm = std::move(metrics);
      f.mean_gate = gate;
    } else {
      f.clf = std::move(metrics);
      f.held_out = held[fold];
      f.n_train = split.train.size();
      f.n_test = split.test.size();
    }
  });

  SplitPlan plan;
  plan.kind = config.kind == TransferKind::Task ? SplitKind::LeaveOneTaskOut : SplitKind::LeaveOneDomainOut;
  Json base{{"experiment", "transfer"}, {"kind", to_string(config.kind)}, {"setup", config.setup.to_json()},
            {"generation", config.generation}};
  auto clf_config = base;
  clf_config["setup"]["guidance"]["schema_guided"] = false;
  auto scm_config = base;
  scm_config["setup"]["guidance"]["schema_guided"] = true;
  report.clf = make_report("transfer_clf", plan, clf_config, config.setup.train.seed);
  report.scm = make_report("transfer_clf_schema", plan, scm_config, config.setup.train.seed);
  report.clf.metrics = mean_over(report.folds, &TransferFold::clf);
  report.scm.metrics = mean_over(report.folds, &TransferFold::scm);
  double gate = 0.0;
  for (const auto& f : report.folds) {
    report.clf.per_task[f.held_out] = f.clf;
    report.scm.per_task[f.held_out] = f.scm;
    report.scm.per_task[f.held_out]["mean_gate"] = f.mean_gate;
    gate += f.mean_gate;
  }
  report.scm.metrics["mean_gate"] = gate / static_cast<double>(report.folds.size());
  return report;
}

}  // namespace schemaflow
