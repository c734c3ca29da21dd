#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "schemaflow/dialog.hpp"
#include "schemaflow/error.hpp"
#include "schemaflow/evaluation.hpp"
#include "schemaflow/guidance.hpp"
#include "schemaflow/json_io.hpp"
#include "schemaflow/kb.hpp"
#include "schemaflow/schema.hpp"
#include "schemaflow/simulator.hpp"
#include "schemaflow/text.hpp"
#include "schemaflow/world.hpp"

namespace fs = std::filesystem;

namespace schemaflow::cli {

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitConfig = 2;

// A configuration problem detected by the CLI itself.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON-lines logger on stderr.
class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {}

  void write(std::string_view level, std::string_view event, Json fields = Json::object()) const {
    Json line{{"level", level}, {"event", event}};
    line.update(fields);
    err_ << line.dump() << '\n';
  }
  void info(std::string_view event, Json fields = Json::object()) const { write("info", event, std::move(fields)); }
  void error(std::string_view event, Json fields = Json::object()) const { write("error", event, std::move(fields)); }

 private:
  std::ostream& err_;
};

std::uint64_t stream_seed(std::uint64_t master, std::string_view label) {
  return derive_seed(master, fnv1a64(label));
}

// ---------------------------------------------------------------------------
// Option helpers

CLI::Validator positive_count(const std::string& name) {
  return CLI::Validator(
      [name](std::string& value) -> std::string {
        try {
          if (std::stoll(value) > 0) return {};
        } catch (const std::exception&) {
        }
        return name + " must be positive";
      },
      "POSITIVE");
}

void add_model_options(CLI::App* sub, ModelOptions& m) {
  sub->add_option("--dim", m.dim, "Encoder dimension")->check(CLI::PositiveNumber)->group("Model");
  sub->add_option("--window", m.window, "History window in turns")->check(CLI::PositiveNumber)->group("Model");
  sub->add_option("--temperature", m.temperature, "Attention temperature")->check(CLI::PositiveNumber)->group("Model");
  sub->add_flag("--no-schema", m.no_schema, "Train the schema-free classifier only")->group("Model");
  sub->add_flag("--freeze-nodes", m.freeze_nodes, "Keep schema node encodings fixed")->group("Model");
  sub->add_option("--buckets", m.buckets, "Feature hash buckets")->check(CLI::PositiveNumber)->group("Model");
  sub->add_option("--lr", m.lr, "Adam learning rate")->check(CLI::NonNegativeNumber)->group("Model");
  sub->add_option("--epochs", m.epochs, "Training epochs")->check(CLI::NonNegativeNumber)->group("Model");
  sub->add_option("--batch", m.batch, "Mini-batch size")->check(CLI::PositiveNumber)->group("Model");
  sub->add_option("--l2", m.l2, "L2 penalty")->check(CLI::NonNegativeNumber)->group("Model");
  sub->add_flag("--mask-train", m.mask_train, "Restrict training softmax to the dialog's task actions")
      ->group("Model");
  sub->add_flag("--no-mask-test", m.no_mask_test, "Let every action compete at test time")->group("Model");
}

ModelSetup make_setup(const ModelOptions& m, std::uint64_t seed) {
  ModelSetup s;
  s.guidance.dim = m.dim;
  s.guidance.window = m.window;
  s.guidance.temperature = m.temperature;
  s.guidance.schema_guided = !m.no_schema;
  s.guidance.freeze_nodes = m.freeze_nodes;
  s.guidance.buckets = m.buckets;
  s.guidance.seed = stream_seed(seed, "model");
  s.train.lr = m.lr;
  s.train.epochs = m.epochs;
  s.train.batch = m.batch;
  s.train.l2 = m.l2;
  s.train.seed = stream_seed(seed, "train");
  s.mask_train = m.mask_train;
  s.mask_test = !m.no_mask_test;
  return s;
}

Stage parse_stage(const std::string& name) {
  auto s = stage_from_string(name);
  if (!s) throw ConfigError("unknown stage '" + name + "'");
  return *s;
}

// Values of every option the invocation touched, defaults included.
Json effective_config(const CLI::App& app) {
  Json out = Json::object();
  for (const auto* opt : app.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      out[name] = opt->count() > 0;
    } else if (!opt->results().empty()) {
      const auto& r = opt->results();
      out[name] = r.size() == 1 ? Json(r.front()) : Json(r);
    } else if (opt->get_expected_max() > 1) {
      out[name] = Json::array();
    } else {
      out[name] = opt->get_default_str();
    }
  }
  for (const auto* sub : app.get_subcommands()) out[sub->get_name()] = effective_config(*sub);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus I/O

std::vector<Dialog> load_corpus(const fs::path& dir) {
  const auto root = fs::is_directory(dir / "dialogues") ? dir / "dialogues" : dir;
  std::vector<Dialog> out;
  for (const auto& file : list_json_files(root)) out.push_back(read_dialog(read_text_file(file)));
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, root.string(), "no dialog files");
  return out;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string corpus_digest(const std::vector<Dialog>& corpus) {
  std::uint64_t h = fnv1a64("");
  for (const auto& d : corpus) h = fnv1a64(write_dialog(d), h);
  return hex16(h);
}

std::vector<Dialog> pick(const std::vector<Dialog>& corpus, const std::vector<std::size_t>& idx) {
  std::vector<Dialog> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(corpus[i]);
  return out;
}

void write_report(const Options& o, const std::string& name, const MetricsReport& r, std::ostream& out,
                  const Log& log) {
  if (o.out.empty()) {
    out << r.to_json().dump(2) << '\n';
    return;
  }
  fs::create_directories(o.out);
  write_text_file(fs::path(o.out) / (name + ".json"), r.to_json().dump(2) + "\n");
  write_text_file(fs::path(o.out) / (name + ".csv"), r.to_csv());
  log.info("report_written", {{"path", (fs::path(o.out) / (name + ".json")).string()}});
}

// ---------------------------------------------------------------------------
// validate-schema

int cmd_validate(const Options& o, std::ostream& out, const Log& log) {
  std::size_t bad = 0;
  for (const auto& file : o.schema_files) {
    const auto violations = validate_schema(read_text_file(file));
    if (violations.empty()) {
      out << file << ": ok\n";
      continue;
    }
    ++bad;
    for (const auto& v : violations) {
      out << file << ": " << to_string(v.code) << " " << v.subject << ": " << v.message << '\n';
    }
  }
  log.info("validate_schema", {{"files", o.schema_files.size()}, {"invalid", bad}});
  return bad == 0 ? 0 : kExitValidation;
}

// ---------------------------------------------------------------------------
// kb

Scalar typed_value(const FieldSpec& field, const std::string& raw) {
  switch (field.type) {
    case FieldType::Integer: {
      std::size_t used = 0;
      std::int64_t v = 0;
      try {
        v = std::stoll(raw, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != raw.size() || raw.empty()) throw Error(ErrorCode::TypeMismatch, field.name, "expected an integer");
      return v;
    }
    case FieldType::Boolean:
      if (iequals(raw, "true")) return true;
      if (iequals(raw, "false")) return false;
      throw Error(ErrorCode::TypeMismatch, field.name, "expected true or false");
    case FieldType::String:
      break;
  }
  return raw;
}

// key=op:value, key=value (equality) or key=one_of:a|b.
Constraint parse_where(const KbTable& table, const std::string& expr) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--where expects key=op:value, got '" + expr + "'");
  const auto key = expr.substr(0, eq);
  auto rest = expr.substr(eq + 1);
  ConstraintOp op = ConstraintOp::Eq;
  if (auto colon = rest.find(':'); colon != std::string::npos) {
    if (auto parsed = constraint_op_from_string(rest.substr(0, colon))) {
      op = *parsed;
      rest = rest.substr(colon + 1);
    }
  }
  const auto* field = table.field(key);
  if (field == nullptr) throw Error(ErrorCode::UnknownField, key, "not a field of " + table.name());
  if (op == ConstraintOp::OneOf) {
    std::vector<Scalar> values;
    std::size_t start = 0;
    while (true) {
      const auto bar = rest.find('|', start);
      values.push_back(typed_value(*field, rest.substr(start, bar - start)));
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    return make_one_of(key, std::move(values));
  }
  return make_constraint(key, op, typed_value(*field, rest));
}

int cmd_kb_query(const Options& o, const World& world, std::ostream& out) {
  if (!world.kb.contains(o.kb_table)) throw Error(ErrorCode::UnknownTable, o.kb_table);
  const auto& table = world.kb.table(o.kb_table);
  std::vector<Constraint> constraints;
  if (!o.constraints_json.empty()) constraints = parse_corpus_constraints(parse_json(o.constraints_json));
  for (const auto& w : o.where) constraints.push_back(parse_where(table, w));
  std::mt19937_64 rng(o.kb_seed);
  const auto r = world.kb.query(o.kb_table, constraints, rng);
  Json j{{"table", o.kb_table},
         {"constraints", constraints_to_json(constraints)},
         {"total_items", r.total_items},
         {"item", r.item ? item_to_json(*r.item) : Json(nullptr)}};
  out << j.dump(2) << '\n';
  return 0;
}

int cmd_kb_tables(const World& world, std::ostream& out) {
  Json j = Json::array();
  for (const auto& name : world.kb.table_names()) {
    const auto& t = world.kb.table(name);
    Json fields = Json::array();
    for (const auto& f : t.fields()) fields.push_back(f.name);
    j.push_back({{"table", name}, {"fields", fields}, {"rows", t.rows().size()}});
  }
  out << j.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// chat

void print_events(const std::vector<Event>& events, std::size_t from, std::ostream& out) {
  for (std::size_t i = from; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.agent == Agent::Wizard && e.action == EventAction::Query) {
      out << "  [query " << e.api.value_or("") << "] " << e.constraints.value_or(Json::object()).dump() << '\n';
    } else if (e.agent == Agent::KnowledgeBase) {
      out << "  [kb] " << e.total_items.value_or(0) << " match(es), item " << e.item.value_or(Json(nullptr)).dump()
          << '\n';
    } else if (e.agent == Agent::Wizard && e.action == EventAction::SelectTopic) {
      out << "  [topic] " << e.topic.value_or("") << '\n';
    } else if (e.agent == Agent::Wizard && e.action == EventAction::Utter) {
      out << "Wizard: " << e.text.value_or("") << '\n';
    }
  }
}

int cmd_chat(const Options& o, const World& world, std::istream& in, std::ostream& out, const Log& log) {
  std::vector<std::string> tasks{o.chat_schema};
  for (const auto& t : o.chat_multi) {
    if (std::find(tasks.begin(), tasks.end(), t) == tasks.end()) tasks.push_back(t);
  }
  for (const auto& t : tasks) {
    if (!world.schemas.contains(t)) throw Error(ErrorCode::UnknownTask, t);
  }
  WizardAgent wizard(world, tasks);
  std::mt19937_64 rng(o.chat_seed);
  std::vector<Event> events;
  out << "Chatting with the " << join(tasks, ", ") << " wizard. Type as the user; /quit ends.\n";
  std::string line;
  while (out << "> " << std::flush, std::getline(in, line)) {
    line = trim(line);
    if (line == "/quit") break;
    if (line.empty()) continue;
    const auto before = events.size();
    try {
      wizard.respond(line, rng, events);
    } catch (const Error& e) {
      events.resize(before);
      out << "  [no reply: " << e.what() << "]\n";
      continue;
    }
    print_events(events, before, out);
  }
  events.push_back(Event::user_complete());

  if (!o.transcript.empty()) {
    Dialog d;
    d.batch_id = "chat";
    d.completion_level = "Complete";
    d.wizard_worker = "schema-policy";
    d.user_worker = "human";
    d.scenario.capabilities = tasks;
    d.scenario.user_task = join(tasks, ", ");
    d.scenario.wizard_task = d.scenario.user_task;
    d.scenario.multi_task = tasks.size() > 1;
    d.scenario.happy = true;
    for (const auto& t : tasks) {
      const auto& domain = world.schemas.domain_of(t);
      auto& ds = d.scenario.domains;
      if (std::find(ds.begin(), ds.end(), domain) == ds.end()) ds.push_back(domain);
    }
    d.events = std::move(events);
    write_text_file(o.transcript, write_dialog(d));
    log.info("transcript_written", {{"path", o.transcript}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simulate / stats

Json stats_json(const CorpusStats& s) {
  return {{"n_dialogs", s.n_dialogs},
          {"n_turns", s.n_turns},
          {"turns_per_dialog", s.turns_per_dialog},
          {"turns_per_dialog_sd", s.turns_per_dialog_sd},
          {"tokens_per_turn", s.tokens_per_turn},
          {"user_vocab_size", s.user_vocab_size}};
}

void check_tasks(const World& world, const std::vector<std::string>& tasks) {
  for (const auto& t : tasks) {
    if (!world.schemas.contains(t)) throw Error(ErrorCode::UnknownTask, t);
  }
}

ScenarioConfig scenario_config(const Options& o, const World& world) {
  ScenarioConfig c;
  c.happy_ratio = o.happy_ratio;
  c.multi_ratio = o.multi_ratio;
  c.max_tasks = o.max_tasks;
  c.revisit_ratio = o.revisit_ratio;
  c.max_perturbations = o.max_perturbations;
  check_tasks(world, o.tasks);
  c.tasks = o.tasks;
  if (!o.kinds.empty()) {
    c.kinds.clear();
    for (const auto& k : o.kinds) {
      auto kind = perturbation_from_string(k);
      if (!kind) throw ConfigError("unknown perturbation kind '" + k + "'");
      c.kinds.push_back(*kind);
    }
  }
  c.seed = o.seed;
  return c;
}

int cmd_simulate(const Options& o, const World& world, const Log& log) {
  const auto config = scenario_config(o, world);
  const fs::path dir = fs::path(o.out) / "dialogues";
  if (fs::is_directory(dir) && !list_json_files(dir).empty()) {
    if (!o.overwrite) throw ConfigError(dir.string() + " already holds dialogs; pass --overwrite to replace them");
    for (const auto& f : list_json_files(dir)) fs::remove(f);
  }
  fs::create_directories(dir);
  const auto corpus = simulate_corpus(world, config, static_cast<std::size_t>(o.n), o.jobs);
  Json files = Json::array();
  for (const auto& d : corpus) {
    char name[32];
    std::snprintf(name, sizeof name, "%06lld.json", static_cast<long long>(d.dialog_id));
    write_text_file(dir / name, write_dialog(d));
    files.push_back(std::string("dialogues/") + name);
  }
  Json kinds = Json::array();
  for (auto k : config.kinds) kinds.push_back(to_string(k));
  Json manifest{{"n", corpus.size()},
                {"seed", o.seed},
                {"config",
                 {{"happy_ratio", config.happy_ratio},
                  {"multi_ratio", config.multi_ratio},
                  {"max_tasks", config.max_tasks},
                  {"revisit_ratio", config.revisit_ratio},
                  {"max_perturbations", config.max_perturbations},
                  {"kinds", kinds},
                  {"tasks", config.tasks}}},
                {"stats", stats_json(corpus_stats(corpus, entity_values(world)))},
                {"dialogues", files}};
  write_text_file(fs::path(o.out) / "manifest.json", manifest.dump(2) + "\n");
  log.info("simulated", {{"n", corpus.size()}, {"out", o.out}});
  return 0;
}

int cmd_stats(const Options& o, const World& world, std::ostream& out, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto j = stats_json(corpus_stats(corpus, entity_values(world)));
  if (o.out.empty()) {
    out << j.dump(2) << '\n';
  } else {
    fs::create_directories(o.out);
    write_text_file(fs::path(o.out) / "stats.json", j.dump(2) + "\n");
    log.info("report_written", {{"path", (fs::path(o.out) / "stats.json").string()}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

SplitPlan stage_plan(const Options& o) {
  SplitPlan plan;
  plan.kind = SplitKind::Stage8020;
  plan.stage = parse_stage(o.stage);
  plan.seed = stream_seed(o.seed, "split");
  return plan;
}

int cmd_train(const Options& o, const World& world, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto plan = stage_plan(o);
  const auto split = make_splits(corpus, plan, world.schemas);
  auto train_idx = split.train;
  std::vector<std::size_t> val_idx;
  if (o.val_frac > 0.0) {
    std::mt19937_64 rng(stream_seed(o.seed, "validation"));
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(o.val_frac * static_cast<double>(train_idx.size())));
    val_idx.assign(train_idx.end() - static_cast<std::ptrdiff_t>(n_val), train_idx.end());
    train_idx.resize(train_idx.size() - n_val);
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
  }
  if (train_idx.empty()) throw Error(ErrorCode::EmptyDataset, "train", "no training dialogs");

  const auto setup = make_setup(o.model, o.seed);
  auto model = GuidanceModel::for_schemas(world.schemas, setup.guidance);
  const auto steps = extract_examples(pick(corpus, train_idx), world, model.vocab());
  const auto data = prepare(model, examples_only(steps), setup.mask_train);
  log.info("training", {{"dialogs", train_idx.size()}, {"examples", data.size()}});
  const auto result = train(model, data, setup.train);

  fs::create_directories(o.out);
  model.save(fs::path(o.out) / "model.ckpt");
  Json config{{"experiment", "train"}, {"setup", setup.to_json()}, {"split", plan.to_json()},
              {"val_frac", o.val_frac}, {"corpus", corpus_digest(corpus)}};
  Json summary{{"config", config},
               {"fingerprint", config_fingerprint(config)},
               {"seed", o.seed},
               {"n_train_dialogs", train_idx.size()},
               {"n_train_examples", data.size()},
               {"initial_loss", result.initial_loss},
               {"final_loss", result.final_loss},
               {"loss_curve", result.loss_curve},
               {"validation", nullptr}};
  if (!val_idx.empty()) {
    MetricsReport val;
    score_next_action(model, pick(corpus, val_idx), world, setup.mask_test, val);
    summary["validation"] = val.metrics;
    summary["validation"]["n_dialogs"] = val_idx.size();
  }
  write_text_file(fs::path(o.out) / "train.json", summary.dump(2) + "\n");
  log.info("trained", {{"final_loss", result.final_loss}, {"out", o.out}});
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval_stage(const Options& o, const World& world, std::ostream& out, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto plan = stage_plan(o);
  MetricsReport report;
  if (o.model_path.empty()) {
    auto setup = make_setup(o.model, o.seed);
    report = evaluate_stage(corpus, world, plan, setup).report;
    report.config["corpus"] = corpus_digest(corpus);
    report.fingerprint = config_fingerprint(report.config);
  } else {
    const auto model = GuidanceModel::load(o.model_path);
    const auto split = make_splits(corpus, plan, world.schemas);
    report.experiment = "stage";
    report.split = plan;
    report.seed = o.seed;
    report.config = {{"experiment", "stage"},
                     {"model", hex16(fnv1a64(read_text_file(o.model_path)))},
                     {"split", plan.to_json()},
                     {"mask_test", !o.model.no_mask_test},
                     {"corpus", corpus_digest(corpus)}};
    report.fingerprint = config_fingerprint(report.config);
    score_next_action(model, pick(corpus, split.test), world, !o.model.no_mask_test, report);
    report.metrics["n_train_dialogs"] = static_cast<double>(split.train.size());
    report.metrics["n_test_dialogs"] = static_cast<double>(split.test.size());
  }
  log.info("eval_stage", {{"weighted_f1", report.metrics.at("weighted_f1")}});
  write_report(o, "stage", report, out, log);
  return 0;
}

int cmd_eval_consistency(const Options& o, const World& world, std::ostream& out, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto c = consistency_sweep(corpus, world);
  MetricsReport r;
  r.experiment = "consistency";
  r.seed = o.seed;
  r.config = {{"experiment", "consistency"}, {"corpus", corpus_digest(corpus)}};
  r.fingerprint = config_fingerprint(r.config);
  if (c.mean_happy) r.metrics["mean_happy"] = *c.mean_happy;
  if (c.mean_all) r.metrics["mean_all"] = *c.mean_all;
  r.metrics["n_dialogs"] = static_cast<double>(corpus.size());
  for (const auto& [task, t] : c.per_task) {
    auto& row = r.per_task[task];
    row["n_happy"] = static_cast<double>(t.n_happy);
    row["n_all"] = static_cast<double>(t.n_all);
    if (t.happy) row["happy"] = *t.happy;
    if (t.all) row["all"] = *t.all;
  }
  write_report(o, "consistency", r, out, log);
  return 0;
}

int cmd_eval_history(const Options& o, const World& world, std::ostream& out, const Log& log) {
  std::vector<Dialog> corpus;
  Json source;
  if (!o.corpus.empty()) {
    corpus = load_corpus(o.corpus);
    source = {{"corpus", corpus_digest(corpus)}};
  } else {
    check_tasks(world, o.tasks);
    corpus = refer_back_corpus(world, static_cast<std::size_t>(o.probe_n), stream_seed(o.seed, "corpus"),
                               o.distance, o.per_dialog, o.tasks);
    source = {{"generated",
               {{"n", o.probe_n}, {"distance", o.distance}, {"per_dialog", o.per_dialog}, {"tasks", o.tasks}}}};
  }
  const auto setup = make_setup(o.model, o.seed);
  const auto split_seed = stream_seed(o.seed, "split");
  log.info("eval_history", {{"dialogs", corpus.size()}, {"windows", o.windows}});
  const auto points = history_sweep(corpus, world, o.windows, setup, split_seed, o.jobs);

  MetricsReport r;
  r.experiment = "history";
  r.split.kind = SplitKind::Stage8020;
  r.split.stage = Stage::Unhappy;
  r.split.seed = split_seed;
  r.seed = o.seed;
  r.config = {{"experiment", "history"}, {"setup", setup.to_json()}, {"windows", o.windows}, {"source", source}};
  r.fingerprint = config_fingerprint(r.config);
  for (const auto& p : points) {
    r.metrics["accuracy@" + std::to_string(p.window)] = p.accuracy;
    r.metrics["weighted_f1@" + std::to_string(p.window)] = p.weighted_f1;
  }
  r.metrics["n_dialogs"] = static_cast<double>(corpus.size());
  write_report(o, "history", r, out, log);
  return 0;
}

int cmd_eval_transfer(const Options& o, const World& world, std::ostream& out, const Log& log) {
  const auto tasks = o.tasks.empty() ? kTransferTasks : o.tasks;
  check_tasks(world, tasks);
  TransferConfig tc;
  if (o.transfer_kind == "task") {
    tc.kind = TransferKind::Task;
  } else if (o.transfer_kind == "domain") {
    tc.kind = TransferKind::Domain;
  } else {
    throw ConfigError("--kind must be task or domain");
  }
  tc.generation = !o.no_generation;
  tc.jobs = o.jobs;

  std::vector<Dialog> fixed;
  if (!o.corpus.empty()) fixed = load_corpus(o.corpus);

  std::vector<double> clf_f1, scm_f1;
  std::map<std::string, std::map<std::string, double>> folds;  // held-out -> model_metric -> sum
  std::map<std::string, double> totals;
  std::string seeds_csv = "seed,clf_weighted_f1,scm_weighted_f1\n";
  for (int i = 0; i < o.seeds; ++i) {
    const auto s = derive_seed(o.seed, static_cast<std::uint64_t>(i));
    std::vector<Dialog> generated;
    if (fixed.empty()) {
      auto sc = scenario_config(o, world);
      sc.tasks = tasks;
      sc.seed = stream_seed(s, "corpus");
      generated = simulate_corpus(world, sc, static_cast<std::size_t>(o.transfer_n), o.jobs);
    }
    const auto& corpus = fixed.empty() ? generated : fixed;
    tc.setup = make_setup(o.model, s);
    const auto rep = transfer_sweep(corpus, world, tc);
    clf_f1.push_back(rep.clf.metrics.at("weighted_f1"));
    scm_f1.push_back(rep.scm.metrics.at("weighted_f1"));
    char row[96];
    std::snprintf(row, sizeof row, "%d,%.17g,%.17g\n", i, clf_f1.back(), scm_f1.back());
    seeds_csv += row;
    log.info("transfer_seed", {{"index", i}, {"clf_weighted_f1", clf_f1.back()}, {"scm_weighted_f1", scm_f1.back()}});
    for (const auto& [k, v] : rep.clf.metrics) totals["clf_" + k] += v;
    for (const auto& [k, v] : rep.scm.metrics) totals["scm_" + k] += v;
    for (const auto& f : rep.folds) {
      auto& row_sums = folds[f.held_out];
      for (const auto& [k, v] : f.clf) row_sums["clf_" + k] += v;
      for (const auto& [k, v] : f.scm) row_sums["scm_" + k] += v;
      row_sums["mean_gate"] += f.mean_gate;
      row_sums["n_test"] += static_cast<double>(f.n_test);
    }
  }

  const double n = static_cast<double>(o.seeds);
  MetricsReport r;
  r.experiment = "transfer";
  r.split.kind = tc.kind == TransferKind::Task ? SplitKind::LeaveOneTaskOut : SplitKind::LeaveOneDomainOut;
  r.seed = o.seed;
  Json source = fixed.empty() ? Json{{"generated", {{"n", o.transfer_n}, {"happy_ratio", o.happy_ratio}}}}
                              : Json{{"corpus", corpus_digest(fixed)}};
  r.config = {{"experiment", "transfer"}, {"kind", o.transfer_kind}, {"setup", make_setup(o.model, 0).to_json()},
              {"generation", tc.generation},  {"tasks", tasks},         {"seeds", o.seeds},
              {"source", source}};
  r.fingerprint = config_fingerprint(r.config);
  for (const auto& [k, v] : totals) r.metrics[k] = v / n;
  r.metrics["n_seeds"] = n;
  if (o.seeds >= 2) {
    const auto t = paired_t_test(scm_f1, clf_f1);
    r.metrics["mean_difference"] = t.mean_difference;
    r.metrics["t"] = t.t;
    r.metrics["df"] = t.df;
    r.metrics["p_one_sided"] = t.p_one_sided;
  }
  for (const auto& [fold, sums] : folds) {
    for (const auto& [k, v] : sums) r.per_task[fold][k] = v / n;
  }
  write_report(o, "transfer", r, out, log);
  if (!o.out.empty()) write_text_file(fs::path(o.out) / "transfer_seeds.csv", seeds_csv);
  return 0;
}

// ---------------------------------------------------------------------------
// plot

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 70;

std::string svg_frame(const std::string& title, const std::string& x_label, const std::string& y_label) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) + "\" height=\"" + fmt(kH) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kW / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(title) +
       "</text>\n";
  s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kH - kBottom) + "\" x2=\"" + fmt(kW - kRight) + "\" y2=\"" +
       fmt(kH - kBottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" +
       fmt(kH - kBottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    const double y = kH - kBottom - v * (kH - kBottom - kTop);
    s += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">" + fmt(v) + "</text>\n";
  }
  s += "<text x=\"" + fmt(kW / 2) + "\" y=\"" + fmt(kH - 15) + "\" text-anchor=\"middle\">" + xml_escape(x_label) +
       "</text>\n";
  s += "<text x=\"15\" y=\"" + fmt(kH / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " + fmt(kH / 2) +
       ")\">" + xml_escape(y_label) + "</text>\n";
  return s;
}

double y_of(double v) { return kH - kBottom - std::clamp(v, 0.0, 1.0) * (kH - kBottom - kTop); }

std::string plot_history(const MetricsReport& r) {
  std::vector<std::pair<int, double>> points;
  for (const auto& [k, v] : r.metrics) {
    if (starts_with(k, "accuracy@")) points.emplace_back(std::stoi(k.substr(9)), v);
  }
  if (points.empty()) throw ConfigError("history report has no accuracy@N metrics");
  std::sort(points.begin(), points.end());
  const double x0 = points.front().first, x1 = std::max<double>(points.back().first, x0 + 1);
  auto x_of = [&](double w) { return kLeft + 20 + (w - x0) / (x1 - x0) * (kW - kLeft - kRight - 40); };
  auto s = svg_frame("Next-action accuracy vs history window", "window (turns)", "accuracy");
  std::string poly;
  for (const auto& [w, acc] : points) {
    poly += fmt(x_of(w)) + "," + fmt(y_of(acc)) + " ";
    s += "<circle cx=\"" + fmt(x_of(w)) + "\" cy=\"" + fmt(y_of(acc)) + "\" r=\"3\" fill=\"steelblue\"/>\n";
    s += "<text x=\"" + fmt(x_of(w)) + "\" y=\"" + fmt(kH - kBottom + 16) + "\" text-anchor=\"middle\">" +
         std::to_string(w) + "</text>\n";
  }
  s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"" + poly + "\"/>\n";
  return s + "</svg>\n";
}

std::string plot_transfer(const MetricsReport& r) {
  if (r.per_task.empty()) throw ConfigError("transfer report has no folds");
  auto s = svg_frame("Held-out weighted F1", "held-out " + std::string(to_string(r.split.kind)), "weighted F1");
  const double slot = (kW - kLeft - kRight) / static_cast<double>(r.per_task.size());
  const double bar = slot * 0.35;
  std::size_t i = 0;
  for (const auto& [fold, m] : r.per_task) {
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    const double clf = m.count("clf_weighted_f1") ? m.at("clf_weighted_f1") : 0.0;
    const double scm = m.count("scm_weighted_f1") ? m.at("scm_weighted_f1") : 0.0;
    s += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y_of(clf)) + "\" width=\"" + fmt(bar) + "\" height=\"" +
         fmt(kH - kBottom - y_of(clf)) + "\" fill=\"#bbbbbb\"/>\n";
    s += "<rect x=\"" + fmt(x + bar) + "\" y=\"" + fmt(y_of(scm)) + "\" width=\"" + fmt(bar) + "\" height=\"" +
         fmt(kH - kBottom - y_of(scm)) + "\" fill=\"steelblue\"/>\n";
    s += "<text x=\"" + fmt(x + bar) + "\" y=\"" + fmt(kH - kBottom + 14) + "\" text-anchor=\"middle\" font-size=\"9\">" +
         xml_escape(fold) + "</text>\n";
    ++i;
  }
  s += "<rect x=\"" + fmt(kW - 170) + "\" y=\"28\" width=\"10\" height=\"10\" fill=\"#bbbbbb\"/><text x=\"" +
       fmt(kW - 155) + "\" y=\"37\">schema-free</text>\n";
  s += "<rect x=\"" + fmt(kW - 80) + "\" y=\"28\" width=\"10\" height=\"10\" fill=\"steelblue\"/><text x=\"" +
       fmt(kW - 65) + "\" y=\"37\">schema</text>\n";
  return s + "</svg>\n";
}

int cmd_plot(const Options& o, std::ostream& out, const Log& log) {
  const auto r = MetricsReport::from_json(parse_json(read_text_file(o.report)));
  std::string svg;
  if (r.experiment == "history") {
    svg = plot_history(r);
  } else if (r.experiment == "transfer") {
    svg = plot_transfer(r);
  } else {
    throw ConfigError("no plot for experiment '" + r.experiment + "'");
  }
  if (o.out.empty()) {
    out << svg;
  } else {
    write_text_file(o.out, svg);
    log.info("plot_written", {{"path", o.out}});
  }
  return 0;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::EmptyHeldOut:
    case ErrorCode::InsufficientTasks:
    case ErrorCode::UnknownTask:
    case ErrorCode::UnknownTable:
    case ErrorCode::UnknownField:
    case ErrorCode::TypeMismatch:
    case ErrorCode::VocabTooSmall:
    case ErrorCode::EmptyDataset:
    case ErrorCode::Io:
      return kExitConfig;
    default:
      return kExitValidation;
  }
}

}  // namespace

std::unique_ptr<CLI::App> build_app(Options& o) {
  auto app = std::make_unique<CLI::App>("Schema-guided task-oriented dialog toolkit", "schemaflow");
  app->option_defaults()->always_capture_default();
  app->require_subcommand(1);
  app->set_config("--config", "", "TOML config file; command-line flags take precedence");
  o.data_dir = World::default_root().string();
  o.jobs = std::max(1u, std::thread::hardware_concurrency());
  app->add_option("--data", o.data_dir, "Data directory with schemas, KB tables and task profiles")
      ->check(CLI::ExistingDirectory);
  app->add_option("--jobs", o.jobs, "Worker threads for simulate and eval")->check(CLI::PositiveNumber);

  auto* validate = app->add_subcommand("validate-schema", "Validate schema files and list every violation");
  validate->add_option("files", o.schema_files, "Schema JSON files")->required()->check(CLI::ExistingFile);

  auto* kb = app->add_subcommand("kb", "Knowledge-base tools");
  kb->require_subcommand(1);
  auto* kb_query = kb->add_subcommand("query", "Query one KB table");
  kb_query->add_option("table", o.kb_table, "Table name")->required();
  kb_query->add_option("--where", o.where, "Constraint key=op:value (op defaults to eq; one_of takes a|b)");
  kb_query->add_option("--constraints", o.constraints_json, "Constraints as a JSON object in corpus encoding");
  kb_query->add_option("--seed", o.kb_seed, "Seed for picking among matches");
  kb->add_subcommand("tables", "List KB tables");

  auto* chat = app->add_subcommand("chat", "Talk to the schema wizard as the user");
  chat->add_option("--schema", o.chat_schema, "Task to serve")->required();
  chat->add_option("--multi", o.chat_multi, "Further tasks the wizard may switch to");
  chat->add_option("--seed", o.chat_seed, "Seed for KB sampling");
  chat->add_option("--transcript", o.transcript, "Write the dialog as a corpus JSON file");

  auto* simulate = app->add_subcommand("simulate", "Generate a simulated corpus");
  simulate->add_option("--n", o.n, "Number of dialogs")->required()->check(positive_count("n"));
  simulate->add_option("--seed", o.seed, "Master seed")->required();
  simulate->add_option("--out", o.out, "Output directory")->required();
  simulate->add_flag("--overwrite", o.overwrite, "Replace dialogs already in the output directory");
  for (auto* sub : {simulate}) {
    sub->add_option("--happy-ratio", o.happy_ratio, "Fraction of happy scenarios")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--multi-ratio", o.multi_ratio, "Fraction of multi-task scenarios")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--max-tasks", o.max_tasks, "Most tasks in a multi-task scenario")->check(CLI::Range(2, 5));
    sub->add_option("--revisit-ratio", o.revisit_ratio, "Chance a multi-task dialog returns to its first task")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--max-perturbations", o.max_perturbations, "Most perturbations per unhappy scenario")
        ->check(CLI::PositiveNumber);
    sub->add_option("--tasks", o.tasks, "Restrict scenarios to these tasks");
    sub->add_option("--kinds", o.kinds,
                    "Allowed perturbations: change_mind, small_talk, out_of_scope, environment_event, refer_back");
  }

  auto* stats = app->add_subcommand("stats", "Corpus statistics");
  stats->add_option("--corpus", o.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  stats->add_option("--out", o.out, "Output directory for stats.json (stdout when omitted)");

  auto* train_cmd = app->add_subcommand("train", "Train a next-action model on a stage split");
  train_cmd->add_option("--corpus", o.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--seed", o.seed, "Master seed")->required();
  train_cmd->add_option("--stage", o.stage, "Split stage: happy, unhappy or multi");
  train_cmd->add_option("--val-frac", o.val_frac, "Fraction of training dialogs held out for validation")
      ->check(CLI::Range(0.0, 0.9));
  train_cmd->add_option("--out", o.out, "Output directory for model.ckpt and train.json")->required();
  add_model_options(train_cmd, o.model);

  auto* eval = app->add_subcommand("eval", "Evaluation experiments");
  eval->require_subcommand(1);
  auto* stage = eval->add_subcommand("stage", "Next-action F1 on the test side of a stage split");
  stage->add_option("--corpus", o.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  stage->add_option("--stage", o.stage, "Split stage: happy, unhappy or multi");
  stage->add_option("--model", o.model_path, "Checkpoint to score instead of training a new model")
      ->check(CLI::ExistingFile);
  auto* consistency = eval->add_subcommand("consistency", "Order consistency of wizard actions per task");
  consistency->add_option("--corpus", o.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  auto* history = eval->add_subcommand("history", "Accuracy of the schema-free model per history window");
  history->add_option("--corpus", o.corpus, "Corpus directory (a refer-back corpus is generated when omitted)")
      ->check(CLI::ExistingDirectory);
  history->add_option("--windows", o.windows, "Window sizes in turns")->check(CLI::PositiveNumber);
  history->add_option("--n", o.probe_n, "Dialogs in the generated corpus")->check(positive_count("n"));
  history->add_option("--distance", o.distance, "Refer-back distance in the generated corpus")
      ->check(CLI::Range(1, 2));
  history->add_option("--per-dialog", o.per_dialog, "Most refer-backs per generated dialog")
      ->check(CLI::PositiveNumber);
  history->add_option("--tasks", o.tasks, "Tasks of the generated corpus");
  auto* transfer = eval->add_subcommand("transfer", "Leave-one-out transfer, schema-free vs schema-guided");
  transfer->add_option("--corpus", o.corpus, "Corpus directory (simulated per seed when omitted)")
      ->check(CLI::ExistingDirectory);
  transfer->add_option("--kind", o.transfer_kind, "Hold out a task or a domain")
      ->check(CLI::IsMember({"task", "domain"}));
  transfer->add_option("--seeds", o.seeds, "Number of seeds; two or more add a paired t-test")
      ->check(CLI::PositiveNumber);
  transfer->add_option("--n", o.transfer_n, "Dialogs simulated per seed")->check(positive_count("n"));
  transfer->add_option("--happy-ratio", o.happy_ratio, "Fraction of happy simulated scenarios")
      ->check(CLI::Range(0.0, 1.0));
  transfer->add_option("--tasks", o.tasks, "Tasks of the suite");
  transfer->add_flag("--no-generation", o.no_generation, "Skip response generation metrics");
  for (auto* sub : {stage, consistency, history, transfer}) {
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory for the JSON and CSV report (stdout when omitted)");
  }
  for (auto* sub : {stage, history, transfer}) add_model_options(sub, o.model);

  auto* plot = app->add_subcommand("plot", "SVG chart of a history or transfer report");
  plot->add_option("--report", o.report, "Report JSON")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", o.out, "Output SVG file (stdout when omitted)");

  return app;
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  Options o;
  auto app = build_app(o);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app->parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app->exit(e, out, err);
    return code == 0 ? 0 : kExitConfig;
  }

  const Log log(err);
  log.info("config", {{"effective", effective_config(*app)}});
  auto used = [&](const char* name) { return app->got_subcommand(name); };
  auto used2 = [&](const char* parent, const char* child) {
    return app->got_subcommand(parent) && app->get_subcommand(parent)->got_subcommand(child);
  };
  try {
    if (used("validate-schema")) return cmd_validate(o, out, log);
    if (used("plot")) return cmd_plot(o, out, log);
    const auto world = World::load(o.data_dir);
    if (used2("kb", "query")) return cmd_kb_query(o, world, out);
    if (used2("kb", "tables")) return cmd_kb_tables(world, out);
    if (used("chat")) return cmd_chat(o, world, in, out, log);
    if (used("simulate")) return cmd_simulate(o, world, log);
    if (used("stats")) return cmd_stats(o, world, out, log);
    if (used("train")) return cmd_train(o, world, log);
    if (used2("eval", "stage")) return cmd_eval_stage(o, world, out, log);
    if (used2("eval", "consistency")) return cmd_eval_consistency(o, world, out, log);
    if (used2("eval", "history")) return cmd_eval_history(o, world, out, log);
    if (used2("eval", "transfer")) return cmd_eval_transfer(o, world, out, log);
  } catch (const ConfigError& e) {
    log.error("config_error", {{"message", e.what()}});
    return kExitConfig;
  } catch (const ValidationError& e) {
    Json list = Json::array();
    for (const auto& v : e.violations()) {
      list.push_back({{"code", to_string(v.code)}, {"subject", v.subject}, {"message", v.message}});
    }
    log.error("validation_failed", {{"violations", list}});
    return kExitValidation;
  } catch (const Error& e) {
    log.error(to_string(e.code()), {{"message", e.what()}});
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    log.error("failure", {{"message", e.what()}});
    return kExitValidation;
  }
  return kExitConfig;
}

}  // namespace schemaflow::cli
