#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/dialog.hpp"
#include "schemaflow/guidance.hpp"
#include "schemaflow/json_io.hpp"
#include "schemaflow/policy.hpp"
#include "schemaflow/response.hpp"
#include "schemaflow/simulator.hpp"
#include "schemaflow/world.hpp"

namespace schemaflow {

// ---------------------------------------------------------------------------
// Corpus tags and splits

enum class Stage { Happy, Unhappy, Multi };
std::string_view to_string(Stage stage);
std::optional<Stage> stage_from_string(std::string_view name);

// Multi when the scenario is multi-task, otherwise happy or unhappy.
Stage dialog_stage(const Dialog& d);
// Tasks a dialog touches: its capabilities.
std::vector<std::string> dialog_tasks(const Dialog& d);
// Primary task used for stratification: the first capability.
std::string dialog_task(const Dialog& d);

enum class SplitKind { Stage8020, LeaveOneTaskOut, LeaveOneDomainOut };
std::string_view to_string(SplitKind kind);
std::optional<SplitKind> split_kind_from_string(std::string_view name);

struct SplitPlan {
  SplitKind kind = SplitKind::Stage8020;
  Stage stage = Stage::Happy;
  std::optional<std::string> held_out;  // task or domain
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  Json to_json() const;
};

// Dialog indices into the corpus, each sorted.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stage splits: per primary task, a seeded shuffle puts round(0.8 n) dialogs
// of the stage in train and the rest in test; every dialog of an earlier
// stage joins train. Leave-one-out: test holds every dialog touching the
// held-out task (domain), train every dialog touching none of it. Throws
// Error(EmptyHeldOut) when the test side would be empty and
// Error(InvalidConfig) when a leave-one-out plan names nothing.
Split make_splits(const std::vector<Dialog>& corpus, const SplitPlan& plan, const SchemaSet& schemas);

// Distinct tasks (domains) of a corpus, sorted.
std::vector<std::string> corpus_tasks(const std::vector<Dialog>& corpus);
std::vector<std::string> corpus_domains(const std::vector<Dialog>& corpus, const SchemaSet& schemas);

// ---------------------------------------------------------------------------
// Order consistency

// The first checked actions of a task: slot-asking nodes of the main path up
// to and including the first query.
std::vector<std::string> checked_actions(const World& world, std::string_view task);

// True when the first occurrences of the checked actions among the task's
// wizard labels appear in checked order. Repeats collapse onto the first
// occurrence; skipped actions are allowed. Throws Error(UnknownTask).
bool order_consistency(const Dialog& d, const World& world, std::string_view task);
bool order_consistency(const std::vector<std::string>& labels, const std::vector<std::string>& checked);

struct TaskConsistency {
  std::size_t n_happy = 0;
  std::size_t n_all = 0;
  std::optional<double> happy;  // absent without dialogs
  std::optional<double> all;
};

struct ConsistencyReport {
  std::map<std::string, TaskConsistency> per_task;
  std::optional<double> mean_happy;  // over tasks that have dialogs
  std::optional<double> mean_all;
};

// Single-task dialogs only; others are ignored.
ConsistencyReport consistency_sweep(const std::vector<Dialog>& corpus, const World& world);

// ---------------------------------------------------------------------------
// Examples

// One wizard decision with its context.
struct StepExample {
  Example example;
  std::string response;  // empty for queries
  bool is_query = false;
  std::optional<DialogState> state;  // policy state after the decision, when it replays
};

// Policy state after each wizard step of `d`, aligned with view_dialog(d).steps.
// Entries are empty from the first step the policy does not reproduce.
std::vector<std::optional<DialogState>> replay_states(const Dialog& d, const World& world);

// Every wizard step of every dialog. Labels outside `vocab` become `custom`
// when `vocab` is non-empty. With `replay`, states are attached.
std::vector<StepExample> extract_examples(const std::vector<Dialog>& dialogs, const World& world,
                                          const std::vector<std::string>& vocab = {}, bool replay = false);
std::vector<Example> examples_only(const std::vector<StepExample>& steps);

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  std::string experiment;
  SplitPlan split;
  std::map<std::string, double> metrics;
  std::map<std::string, std::map<std::string, double>> per_task;
  std::string fingerprint;  // FNV-1a of the canonical config JSON, hex
  std::uint64_t seed = 0;
  Json config = Json::object();

  Json to_json() const;
  static MetricsReport from_json(const Json& j);
  // Header `scope,metric,value`; the aggregate rows use scope `all`.
  std::string to_csv() const;
};

std::string config_fingerprint(const Json& config);

struct PairedTest {
  double mean_difference = 0.0;
  double t = 0.0;
  double df = 0.0;
  double p_one_sided = 1.0;  // H1: mean(a - b) > 0
};

// One-sided paired t-test. Throws Error(LengthMismatch) or
// Error(EmptyDataset) with fewer than two pairs.
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Experiments

struct ModelSetup {
  GuidanceConfig guidance;
  TrainConfig train;
  // Restrict training and test predictions to the dialog's tasks' actions.
  bool mask_train = false;
  bool mask_test = true;

  Json to_json() const;
};

struct StageResult {
  MetricsReport report;
  TrainResult training;
};

// Scores every wizard step of `dialogs`: sets weighted_f1, accuracy and
// n_test_examples in `report.metrics` and one per_task entry per primary
// task. Throws Error(EmptyDataset) when there are no steps.
void score_next_action(const GuidanceModel& model, const std::vector<Dialog>& dialogs, const World& world, bool mask,
                       MetricsReport& report);

// Next-action F1 and accuracy of one model on a stage split, with
// per-task breakdown.
StageResult evaluate_stage(const std::vector<Dialog>& corpus, const World& world, const SplitPlan& plan,
                           const ModelSetup& setup);

// Unhappy single-task dialogs whose perturbations are all refer-backs at
// `distance`, up to `per_dialog` each. With distance 1 the re-asked question
// lies four turns before the wizard's reply. Scenarios that deadlock are
// replaced by the next seed.
std::vector<Dialog> refer_back_corpus(const World& world, std::size_t n, std::uint64_t seed, int distance = 1,
                                      int per_dialog = 3, const std::vector<std::string>& tasks = {});

struct HistoryPoint {
  int window = 0;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
};

// Schema-free classifier per window on one stratified 80/20 split of the
// whole corpus. Throws Error(InvalidConfig) for an empty window list.
std::vector<HistoryPoint> history_sweep(const std::vector<Dialog>& corpus, const World& world,
                                        const std::vector<int>& windows, const ModelSetup& setup,
                                        std::uint64_t split_seed, unsigned jobs = 1);

enum class TransferKind { Task, Domain };
std::string_view to_string(TransferKind kind);

struct TransferFold {
  std::string held_out;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::map<std::string, double> clf;  // weighted_f1, accuracy, bleu4, iem, entity_f1, unresolved_rate
  std::map<std::string, double> scm;
  double mean_gate = 0.0;
};

struct TransferReport {
  TransferKind kind = TransferKind::Task;
  std::vector<TransferFold> folds;
  MetricsReport clf;  // schema-free classifier
  MetricsReport scm;  // classifier + schema
};

struct TransferConfig {
  TransferKind kind = TransferKind::Task;
  ModelSetup setup;
  bool generation = true;
  unsigned jobs = 1;
};

// Leave-one-out over tasks or domains. Both models train on the same folds;
// only the schema-guided one attends over the held-out schema at test time.
// Throws Error(InsufficientTasks) with fewer than two tasks (domains).
TransferReport transfer_sweep(const std::vector<Dialog>& corpus, const World& world, const TransferConfig& config);

}  // namespace schemaflow
