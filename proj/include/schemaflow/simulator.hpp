#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/dialog.hpp"
#include "schemaflow/policy.hpp"
#include "schemaflow/world.hpp"

namespace schemaflow {

enum class PerturbationKind { ChangeMind, SmallTalk, OutOfScope, EnvironmentEvent, ReferBack };

std::string_view to_string(PerturbationKind kind);
std::optional<PerturbationKind> perturbation_from_string(std::string_view name);
std::vector<PerturbationKind> all_perturbation_kinds();

// An unhappy-path event. It fires at the first eligible user turn of `task`
// whose per-task index is at least `trigger_turn` (index 0 is the first user
// turn addressed to the task).
struct Perturbation {
  PerturbationKind kind = PerturbationKind::SmallTalk;
  int trigger_turn = 2;
  std::string task;
  std::string slot;   // change_mind / environment_event
  std::string value;  // replacement value for `slot`
  int distance = 1;   // refer_back: 1 = the last answer
  std::size_t variant = 0;

  bool operator==(const Perturbation&) const = default;
};

struct ScenarioSpec {
  std::vector<std::string> tasks;
  bool happy = true;
  // Return to the first task after the others (multi-task only).
  bool revisit = false;
  std::vector<Perturbation> perturbations;
  std::map<std::string, std::map<std::string, std::string>> slot_values;
  std::uint64_t seed = 0;

  bool operator==(const ScenarioSpec&) const = default;
};

// Throws Error(InvalidConfig) when the spec breaks its invariants.
void validate_spec(const ScenarioSpec& spec, const World& world);

struct ScenarioConfig {
  double happy_ratio = 2688.0 / 4152.0;
  double multi_ratio = 0.0;
  int max_tasks = 3;
  double revisit_ratio = 0.3;
  // Relative weight of a task sharing a domain with the tasks drawn so far.
  double same_domain_weight = 3.0;
  int max_perturbations = 2;
  std::vector<PerturbationKind> kinds = all_perturbation_kinds();
  std::vector<std::string> tasks;  // empty: every task in the world
  std::uint64_t seed = 0;
};

ScenarioSpec sample_scenario(const World& world, const ScenarioConfig& config);

// The wizard side of a dialog: the schema policy, KB round trips and
// realized replies.
class WizardAgent {
 public:
  WizardAgent(const World& world, std::vector<std::string> tasks);

  // Appends the user utterance and the wizard's answer to `events`. KB
  // samples draw from `rng`. Throws Error(Deadlock) if the policy keeps
  // querying.
  void respond(const std::string& text, std::mt19937_64& rng, std::vector<Event>& events);

  const DialogState& state() const noexcept { return state_; }
  const std::string& last_action() const noexcept { return last_action_; }
  int consecutive_out_of_scope() const noexcept { return consecutive_oos_; }

 private:
  const World& world_;
  std::vector<std::string> tasks_;
  DialogState state_;
  std::string topic_;
  std::string last_action_;
  int consecutive_oos_ = 0;
};

// Plays the scenario: the simulated user against the schema policy and the
// KB. Throws Error(Deadlock) after three consecutive out_of_scope replies or
// an overlong dialog.
Dialog run_dialog(const ScenarioSpec& spec, const World& world, std::int64_t dialog_id = 0);

// Independent seed for item `index` of a run seeded with `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

// Scenario i uses derive_seed(config.seed, i). Output order does not depend
// on `jobs`.
std::vector<Dialog> simulate_corpus(const World& world, const ScenarioConfig& config, std::size_t n,
                                    unsigned jobs = 1);

struct CorpusStats {
  std::size_t n_dialogs = 0;
  std::size_t n_turns = 0;
  double turns_per_dialog = 0.0;
  double turns_per_dialog_sd = 0.0;
  double tokens_per_turn = 0.0;
  std::size_t user_vocab_size = 0;
};

// Turns follow count_turns. The vocabulary counts lowercase alphabetic
// tokens of user utterances after removing `entity_values`. Throws
// Error(EmptyDataset).
CorpusStats corpus_stats(const std::vector<Dialog>& dialogs, const std::vector<std::string>& entity_values = {});

// Every slot value and string KB value known to the world.
std::vector<std::string> entity_values(const World& world);

}  // namespace schemaflow
