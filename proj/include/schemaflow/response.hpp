#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/guidance.hpp"
#include "schemaflow/policy.hpp"
#include "schemaflow/schema.hpp"

namespace schemaflow {

struct ContextConfig {
  std::size_t top_k = 3;
  std::string separator = " ; ";
};

// History plus the reply templates of the top-k predicted actions.
struct AugmentedContext {
  std::string history_text;
  std::vector<std::string> actions;
  std::vector<std::string> templates;
  std::string separator = " ; ";

  // H<SEP>t1<SEP>t2<SEP>t3
  std::string serialize() const;
};

// One line per turn, prefixed with the speaker.
std::string history_text(const std::vector<Turn>& history);

// Reply template of `action` in the first scope task that defines it; for
// `query <task>` the task's first query node. Empty when none.
std::string action_template(const SchemaSet& schemas, const std::vector<std::string>& scope, std::string_view action);

// Ranks the scope tasks' actions by `dist` (ties by vocabulary order) and
// keeps the first k. Throws Error(VocabTooSmall) with fewer than k candidates.
AugmentedContext context_from_distribution(const ActionDistribution& dist, const std::vector<std::string>& vocab,
                                           const std::vector<Turn>& history, const SchemaSet& schemas,
                                           const std::vector<std::string>& scope, const ContextConfig& config = {});
AugmentedContext build_context(const GuidanceModel& model, const std::vector<Turn>& history, const SchemaSet& schemas,
                               const std::vector<std::string>& scope, const ContextConfig& config = {});

std::string unknown_sentinel(std::string_view id);
// snake_case form of a KB field name: "StartTimeHour" -> "start_time_hour".
std::string snake_case(std::string_view field);

// Slot values of the active task first, then fields of its last KB item
// matched by snake_case name.
std::optional<std::string> resolve_placeholder(const DialogState& state, std::string_view id);

struct Realization {
  std::string text;
  std::vector<std::string> unresolved;

  bool flagged() const noexcept { return !unresolved.empty(); }
};

Realization realize_template(const ResponseTemplate& t, const DialogState& state);
// Fills t1 of the context.
Realization realize(const AugmentedContext& ctx, const DialogState& state);

// Placeholder values recovered by inverse-matching reply templates; times
// and numbers are picked up by pattern when no template matches.
class EntityExtractor {
 public:
  explicit EntityExtractor(const SchemaSet& schemas);
  std::vector<std::string> extract(std::string_view text) const;

 private:
  std::vector<ResponseTemplate> templates_;
};

// hello, ask_name, anything_else, out_of_scope and every farewell label.
std::vector<std::string> default_generic_labels(const SchemaSet& schemas);

struct GenerationScores {
  double bleu4 = 0.0;
  double iem = 0.0;
  double entity_f1 = 0.0;
};

// Throws Error(LengthMismatch) unless the three lists are aligned.
GenerationScores evaluate_generation(const std::vector<std::string>& hypotheses,
                                     const std::vector<std::string>& references,
                                     const std::vector<std::string>& reference_actions,
                                     const std::vector<std::string>& generic_labels,
                                     const EntityExtractor& extractor);

}  // namespace schemaflow
