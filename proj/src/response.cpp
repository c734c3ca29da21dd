#include "schemaflow/response.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "schemaflow/error.hpp"
#include "schemaflow/metrics.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

namespace {

std::string scrub(std::string text, const std::string& separator) {
  if (separator.empty()) return text;
  return replace_all(std::move(text), separator, " ");
}

std::size_t literal_length(const ResponseTemplate& t) {
  std::size_t n = t.text().size();
  for (const auto& p : t.placeholders()) n -= p.end - p.begin;
  return n;
}

}  // namespace

std::string AugmentedContext::serialize() const {
  std::string out = history_text;
  for (const auto& t : templates) out += separator + t;
  return out;
}

std::string history_text(const std::vector<Turn>& history) {
  std::vector<std::string> lines;
  lines.reserve(history.size());
  for (const auto& turn : history) {
    const char* who = turn.speaker == Speaker::User ? "User: " : turn.speaker == Speaker::Wizard ? "Wizard: " : "KB: ";
    lines.push_back(who + turn.text);
  }
  return join(lines, "\n");
}

std::string action_template(const SchemaSet& schemas, const std::vector<std::string>& scope, std::string_view action) {
  for (const auto& task : scope) {
    if (!schemas.contains(task)) continue;
    const auto& s = schemas.at(task);
    if (action == query_action(task)) {
      for (const auto& [label, reply] : s.replies()) {
        if (s.kind(label) == NodeKind::Query) return reply.text();
      }
    }
    if (s.has_node(action)) {
      auto kind = s.kind(action);
      if (kind == NodeKind::Root || kind == NodeKind::Reply) return s.node_text(action);
    }
  }
  return {};
}

AugmentedContext context_from_distribution(const ActionDistribution& dist, const std::vector<std::string>& vocab,
                                           const std::vector<Turn>& history, const SchemaSet& schemas,
                                           const std::vector<std::string>& scope, const ContextConfig& config) {
  if (dist.probs.size() != vocab.size()) {
    throw Error(ErrorCode::LengthMismatch, "distribution", "does not match the vocabulary");
  }
  AugmentedContext ctx;
  ctx.separator = config.separator;
  ctx.history_text = scrub(history_text(history), config.separator);
  for (auto index : dist.ranked()) {
    if (ctx.actions.size() == config.top_k) break;
    auto t = action_template(schemas, scope, vocab[index]);
    if (t.empty()) continue;
    ctx.actions.push_back(vocab[index]);
    ctx.templates.push_back(scrub(std::move(t), config.separator));
  }
  if (ctx.actions.size() < config.top_k) {
    throw Error(ErrorCode::VocabTooSmall, std::to_string(ctx.actions.size()),
                "fewer candidate actions than top_k = " + std::to_string(config.top_k));
  }
  return ctx;
}

AugmentedContext build_context(const GuidanceModel& model, const std::vector<Turn>& history, const SchemaSet& schemas,
                               const std::vector<std::string>& scope, const ContextConfig& config) {
  const auto nodes = model.scope_nodes(scope);
  const auto dist = model.config().schema_guided && !nodes.empty()
                        ? model.predict_fin(model.encode_history(history), nodes).dist
                        : model.predict_clf(model.encode_history(history));
  return context_from_distribution(dist, model.vocab(), history, schemas, scope, config);
}

std::string unknown_sentinel(std::string_view id) { return "⟨unk:" + std::string(id) + "⟩"; }

std::string snake_case(std::string_view field) {
  std::string out;
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto c = static_cast<unsigned char>(field[i]);
    if (std::isupper(c) && i > 0) {
      const auto prev = static_cast<unsigned char>(field[i - 1]);
      const bool next_lower = i + 1 < field.size() && std::islower(static_cast<unsigned char>(field[i + 1]));
      if (std::islower(prev) || std::isdigit(prev) || (std::isupper(prev) && next_lower)) out.push_back('_');
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::optional<std::string> resolve_placeholder(const DialogState& state, std::string_view id) {
  const auto slots = state.collected_slots();
  if (auto it = slots.find(std::string(id)); it != slots.end()) return it->second;
  const auto kb = state.last_kb();
  if (kb && kb->item) {
    for (const auto& [field, value] : kb->item->fields) {
      if (snake_case(field) == id || iequals(field, id)) return scalar_to_string(value);
    }
  }
  return std::nullopt;
}

Realization realize_template(const ResponseTemplate& t, const DialogState& state) {
  auto filled = fill_template_partial(
      t, [&](const std::string& id) { return resolve_placeholder(state, id); },
      [](const std::string& id) { return unknown_sentinel(id); });
  return {std::move(filled.text), std::move(filled.missing)};
}

Realization realize(const AugmentedContext& ctx, const DialogState& state) {
  if (ctx.templates.empty()) return {};
  return realize_template(ResponseTemplate::parse(ctx.templates.front()), state);
}

EntityExtractor::EntityExtractor(const SchemaSet& schemas) {
  std::set<std::string> seen;
  for (const auto& task : schemas.tasks()) {
    for (const auto& [_, reply] : schemas.at(task).replies()) {
      if (reply.placeholders().empty() || !seen.insert(reply.text()).second) continue;
      templates_.push_back(reply);
    }
  }
  std::stable_sort(templates_.begin(), templates_.end(), [](const ResponseTemplate& a, const ResponseTemplate& b) {
    const auto la = literal_length(a), lb = literal_length(b);
    return la != lb ? la > lb : a.text() < b.text();
  });
}

std::vector<std::string> EntityExtractor::extract(std::string_view text) const {
  for (const auto& t : templates_) {
    auto captured = match_template(t, text);
    if (!captured) continue;
    std::vector<std::string> out;
    for (const auto& id : t.identifiers()) out.push_back(trim(captured->at(id)));
    return out;
  }
  static const std::regex pattern(R"(\b\d{1,2}(:\d{2})?\s?(am|pm)\b|\b\d+(\.\d+)?\b)", std::regex::icase);
  std::vector<std::string> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), pattern); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

std::vector<std::string> default_generic_labels(const SchemaSet& schemas) {
  std::set<std::string> out{"hello", "ask_name", "anything_else", "out_of_scope"};
  for (const auto& task : schemas.tasks()) {
    for (const auto& [label, _] : schemas.at(task).replies()) {
      if (is_farewell_label(label)) out.insert(label);
    }
  }
  return {out.begin(), out.end()};
}

GenerationScores evaluate_generation(const std::vector<std::string>& hypotheses,
                                     const std::vector<std::string>& references,
                                     const std::vector<std::string>& reference_actions,
                                     const std::vector<std::string>& generic_labels,
                                     const EntityExtractor& extractor) {
  if (hypotheses.size() != references.size() || references.size() != reference_actions.size()) {
    throw Error(ErrorCode::LengthMismatch, "generation",
                std::to_string(hypotheses.size()) + " hypotheses, " + std::to_string(references.size()) +
                    " references, " + std::to_string(reference_actions.size()) + " actions");
  }
  GenerationScores s;
  s.bleu4 = corpus_bleu(hypotheses, references);
  s.iem = in_domain_exact_match(hypotheses, references, reference_actions, generic_labels);
  std::vector<std::vector<std::string>> he, re;
  he.reserve(hypotheses.size());
  re.reserve(references.size());
  for (const auto& h : hypotheses) he.push_back(extractor.extract(h));
  for (const auto& r : references) re.push_back(extractor.extract(r));
  s.entity_f1 = entity_f1(he, re);
  return s;
}

}  // namespace schemaflow
