#include "schemaflow/policy.hpp"

#include <algorithm>

#include "schemaflow/error.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

const TaskState* DialogState::task_state(std::string_view task) const {
  auto it = tasks.find(std::string(task));
  return it == tasks.end() ? nullptr : &it->second;
}

std::optional<std::string> DialogState::cursor() const {
  if (!active_task) return std::nullopt;
  const auto* ts = task_state(*active_task);
  return ts == nullptr ? std::nullopt : ts->cursor;
}

std::map<std::string, std::string> DialogState::collected_slots() const {
  if (!active_task) return {};
  const auto* ts = task_state(*active_task);
  return ts == nullptr ? std::map<std::string, std::string>{} : ts->slots;
}

std::optional<QueryResult> DialogState::last_kb() const {
  if (!active_task) return std::nullopt;
  const auto* ts = task_state(*active_task);
  return ts == nullptr ? std::nullopt : ts->last_kb;
}

DialogState initial_state(std::vector<std::string> capabilities) {
  DialogState s;
  s.capabilities = std::move(capabilities);
  return s;
}

std::optional<std::string> detect_task(std::string_view utterance, const std::vector<std::string>& capabilities,
                                       const std::map<std::string, std::vector<std::string>>& lexicon) {
  std::optional<std::string> best;
  std::size_t best_score = 0;
  std::size_t best_pos = 0;
  for (const auto& task : capabilities) {
    auto it = lexicon.find(task);
    if (it == lexicon.end()) continue;
    std::size_t score = 0;
    std::size_t first = utterance.size();
    for (const auto& keyword : it->second) {
      if (auto pos = find_word(utterance, keyword)) {
        ++score;
        first = std::min(first, *pos);
      }
    }
    if (score == 0) continue;
    if (!best || score > best_score || (score == best_score && first < best_pos)) {
      best = task;
      best_score = score;
      best_pos = first;
    }
  }
  return best;
}

namespace {

std::optional<std::string> canonical_value(const std::vector<std::string>& values, std::string_view candidate) {
  auto trimmed = trim(candidate);
  for (const auto& v : values) {
    if (iequals(v, trimmed)) return v;
  }
  return std::nullopt;
}

}  // namespace

std::map<std::string, std::string> extract_slots(std::string_view utterance, const std::vector<std::string>& expected,
                                                 const std::map<std::string, SlotRule>& rules) {
  std::map<std::string, std::string> found;
  for (const auto& slot : expected) {
    auto rule = rules.find(slot);
    if (rule == rules.end()) continue;
    for (const auto& t : rule->second.templates) {
      auto captured = match_template(t, utterance);
      if (!captured || captured->count("value") == 0) continue;
      const auto& raw = captured->at("value");
      if (rule->second.values.empty()) {
        found[slot] = trim(raw);
        return found;
      }
      if (auto v = canonical_value(rule->second.values, raw)) {
        found[slot] = *v;
        return found;
      }
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> used;
  auto overlaps = [&](std::size_t b, std::size_t e) {
    return std::any_of(used.begin(), used.end(), [&](const auto& s) { return b < s.second && s.first < e; });
  };
  for (const auto& slot : expected) {
    auto rule = rules.find(slot);
    if (rule == rules.end() || found.count(slot) != 0) continue;
    std::optional<std::size_t> best_pos;
    const std::string* best_value = nullptr;
    for (const auto& v : rule->second.values) {
      std::size_t from = 0;
      while (auto pos = find_word(utterance, v, from)) {
        if (!overlaps(*pos, *pos + v.size())) {
          if (!best_pos || *pos < *best_pos || (*pos == *best_pos && v.size() > best_value->size())) {
            best_pos = pos;
            best_value = &v;
          }
          break;
        }
        from = *pos + 1;
      }
    }
    if (best_value != nullptr) {
      found[slot] = *best_value;
      used.emplace_back(*best_pos, *best_pos + best_value->size());
    }
  }
  return found;
}

Polarity detect_polarity(std::string_view utterance, const PolicyLexicon& lexicon) {
  auto any = [&](const std::vector<std::string>& words) {
    return std::any_of(words.begin(), words.end(), [&](const std::string& w) { return find_word(utterance, w).has_value(); });
  };
  if (any(lexicon.negate)) return Polarity::No;
  if (any(lexicon.affirm)) return Polarity::Yes;
  return Polarity::None;
}

std::optional<int> detect_refer_back(std::string_view utterance, const PolicyLexicon& lexicon) {
  // Longer distances first: their cues tend to contain the shorter ones.
  for (auto it = lexicon.refer_back.rbegin(); it != lexicon.refer_back.rend(); ++it) {
    for (const auto& cue : it->second) {
      if (find_word(utterance, cue)) return it->first;
    }
  }
  return std::nullopt;
}

std::string action_of_node(const Schema& schema, std::string_view node) {
  if (is_query_label(node)) return query_action(schema.task());
  return std::string(node);
}

std::vector<std::string> prescribed_actions(const Schema& schema, const TaskProfile& profile) {
  std::vector<std::string> out;
  auto path = schema.main_path();
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (profile.slot_for_node(path[i]) != nullptr) {
      out.push_back(path[i]);
    } else if (is_query_label(path[i])) {
      out.push_back(query_action(schema.task()));
      break;
    }
  }
  return out;
}

namespace {

constexpr std::string_view kAnythingElse = "anything_else";
constexpr std::string_view kOutOfScope = "out_of_scope";

std::map<std::string, SlotRule> slot_rules(const TaskProfile& profile) {
  std::map<std::string, SlotRule> rules;
  for (const auto& s : profile.slots) rules[s.slot] = SlotRule{s.templates, s.values};
  return rules;
}

// Slots in asking order, the one currently asked first.
std::vector<std::string> expected_slots(const TaskProfile& profile, const TaskState& ts) {
  std::vector<std::string> out;
  if (ts.cursor) {
    if (const auto* s = profile.slot_for_node(*ts.cursor)) out.push_back(s->slot);
  }
  for (const auto& s : profile.slots) {
    if (std::find(out.begin(), out.end(), s.slot) == out.end()) out.push_back(s.slot);
  }
  return out;
}

std::optional<std::string> detect_in(std::string_view utterance, const std::vector<std::string>& capabilities,
                                     const World& world) {
  std::map<std::string, std::vector<std::string>> lexicon;
  for (const auto& task : capabilities) {
    if (world.profiles.find(task) != world.profiles.end()) lexicon[task] = world.profile(task).keywords;
  }
  return detect_task(utterance, capabilities, lexicon);
}

bool is_offer(const Schema& schema, const TaskProfile& profile, const std::string& node) {
  if (node == kAnythingElse || profile.slot_for_node(node) != nullptr || is_query_label(node)) return false;
  if (!schema.has_node("yes") && !schema.has_node("no")) return false;
  if (schema.next_node(node)) return false;
  auto text = trim(schema.node_text(node));
  return !text.empty() && text.back() == '?';
}

class Stepper {
 public:
  Stepper(const World& world, Decision& d) : world_(world), d_(d) {}

  TaskState& ts() { return d_.state.tasks[*d_.state.active_task]; }
  const std::string& task() const { return *d_.state.active_task; }
  const Schema& schema() const { return world_.schemas.at(task()); }
  const TaskProfile& profile() const { return world_.profile(task()); }

  void activate(const std::string& target) {
    auto previous = d_.state.active_task;
    d_.state.active_task = target;
    if (!previous || *previous == target) return;
    // Carry over answers the new task also asks for.
    const auto& from = d_.state.tasks[*previous].slots;
    auto& to = d_.state.tasks[target].slots;
    for (const auto& spec : world_.profile(target).slots) {
      auto it = from.find(spec.slot);
      if (it == from.end() || to.count(spec.slot) != 0) continue;
      if (std::find(spec.values.begin(), spec.values.end(), it->second) != spec.values.end()) to[spec.slot] = it->second;
    }
  }

  std::string first_open_node() {
    auto path = schema().main_path();
    for (std::size_t i = 1; i < path.size(); ++i) {
      const auto* spec = profile().slot_for_node(path[i]);
      if (spec != nullptr && ts().slots.count(spec->slot) != 0) continue;
      return path[i];
    }
    return std::string(kAnythingElse);
  }

  void emit(const std::string& node, int depth = 0) {
    const auto& s = schema();
    d_.task = task();
    auto kind = s.kind(node);
    if ((kind == NodeKind::KbBranch || kind == NodeKind::UserBranch) && depth < 4) {
      auto next = s.next_node(node);
      emit(next ? *next : std::string(kAnythingElse), depth + 1);
      return;
    }
    ts().cursor = node;
    d_.node = node;
    if (kind == NodeKind::Query) {
      d_.action = query_action(task());
      d_.query = build_query(node);
      return;
    }
    d_.action = node;
    if (profile().slot_for_node(node) != nullptr) ts().asked.push_back(node);
  }

  void out_of_scope() {
    d_.task = task();
    const auto& s = schema();
    d_.node = s.has_node(kOutOfScope) ? std::string(kOutOfScope) : std::string(kAnythingElse);
    d_.action = d_.node;
  }

  void emit_or_fallback(const std::optional<std::string>& node) { emit(node ? *node : std::string(kAnythingElse)); }

 private:
  KbQuery build_query(const std::string& node) {
    KbQuery q;
    q.table = profile().kb_table;
    q.api = task();
    for (const auto& spec : profile().slots) {
      if (!spec.field) continue;
      auto it = ts().slots.find(spec.slot);
      if (it == ts().slots.end()) continue;
      q.constraints.push_back(make_constraint(*spec.field, spec.op, it->second));
    }
    auto extras = profile().query_extras.find(node);
    if (extras != profile().query_extras.end()) {
      q.constraints.insert(q.constraints.end(), extras->second.begin(), extras->second.end());
    }
    return q;
  }

  const World& world_;
  Decision& d_;
};

}  // namespace

Decision decide(const DialogState& state, const World& world, const Event& user_event) {
  if (user_event.agent != Agent::User) throw Error(ErrorCode::InvalidField, "agent", "decide expects a user event");
  Decision d;
  d.state = state;
  Stepper step(world, d);
  auto& st = d.state;
  const std::string utterance = user_event.text.value_or("");
  auto detected = detect_in(utterance, st.capabilities, world);

  if (!st.active_task) {
    if (detected) {
      step.activate(*detected);
    } else if (st.capabilities.size() == 1) {
      step.activate(st.capabilities.front());
    } else if (!st.greeted && !st.capabilities.empty()) {
      st.greeted = true;
      const auto& first = world.schemas.at(st.capabilities.front());
      d.node = first.root().value_or("hello");
      d.action = d.node;
      return d;
    } else {
      throw Error(ErrorCode::NoActiveSchema, utterance, "request matches no capability");
    }
  }

  const auto polarity = detect_polarity(utterance, world.lexicon);
  if (detected && *detected != step.task()) {
    // Answers to the current task take priority over keyword mentions.
    auto rules = slot_rules(step.profile());
    bool progress = !extract_slots(utterance, expected_slots(step.profile(), step.ts()), rules).empty();
    const auto& cur = step.ts().cursor;
    if (cur && is_offer(step.schema(), step.profile(), *cur) && polarity != Polarity::None) progress = true;
    if (!progress) {
      step.activate(*detected);
      d.switched_task = true;
    }
  }

  const auto& schema = step.schema();
  const auto& profile = step.profile();
  auto& ts = step.ts();

  auto found = extract_slots(utterance, expected_slots(profile, ts), slot_rules(profile));
  bool kb_slot_changed = false;
  for (const auto& [slot, value] : found) {
    auto it = ts.slots.find(slot);
    bool changed = it != ts.slots.end() && it->second != value;
    if (changed && profile.slot(slot)->field) kb_slot_changed = true;
    ts.slots[slot] = value;
  }

  if (!st.greeted) {
    st.greeted = true;
    step.emit(schema.root().value_or("hello"));
    return d;
  }
  if (d.switched_task || !ts.cursor) {
    step.emit(step.first_open_node());
    return d;
  }

  const std::string cursor = *ts.cursor;
  const bool at_root = schema.root() && *schema.root() == cursor;
  if (at_root || profile.slot_for_node(cursor) != nullptr) {
    if (!found.empty() || at_root) {
      step.emit(step.first_open_node());
      return d;
    }
    auto distance = detect_refer_back(utterance, world.lexicon);
    if (distance && ts.asked.size() > static_cast<std::size_t>(*distance)) {
      const auto node = ts.asked[ts.asked.size() - 1 - static_cast<std::size_t>(*distance)];
      ts.slots.erase(profile.slot_for_node(node)->slot);
      step.emit(node);
      return d;
    }
    step.out_of_scope();
    return d;
  }

  if (kb_slot_changed) {
    step.emit(step.first_open_node());
    return d;
  }

  if (is_offer(schema, profile, cursor)) {
    if (polarity == Polarity::Yes && schema.has_node("yes")) {
      step.emit_or_fallback(schema.next_node("yes"));
      return d;
    }
    if (polarity == Polarity::No && schema.has_node("no")) {
      auto target = schema.next_node("no");
      if (target) {
        if (const auto* spec = profile.slot_for_node(*target); spec != nullptr && found.count(spec->slot) == 0) {
          ts.slots.erase(spec->slot);
        }
      }
      step.emit_or_fallback(target);
      return d;
    }
    step.out_of_scope();
    return d;
  }

  if (cursor == kAnythingElse) {
    if (detected && *detected == step.task()) {
      step.emit(step.first_open_node());
    } else if (polarity == Polarity::No) {
      step.emit_or_fallback(schema.farewell_node());
    } else {
      step.out_of_scope();
    }
    return d;
  }

  if (auto farewell = schema.farewell_node(); farewell && *farewell == cursor) {
    step.emit(cursor);
    return d;
  }

  step.emit_or_fallback(schema.next_node(cursor));
  return d;
}

Decision resume_after_kb(const DialogState& state, const World& world, const QueryResult& result) {
  if (!state.active_task) throw Error(ErrorCode::NoActiveSchema, "kb", "KB result without an active task");
  Decision d;
  d.state = state;
  Stepper step(world, d);
  auto& ts = step.ts();
  ts.last_kb = result;
  const auto& schema = step.schema();
  const auto nothing_found = schema.nothing_found_node();

  if (result.total_items == 0 || !result.item) {
    step.emit_or_fallback(nothing_found);
    return d;
  }
  if (ts.cursor) {
    if (auto next = schema.next_node(*ts.cursor)) {
      step.emit(*next);
      return d;
    }
  }
  auto field = result.item->fields.find(step.profile().branch_field);
  if (field != result.item->fields.end()) {
    const auto value = scalar_to_string(field->second);
    for (const auto& branch : schema.branch_nodes()) {
      if (schema.kind(branch) == NodeKind::KbBranch && iequals(schema.node_text(branch), value)) {
        step.emit(branch);
        return d;
      }
    }
  }
  step.emit_or_fallback(nothing_found);
  return d;
}

}  // namespace schemaflow
