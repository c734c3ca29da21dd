#include "schemaflow/simulator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <random>
#include <set>
#include <thread>

#include "schemaflow/error.hpp"
#include "schemaflow/policy.hpp"
#include "schemaflow/response.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

namespace {

constexpr std::pair<PerturbationKind, std::string_view> kKindNames[] = {
    {PerturbationKind::ChangeMind, "change_mind"},
    {PerturbationKind::SmallTalk, "small_talk"},
    {PerturbationKind::OutOfScope, "out_of_scope"},
    {PerturbationKind::EnvironmentEvent, "environment_event"},
    {PerturbationKind::ReferBack, "refer_back"},
};

constexpr int kMaxOutOfScope = 3;
constexpr std::size_t kMaxEvents = 400;

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& items) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Slots whose values cannot be mistaken for another slot of the same task,
// so a replacement value is attributed to the right slot.
std::vector<const SlotSpec*> changeable_slots(const TaskProfile& profile) {
  std::vector<const SlotSpec*> out;
  for (const auto& s : profile.slots) {
    if (!s.field || s.values.size() < 2) continue;
    bool unique = true;
    for (const auto& other : profile.slots) {
      if (&other == &s) continue;
      for (const auto& v : s.values) {
        if (std::find(other.values.begin(), other.values.end(), v) != other.values.end()) unique = false;
      }
    }
    if (unique) out.push_back(&s);
  }
  return out;
}

std::string other_value(std::mt19937_64& rng, const SlotSpec& slot, const std::string& current) {
  std::vector<std::string> candidates;
  for (const auto& v : slot.values) {
    if (v != current) candidates.push_back(v);
  }
  return candidates.empty() ? current : pick(rng, candidates);
}

bool is_offer_node(const Schema& schema, const TaskProfile& profile, const std::string& node) {
  if (node == "anything_else" || profile.slot_for_node(node) != nullptr || is_query_label(node)) return false;
  if (!schema.has_node("yes") || schema.next_node(node)) return false;
  auto text = trim(schema.node_text(node));
  return !text.empty() && text.back() == '?';
}

}  // namespace

std::string_view to_string(PerturbationKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<PerturbationKind> perturbation_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

std::vector<PerturbationKind> all_perturbation_kinds() {
  std::vector<PerturbationKind> out;
  for (const auto& [k, _] : kKindNames) out.push_back(k);
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void validate_spec(const ScenarioSpec& spec, const World& world) {
  auto bad = [](const std::string& what, const std::string& why) { throw Error(ErrorCode::InvalidConfig, what, why); };
  if (spec.tasks.empty() || spec.tasks.size() > 5) bad("tasks", "a scenario has 1 to 5 tasks");
  std::set<std::string> distinct(spec.tasks.begin(), spec.tasks.end());
  if (distinct.size() != spec.tasks.size()) bad("tasks", "tasks must be distinct");
  for (const auto& t : spec.tasks) {
    if (!world.schemas.contains(t)) throw Error(ErrorCode::UnknownTask, t, "no schema for task");
  }
  if (spec.happy && !spec.perturbations.empty()) bad("perturbations", "happy scenarios have no perturbations");
  if (spec.revisit && spec.tasks.size() < 2) bad("revisit", "revisits need at least two tasks");
  for (const auto& p : spec.perturbations) {
    if (distinct.count(p.task) == 0) bad(p.task, "perturbation task is not part of the scenario");
    if (p.kind == PerturbationKind::ChangeMind || p.kind == PerturbationKind::EnvironmentEvent) {
      if (world.profile(p.task).slot(p.slot) == nullptr) bad(p.slot, "not a slot of " + p.task);
    }
    if (p.kind == PerturbationKind::ReferBack && world.pools.refer_back.count(p.distance) == 0) {
      bad("distance", "no refer-back utterances for distance " + std::to_string(p.distance));
    }
  }
}

ScenarioSpec sample_scenario(const World& world, const ScenarioConfig& config) {
  std::mt19937_64 rng(config.seed);
  ScenarioSpec spec;
  spec.seed = config.seed;
  auto pool = config.tasks.empty() ? world.schemas.tasks() : config.tasks;
  if (pool.empty()) throw Error(ErrorCode::EmptySchemaSet, "tasks", "no tasks to sample from");

  spec.happy = uniform01(rng) < config.happy_ratio;
  const bool multi = pool.size() >= 2 && config.max_tasks >= 2 && uniform01(rng) < config.multi_ratio;
  std::size_t n_tasks = 1;
  if (multi) {
    const auto cap = std::min<std::size_t>({pool.size(), static_cast<std::size_t>(config.max_tasks), 5});
    n_tasks = std::uniform_int_distribution<std::size_t>(2, cap)(rng);
  }
  while (spec.tasks.size() < n_tasks) {
    std::vector<double> weights;
    for (const auto& t : pool) {
      if (std::find(spec.tasks.begin(), spec.tasks.end(), t) != spec.tasks.end()) {
        weights.push_back(0.0);
        continue;
      }
      bool shares = std::any_of(spec.tasks.begin(), spec.tasks.end(), [&](const std::string& chosen) {
        return world.schemas.domain_of(chosen) == world.schemas.domain_of(t);
      });
      weights.push_back(shares ? config.same_domain_weight : 1.0);
    }
    std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
    spec.tasks.push_back(pool[d(rng)]);
  }
  if (spec.tasks.size() >= 2 && !world.schemas.at(spec.tasks.front()).has_node("yes")) {
    spec.revisit = uniform01(rng) < config.revisit_ratio;
  }

  std::map<std::string, std::string> shared;
  for (const auto& task : spec.tasks) {
    for (const auto& slot : world.profile(task).slots) {
      auto it = shared.find(slot.slot);
      std::string value = it != shared.end() && std::find(slot.values.begin(), slot.values.end(), it->second) !=
                                                      slot.values.end()
                              ? it->second
                              : pick(rng, slot.values);
      shared[slot.slot] = value;
      spec.slot_values[task][slot.slot] = value;
    }
  }

  if (!spec.happy) {
    if (config.kinds.empty()) throw Error(ErrorCode::InvalidConfig, "kinds", "no perturbation kinds allowed");
    const int count = std::uniform_int_distribution<int>(1, std::max(1, config.max_perturbations))(rng);
    for (int i = 0; i < count; ++i) {
      Perturbation p;
      p.kind = pick(rng, config.kinds);
      p.task = pick(rng, spec.tasks);
      const auto& profile = world.profile(p.task);
      p.trigger_turn = std::uniform_int_distribution<int>(2, 2 + static_cast<int>(profile.slots.size()))(rng);
      p.variant = std::uniform_int_distribution<std::size_t>(0, 1u << 16)(rng);
      if (p.kind == PerturbationKind::ChangeMind || p.kind == PerturbationKind::EnvironmentEvent) {
        auto slots = changeable_slots(profile);
        if (slots.empty()) {
          p.kind = PerturbationKind::SmallTalk;
        } else {
          const auto* slot = pick(rng, slots);
          p.slot = slot->slot;
          p.value = other_value(rng, *slot, spec.slot_values[p.task][p.slot]);
        }
      } else if (p.kind == PerturbationKind::ReferBack) {
        p.distance = std::uniform_int_distribution<int>(1, 2)(rng);
        if (world.pools.refer_back.count(p.distance) == 0) p.distance = world.pools.refer_back.begin()->first;
      }
      spec.perturbations.push_back(std::move(p));
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------

WizardAgent::WizardAgent(const World& world, std::vector<std::string> tasks)
    : world_(world), tasks_(std::move(tasks)), state_(initial_state(tasks_)) {}

void WizardAgent::respond(const std::string& text, std::mt19937_64& rng, std::vector<Event>& events) {
  auto e = Event::user_utter(text);
  events.push_back(e);
  auto d = decide(state_, world_, e);
  for (int hops = 0;; ++hops) {
    if (hops > 8) throw Error(ErrorCode::Deadlock, text, "wizard did not settle");
    if (!d.task.empty() && tasks_.size() > 1 && d.task != topic_) {
      topic_ = d.task;
      events.push_back(Event::select_topic(d.task));
    }
    if (!d.query) break;
    events.push_back(Event::query(d.query->constraints, d.query->api));
    auto result = world_.kb.query(d.query->table, d.query->constraints, rng);
    events.push_back(Event::kb_return(result, d.task));
    d = resume_after_kb(d.state, world_, result);
  }
  state_ = d.state;
  const auto& schema = d.task.empty() ? world_.schemas.at(tasks_.front()) : world_.schemas.at(d.task);
  const auto reply = realize_template(schema.reply(d.node), state_).text;
  std::set<std::string> options{d.action};
  for (const char* generic : {"anything_else", "out_of_scope"}) {
    if (schema.has_node(generic)) options.insert(generic);
  }
  events.push_back(Event::pick_suggestion(reply, d.action, {options.begin(), options.end()}));
  events.push_back(Event::wizard_utter(reply));
  last_action_ = d.action;
  consecutive_oos_ = d.action == "out_of_scope" ? consecutive_oos_ + 1 : 0;
}

namespace {

class Session {
 public:
  Session(const ScenarioSpec& spec, const World& world)
      : world_(world), rng_(spec.seed), values_(spec.slot_values), wizard_(world, spec.tasks) {
    queue_ = spec.tasks;
    if (spec.revisit) queue_.push_back(spec.tasks.front());
    for (const auto& p : spec.perturbations) pending_.push_back({p, false});
  }

  std::vector<Event> run() {
    user_say(pick(rng_, world_.pools.pool("greetings")));
    while (!done_) {
      if (events_.size() > kMaxEvents) {
        throw Error(ErrorCode::Deadlock, std::to_string(user_turns_), "dialog exceeded the event budget");
      }
      next_user_move();
    }
    return std::move(events_);
  }

 private:
  struct Pending {
    Perturbation p;
    bool fired;
  };

  // ---- wizard side

  void user_say(const std::string& text) {
    ++user_turns_;
    if (const auto& st = wizard_.state(); st.active_task) ++task_turns_[*st.active_task];
    wizard_.respond(text, rng_, events_);
    if (wizard_.consecutive_out_of_scope() >= kMaxOutOfScope) {
      throw Error(ErrorCode::Deadlock, std::to_string(user_turns_), "three consecutive out_of_scope replies");
    }
  }

  // ---- user side

  void next_user_move() {
    const auto& state = wizard_.state();
    if (!state.active_task) {
      user_say(request_for(queue_.at(queue_pos_)));
      return;
    }
    const std::string task = *state.active_task;
    const auto& schema = world_.schemas.at(task);
    const auto& profile = world_.profile(task);
    const std::string cursor = state.cursor().value_or(schema.root().value_or("hello"));

    if (auto farewell = schema.farewell_node(); farewell && cursor == *farewell) {
      events_.push_back(Event::user_complete());
      done_ = true;
      return;
    }
    if (try_perturbation(task, schema, profile, cursor)) return;

    if (schema.root() && cursor == *schema.root()) {
      user_say(request_for(task));
    } else if (const auto* slot = profile.slot_for_node(cursor)) {
      answer(task, *slot);
    } else if (is_offer_node(schema, profile, cursor)) {
      user_say(pick(rng_, world_.pools.pool("affirm")));
    } else if (cursor == "anything_else") {
      flush_fallbacks(task);
      if (queue_pos_ + 1 < queue_.size()) {
        ++queue_pos_;
        user_say(request_for(queue_[queue_pos_]));
      } else {
        user_say(pick(rng_, world_.pools.pool("close")));
      }
    } else {
      user_say(pick(rng_, world_.pools.pool("ack")));
    }
  }

  std::string request_for(const std::string& task) { return pick(rng_, world_.profile(task).requests); }

  void answer(const std::string& task, const SlotSpec& slot) {
    const auto& value = values_.at(task).at(slot.slot);
    const auto& t = pick(rng_, slot.templates);
    user_say(fill_template(t, {{"value", value}}));
  }

  void instruct(const std::string& kind, const std::map<std::string, std::string>& fill, std::size_t variant) {
    auto it = world_.pools.guide.find(kind);
    if (it == world_.pools.guide.end() || it->second.empty()) return;
    std::string text = it->second[variant % it->second.size()];
    for (const auto& [key, value] : fill) text = replace_all(text, "{" + key + "}", value);
    events_.push_back(Event::instruct(text));
  }

  std::string from_pool(const std::string& pool, std::size_t variant) {
    const auto& p = world_.pools.pool(pool);
    return p[variant % p.size()];
  }

  bool try_perturbation(const std::string& task, const Schema& schema, const TaskProfile& profile,
                        const std::string& cursor) {
    const bool at_slot = profile.slot_for_node(cursor) != nullptr;
    const bool at_offer = is_offer_node(schema, profile, cursor);
    const auto* ts = wizard_.state().task_state(task);
    for (auto& pending : pending_) {
      auto& p = pending.p;
      if (pending.fired || p.task != task || task_turns_[task] < p.trigger_turn) continue;
      switch (p.kind) {
        case PerturbationKind::SmallTalk:
        case PerturbationKind::OutOfScope: {
          if (!at_slot && !at_offer) continue;
          pending.fired = true;
          fire_chatter(p);
          return true;
        }
        case PerturbationKind::ChangeMind:
        case PerturbationKind::EnvironmentEvent: {
          if ((!at_slot && !at_offer) || ts == nullptr || ts->slots.count(p.slot) == 0) continue;
          pending.fired = true;
          const bool env = p.kind == PerturbationKind::EnvironmentEvent;
          const auto reason = from_pool("reasons", p.variant);
          instruct(env ? "environment_event" : "change_mind", {{"slot", p.slot}, {"value", p.value}, {"reason", reason}},
                   p.variant);
          values_[task][p.slot] = p.value;
          auto no_target = schema.has_node("no") ? schema.next_node("no") : std::nullopt;
          const auto* target = no_target ? profile.slot_for_node(*no_target) : nullptr;
          if (at_offer && target != nullptr && target->slot == p.slot) {
            user_say(from_pool("deny", p.variant));
          } else {
            const auto t = ResponseTemplate::parse(from_pool(env ? "environment" : "change_mind", p.variant));
            user_say(fill_template(t, {{"value", p.value}}));
          }
          return true;
        }
        case PerturbationKind::ReferBack: {
          if (!at_slot || ts == nullptr || ts->asked.size() <= static_cast<std::size_t>(p.distance)) continue;
          pending.fired = true;
          instruct("refer_back", {}, p.variant);
          const auto& node = ts->asked[ts->asked.size() - 1 - static_cast<std::size_t>(p.distance)];
          const auto* slot = profile.slot_for_node(node);
          auto slots = changeable_slots(profile);
          if (std::find(slots.begin(), slots.end(), slot) != slots.end()) {
            values_[task][slot->slot] = other_value(rng_, *slot, values_[task][slot->slot]);
          }
          const auto& pool = world_.pools.refer_back.at(p.distance);
          user_say(pool[p.variant % pool.size()]);
          return true;
        }
      }
    }
    return false;
  }

  void fire_chatter(const Perturbation& p) {
    const bool talk = p.kind == PerturbationKind::SmallTalk;
    instruct(talk ? "small_talk" : "out_of_scope", {}, p.variant);
    user_say(from_pool(talk ? "small_talk" : "out_of_scope", p.variant));
  }

  // Perturbations that never found an eligible turn become chatter before
  // the task closes, so every unhappy scenario shows at least one.
  // At most kMaxOutOfScope - 1 chatter turns in a row; further unfired
  // perturbations are dropped.
  void flush_fallbacks(const std::string& task) {
    int fired = 0;
    for (auto& pending : pending_) {
      if (pending.fired || pending.p.task != task) continue;
      pending.fired = true;
      if (fired++ >= kMaxOutOfScope - 1) continue;
      auto p = pending.p;
      if (p.kind != PerturbationKind::OutOfScope) p.kind = PerturbationKind::SmallTalk;
      fire_chatter(p);
    }
  }

  const World& world_;
  std::mt19937_64 rng_;
  std::map<std::string, std::map<std::string, std::string>> values_;
  std::vector<std::string> queue_;
  std::size_t queue_pos_ = 0;
  std::vector<Pending> pending_;
  WizardAgent wizard_;
  std::vector<Event> events_;
  std::map<std::string, int> task_turns_;
  int user_turns_ = 0;
  bool done_ = false;
};

}  // namespace

Dialog run_dialog(const ScenarioSpec& spec, const World& world, std::int64_t dialog_id) {
  validate_spec(spec, world);
  Dialog d;
  d.dialog_id = dialog_id;
  d.batch_id = "simulated";
  d.completion_level = "Complete";
  d.wizard_worker = "simulated-wizard";
  d.user_worker = "simulated-user";
  d.scenario.capabilities = spec.tasks;
  d.scenario.user_task = join(spec.tasks, ", ");
  d.scenario.wizard_task = join(spec.tasks, ", ");
  d.scenario.happy = spec.happy;
  d.scenario.multi_task = spec.tasks.size() > 1;
  for (const auto& t : spec.tasks) {
    const auto& domain = world.schemas.domain_of(t);
    if (std::find(d.scenario.domains.begin(), d.scenario.domains.end(), domain) == d.scenario.domains.end()) {
      d.scenario.domains.push_back(domain);
    }
  }
  Session session(spec, world);
  d.events = session.run();
  return d;
}

std::vector<Dialog> simulate_corpus(const World& world, const ScenarioConfig& config, std::size_t n, unsigned jobs) {
  std::vector<Dialog> out(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      auto c = config;
      c.seed = derive_seed(config.seed, i);
      out[i] = run_dialog(sample_scenario(world, c), world, static_cast<std::int64_t>(i));
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned j = 0; j < jobs; ++j) {
    threads.emplace_back([&, j] {
      try {
        work(j, jobs);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<std::string> entity_values(const World& world) {
  std::set<std::string> out;
  for (const auto& [_, profile] : world.profiles) {
    for (const auto& s : profile.slots) out.insert(s.values.begin(), s.values.end());
  }
  for (const auto& name : world.kb.table_names()) {
    for (const auto& row : world.kb.table(name).rows()) {
      for (const auto& [_, v] : row.fields) {
        if (std::holds_alternative<std::string>(v)) out.insert(std::get<std::string>(v));
      }
    }
  }
  return {out.begin(), out.end()};
}

CorpusStats corpus_stats(const std::vector<Dialog>& dialogs, const std::vector<std::string>& entities) {
  if (dialogs.empty()) throw Error(ErrorCode::EmptyDataset, "corpus", "no dialogs");
  CorpusStats s;
  s.n_dialogs = dialogs.size();
  std::vector<double> per_dialog;
  std::size_t tokens = 0;
  std::size_t text_turns = 0;
  std::set<std::string> vocab;
  auto sorted_entities = entities;
  std::sort(sorted_entities.begin(), sorted_entities.end(),
            [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
  for (const auto& d : dialogs) {
    const auto n = count_turns(d);
    s.n_turns += n;
    per_dialog.push_back(static_cast<double>(n));
    for (const auto& turn : view_dialog(d).turns) {
      if (turn.speaker == Speaker::KnowledgeBase) continue;
      tokens += word_tokens(turn.text).size();
      ++text_turns;
    }
    for (const auto& e : d.events) {
      if (e.agent != Agent::User || e.action != EventAction::Utter || !e.text) continue;
      std::string text = *e.text;
      for (const auto& entity : sorted_entities) {
        if (entity.empty()) continue;
        while (auto pos = find_word(text, entity)) text.replace(*pos, entity.size(), " ");
      }
      for (const auto& tok : word_tokens(text)) {
        if (std::all_of(tok.begin(), tok.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); })) {
          vocab.insert(tok);
        }
      }
    }
  }
  s.turns_per_dialog = static_cast<double>(s.n_turns) / static_cast<double>(s.n_dialogs);
  double var = 0.0;
  for (double x : per_dialog) var += (x - s.turns_per_dialog) * (x - s.turns_per_dialog);
  s.turns_per_dialog_sd = per_dialog.size() > 1 ? std::sqrt(var / static_cast<double>(per_dialog.size() - 1)) : 0.0;
  s.tokens_per_turn = text_turns == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(text_turns);
  s.user_vocab_size = vocab.size();
  return s;
}

}  // namespace schemaflow
