#include "schemaflow/world.hpp"

#include <set>

#include "schemaflow/error.hpp"
#include "schemaflow/json_io.hpp"

namespace schemaflow {

const SlotSpec* TaskProfile::slot_for_node(std::string_view node) const {
  for (const auto& s : slots) {
    if (s.node == node) return &s;
  }
  return nullptr;
}

const SlotSpec* TaskProfile::slot(std::string_view id) const {
  for (const auto& s : slots) {
    if (s.slot == id) return &s;
  }
  return nullptr;
}

const std::vector<std::string>& UserPools::pool(std::string_view name) const {
  auto it = utterances.find(std::string(name));
  if (it == utterances.end() || it->second.empty()) throw Error(ErrorCode::MissingField, std::string(name), "no such utterance pool");
  return it->second;
}

namespace {

std::map<int, std::vector<std::string>> distance_pools(const Json& j) {
  std::map<int, std::vector<std::string>> out;
  for (const auto& [key, value] : j.items()) out[std::stoi(key)] = value.get<std::vector<std::string>>();
  return out;
}

UserPools load_pools(const Json& j) {
  UserPools pools;
  for (const auto& [key, value] : j.items()) {
    if (key == "refer_back") {
      pools.refer_back = distance_pools(value);
    } else if (key == "guide") {
      pools.guide = value.get<std::map<std::string, std::vector<std::string>>>();
    } else if (key == "slot_templates") {
      pools.slot_templates = value.get<std::map<std::string, std::vector<std::string>>>();
    } else if (key == "values") {
      pools.values = value.get<std::map<std::string, std::vector<std::string>>>();
    } else {
      pools.utterances[key] = value.get<std::vector<std::string>>();
    }
  }
  return pools;
}

std::vector<std::string> field_values(const KbTable& table, const std::string& field) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& row : table.rows()) {
    auto it = row.fields.find(field);
    if (it == row.fields.end()) continue;
    auto v = scalar_to_string(it->second);
    if (seen.insert(v).second) out.push_back(v);
  }
  return out;
}

TaskProfile load_profile(const Json& j, const World& world) {
  TaskProfile p;
  p.task = j.at("task").get<std::string>();
  p.keywords = j.at("keywords").get<std::vector<std::string>>();
  p.requests = j.at("requests").get<std::vector<std::string>>();
  p.kb_table = j.at("kb_table").get<std::string>();
  p.branch_field = j.value("branch_field", std::string("Message"));
  const auto& schema = world.schemas.at(p.task);
  const auto& table = world.kb.table(p.kb_table);
  for (const auto& s : j.at("slots")) {
    SlotSpec spec;
    spec.slot = s.at("slot").get<std::string>();
    spec.node = s.at("node").get<std::string>();
    if (!schema.has_node(spec.node)) throw Error(ErrorCode::UnknownNode, spec.node, "slot node missing from schema " + p.task);
    if (s.contains("field")) {
      spec.field = s.at("field").get<std::string>();
      if (table.field(*spec.field) == nullptr) throw Error(ErrorCode::UnknownField, *spec.field, "in table " + p.kb_table);
    }
    if (s.contains("op")) {
      auto op = constraint_op_from_string(s.at("op").get<std::string>());
      if (!op) throw Error(ErrorCode::InvalidField, spec.slot, "unknown op");
      spec.op = *op;
    }
    auto templates_key = s.at("templates").get<std::string>();
    auto t = world.pools.slot_templates.find(templates_key);
    if (t == world.pools.slot_templates.end()) throw Error(ErrorCode::MissingField, templates_key, "no slot template pool");
    for (const auto& text : t->second) spec.templates.push_back(ResponseTemplate::parse(text));
    if (s.contains("values")) {
      auto key = s.at("values").get<std::string>();
      auto v = world.pools.values.find(key);
      if (v == world.pools.values.end()) throw Error(ErrorCode::MissingField, key, "no value pool");
      spec.values = v->second;
    } else if (spec.field) {
      spec.values = field_values(table, *spec.field);
    }
    if (spec.values.empty()) throw Error(ErrorCode::MissingField, spec.slot, "slot has no values");
    p.slots.push_back(std::move(spec));
  }
  if (j.contains("queries")) {
    for (const auto& [node, extras] : j.at("queries").items()) {
      p.query_extras[node] = parse_corpus_constraints(extras);
    }
  }
  return p;
}

}  // namespace

std::filesystem::path World::default_root() { return SCHEMAFLOW_DATA_DIR; }

World World::load(const std::filesystem::path& root) {
  World w;
  w.schemas = SchemaSet::load(root / "schemas", root / "manifest.json");
  w.kb = KnowledgeBase::load_dir(root / "kb");
  w.pools = load_pools(parse_json(read_text_file(root / "user_pools.json")));
  auto lex = parse_json(read_text_file(root / "policy_lexicon.json"));
  w.lexicon.affirm = lex.at("affirm").get<std::vector<std::string>>();
  w.lexicon.negate = lex.at("negate").get<std::vector<std::string>>();
  w.lexicon.refer_back = distance_pools(lex.at("refer_back"));
  for (const auto& file : list_json_files(root / "tasks")) {
    auto profile = load_profile(parse_json(read_text_file(file)), w);
    auto task = profile.task;
    w.profiles.emplace(std::move(task), std::move(profile));
  }
  for (const auto& task : w.schemas.tasks()) {
    if (w.profiles.find(task) == w.profiles.end()) throw Error(ErrorCode::MissingField, task, "no task profile");
  }
  return w;
}

const TaskProfile& World::profile(std::string_view task) const {
  auto it = profiles.find(task);
  if (it == profiles.end()) throw Error(ErrorCode::UnknownTask, std::string(task));
  return it->second;
}

World World::restricted(const std::vector<std::string>& tasks) const {
  World w;
  w.schemas = schemas.subset(tasks);
  w.kb = kb;
  for (const auto& t : tasks) w.profiles.emplace(t, profile(t));
  w.pools = pools;
  w.lexicon = lexicon;
  return w;
}

std::map<std::string, std::vector<std::string>> World::task_lexicon() const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [task, p] : profiles) out[task] = p.keywords;
  return out;
}

}  // namespace schemaflow
