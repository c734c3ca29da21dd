#pragma once

// Expected wizard actions of a happy single-task dialog, derived from the
// schema graph alone. KB-dependent branches are resolved from the KB return
// events recorded in the dialog; offers are accepted; the dialog closes at
// the first anything_else.

#include <optional>
#include <string>
#include <vector>

#include "schemaflow/dialog.hpp"
#include "schemaflow/schema.hpp"
#include "schemaflow/world.hpp"

namespace schemaflow::testing {

inline bool walk_is_query(const std::string& label) { return label == "query" || label.rfind("query_", 0) == 0; }

inline std::vector<std::string> happy_graph_walk(const Schema& s, const TaskProfile& profile, const Dialog& d) {
  const auto& graph = s.graph();
  auto successor = [&](const std::string& n) -> std::optional<std::string> {
    auto it = graph.find(n);
    if (it == graph.end()) return std::nullopt;
    return it->second;
  };
  auto label_ending = [&](const std::string& suffix) -> std::optional<std::string> {
    for (const auto& [label, _] : s.replies()) {
      if (label.size() >= suffix.size() && label.compare(label.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return label;
      }
    }
    return std::nullopt;
  };
  auto farewell = [&]() -> std::string {
    for (const auto& [label, _] : s.replies()) {
      if (label == "bye" || label == "goodbye" || (label.size() > 4 && label.compare(label.size() - 4, 4, "_bye") == 0)) {
        return label;
      }
    }
    return "anything_else";
  };

  std::vector<const Event*> kb_returns;
  for (const auto& e : d.events) {
    if (e.agent == Agent::KnowledgeBase) kb_returns.push_back(&e);
  }
  std::size_t next_kb = 0;

  std::vector<std::string> out;
  std::string node = "hello";
  for (int guard = 0; guard < 64; ++guard) {
    if (walk_is_query(node)) {
      out.push_back("query " + s.task());
      if (next_kb >= kb_returns.size()) return out;
      const Event& kb = *kb_returns[next_kb++];
      if (!kb.item || kb.item->is_null() || kb.total_items.value_or(0) == 0) {
        node = label_ending("nothing_found").value_or("anything_else");
        continue;
      }
      if (auto next = successor(node)) {
        node = *next;
        continue;
      }
      const std::string value = kb.item->at(profile.branch_field).get<std::string>();
      std::optional<std::string> branch;
      for (const auto& [key, _] : graph) {
        if (s.node_text(key) == value) branch = key;
      }
      node = branch ? *successor(*branch) : label_ending("nothing_found").value_or("anything_else");
      continue;
    }
    out.push_back(node);
    if (node == farewell()) return out;
    if (node == "anything_else") {
      node = farewell();
      continue;
    }
    if (auto next = successor(node)) {
      node = *next;
      continue;
    }
    const auto& text = s.node_text(node);
    if (!text.empty() && text.back() == '?' && graph.count("yes") != 0) {
      node = graph.at("yes");
    } else {
      node = "anything_else";
    }
  }
  return out;
}

}  // namespace schemaflow::testing
