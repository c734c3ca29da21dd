#include "schemaflow/encoder.hpp"

#include <cmath>
#include <map>

#include "schemaflow/error.hpp"
#include "schemaflow/schema.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

namespace {

constexpr std::string_view kEmptyMarker = "<empty>";

class Accumulator {
 public:
  explicit Accumulator(std::uint32_t buckets) : buckets_(buckets) {}

  void add(std::string_view key, double weight) {
    acc_[static_cast<std::uint32_t>(fnv1a64(key) % buckets_)] += weight;
  }

  SparseFeatures finish() {
    if (acc_.empty()) add(kEmptyMarker, 1.0);
    double norm = 0.0;
    for (const auto& [_, v] : acc_) norm += v * v;
    norm = std::sqrt(norm);
    SparseFeatures f;
    for (const auto& [i, v] : acc_) {
      if (v == 0.0) continue;
      f.index.push_back(i);
      f.value.push_back(v / norm);
    }
    return f;
  }

 private:
  std::uint32_t buckets_;
  std::map<std::uint32_t, double> acc_;  // ordered, so indices come out sorted
};

void add_ngrams(Accumulator& acc, const std::vector<std::string>& tokens, double weight) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    acc.add(tokens[i], weight);
    if (i + 1 < tokens.size()) acc.add(tokens[i] + ' ' + tokens[i + 1], weight);
  }
}

char speaker_tag(Speaker s) {
  switch (s) {
    case Speaker::User:
      return 'u';
    case Speaker::Wizard:
      return 'w';
    case Speaker::KnowledgeBase:
      return 'k';
  }
  return '?';
}

std::string strip_placeholders(std::string_view text) {
  if (ResponseTemplate::check(text)) return std::string(text);
  auto t = ResponseTemplate::parse(std::string(text));
  std::string out;
  std::size_t pos = 0;
  for (const auto& p : t.placeholders()) {
    out.append(text.substr(pos, p.begin - pos));
    out.push_back(' ');
    pos = p.end;
  }
  out.append(text.substr(pos));
  return out;
}

}  // namespace

std::vector<Turn> last_turns(const std::vector<Turn>& turns, std::size_t window) {
  if (turns.size() <= window) return turns;
  return {turns.end() - static_cast<long>(window), turns.end()};
}

SparseFeatures HashedNgramFeaturizer::history(const std::vector<Turn>& turns, std::size_t window) const {
  if (window == 0) throw Error(ErrorCode::InvalidConfig, "window", "window must be at least 1");
  Accumulator acc(buckets_);
  const auto recent = last_turns(turns, window);
  for (std::size_t k = 0; k < recent.size(); ++k) {
    const std::size_t r = recent.size() - 1 - k;
    const auto tokens = word_tokens(recent[k].text);
    add_ngrams(acc, tokens, std::pow(0.5, static_cast<double>(r)));
    const std::string tag = std::string(1, speaker_tag(recent[k].speaker)) + std::to_string(r) + '|';
    for (const auto& tok : tokens) acc.add(tag + tok, 1.0);
  }
  return acc.finish();
}

SparseFeatures HashedNgramFeaturizer::node(std::string_view template_text) const {
  Accumulator acc(buckets_);
  add_ngrams(acc, word_tokens(strip_placeholders(template_text)), 1.0);
  return acc.finish();
}

std::unique_ptr<Featurizer> make_featurizer(std::string_view name, std::uint32_t buckets) {
  if (name == "hashed-ngram") return std::make_unique<HashedNgramFeaturizer>(buckets);
  throw Error(ErrorCode::InvalidConfig, std::string(name), "unknown featurizer");
}

}  // namespace schemaflow
