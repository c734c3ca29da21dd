#include "schemaflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "schemaflow/error.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch, what, std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace

F1Report weighted_f1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted) {
  check_aligned(gold.size(), predicted.size(), "labels");
  if (gold.empty()) throw Error(ErrorCode::EmptyDataset, "labels", "no labels to score");

  std::map<std::string, std::size_t> tp, fp, fn, support;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++support[gold[i]];
    if (gold[i] == predicted[i]) {
      ++tp[gold[i]];
      ++correct;
    } else {
      ++fp[predicted[i]];
      ++fn[gold[i]];
    }
  }

  F1Report report;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  std::set<std::string> labels;
  for (const auto& [k, _] : support) labels.insert(k);
  for (const auto& [k, _] : fp) labels.insert(k);
  for (const auto& label : labels) {
    ClassScore s;
    s.support = support[label];
    const double t = static_cast<double>(tp[label]);
    const double p_den = t + static_cast<double>(fp[label]);
    const double r_den = t + static_cast<double>(fn[label]);
    s.precision = p_den > 0 ? t / p_den : 0.0;
    s.recall = r_den > 0 ? t / r_den : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    report.weighted_f1 += s.f1 * static_cast<double>(s.support);
    report.per_class[label] = s;
  }
  report.weighted_f1 /= static_cast<double>(gold.size());
  return report;
}

NgramCounts ngram_counts(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
  NgramCounts c;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[{reference.begin() + static_cast<long>(i), reference.begin() + static_cast<long>(i + n)}];
    }
    for (std::size_t i = 0; i + n <= hypothesis.size(); ++i) {
      ++hyp_counts[{hypothesis.begin() + static_cast<long>(i), hypothesis.begin() + static_cast<long>(i + n)}];
    }
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) c.matches[n - 1] += std::min(count, it->second);
      c.totals[n - 1] += count;
    }
  }
  return c;
}

double corpus_bleu_tokens(const std::vector<std::vector<std::string>>& hypotheses,
                          const std::vector<std::vector<std::string>>& references) {
  check_aligned(hypotheses.size(), references.size(), "sentences");
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    auto c = ngram_counts(hypotheses[i], references[i]);
    for (int n = 0; n < 4; ++n) {
      matches[n] += c.matches[n];
      totals[n] += c.totals[n];
    }
    hyp_len += hypotheses[i].size();
    ref_len += references[i].size();
  }
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double bp = hyp_len >= ref_len ? 1.0
                                       : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_sum);
}

double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  check_aligned(hypotheses.size(), references.size(), "sentences");
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hypotheses.size());
  r.reserve(references.size());
  for (const auto& s : hypotheses) h.push_back(word_tokens(s));
  for (const auto& s : references) r.push_back(word_tokens(s));
  return corpus_bleu_tokens(h, r);
}

double in_domain_exact_match(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                             const std::vector<std::string>& reference_actions,
                             const std::vector<std::string>& generic_labels) {
  check_aligned(hypotheses.size(), references.size(), "sentences");
  check_aligned(references.size(), reference_actions.size(), "actions");
  const std::set<std::string> generic(generic_labels.begin(), generic_labels.end());
  std::size_t considered = 0;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (generic.count(reference_actions[i]) != 0) continue;
    ++considered;
    if (trim(hypotheses[i]) == trim(references[i])) ++exact;
  }
  return considered == 0 ? 0.0 : static_cast<double>(exact) / static_cast<double>(considered);
}

double entity_f1(const std::vector<std::vector<std::string>>& hypothesis_entities,
                 const std::vector<std::vector<std::string>>& reference_entities) {
  check_aligned(hypothesis_entities.size(), reference_entities.size(), "entity lists");
  std::size_t tp = 0;
  std::size_t hyp_total = 0;
  std::size_t ref_total = 0;
  for (std::size_t i = 0; i < hypothesis_entities.size(); ++i) {
    std::map<std::string, std::size_t> ref;
    for (const auto& e : reference_entities[i]) ++ref[e];
    for (const auto& e : hypothesis_entities[i]) {
      auto it = ref.find(e);
      if (it != ref.end() && it->second > 0) {
        --it->second;
        ++tp;
      }
    }
    hyp_total += hypothesis_entities[i].size();
    ref_total += reference_entities[i].size();
  }
  if (hyp_total == 0 && ref_total == 0) return 1.0;
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(hyp_total);
  const double r = static_cast<double>(tp) / static_cast<double>(ref_total);
  return 2 * p * r / (p + r);
}

}  // namespace schemaflow
