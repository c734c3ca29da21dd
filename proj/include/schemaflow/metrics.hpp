#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace schemaflow {

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct F1Report {
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::map<std::string, ClassScore> per_class;
};

// Per-class F1 averaged with weights proportional to gold support.
// Classes that are never predicted have precision 0. Throws
// Error(EmptyDataset) or Error(LengthMismatch).
F1Report weighted_f1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted);

// Corpus BLEU-4 in [0, 1]: uniform weights, no smoothing, standard brevity
// penalty. Sentences are tokenized with word_tokens.
double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);
double corpus_bleu_tokens(const std::vector<std::vector<std::string>>& hypotheses,
                          const std::vector<std::vector<std::string>>& references);

// Clipped n-gram matches and hypothesis n-gram totals for one pair.
struct NgramCounts {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
};
NgramCounts ngram_counts(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);

// Exact-match rate (after trimming) over pairs whose reference action is not
// generic. Returns 0 when every pair is generic.
double in_domain_exact_match(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                             const std::vector<std::string>& reference_actions,
                             const std::vector<std::string>& generic_labels);

// Micro F1 over entity multisets: true positives are the multiset
// intersection per pair. 1 when neither side has any entity.
double entity_f1(const std::vector<std::vector<std::string>>& hypothesis_entities,
                 const std::vector<std::vector<std::string>>& reference_entities);

}  // namespace schemaflow
