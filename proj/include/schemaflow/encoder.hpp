#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "schemaflow/dialog.hpp"

namespace schemaflow {

// Sparse feature vector with strictly increasing indices.
struct SparseFeatures {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  bool operator==(const SparseFeatures&) const = default;
  std::size_t size() const noexcept { return index.size(); }
};

// Turns text into sparse features. The learned projection on top lives in
// GuidanceModel, so any featurizer with a fixed index space can be used.
class Featurizer {
 public:
  virtual ~Featurizer() = default;
  virtual std::unique_ptr<Featurizer> clone() const = 0;
  virtual std::string name() const = 0;
  virtual std::uint32_t dimension() const = 0;
  // Features of the last `window` turns.
  virtual SparseFeatures history(const std::vector<Turn>& turns, std::size_t window) const = 0;
  // Features of a schema node's reply template.
  virtual SparseFeatures node(std::string_view template_text) const = 0;
};

// Hashed word 1-2-grams.
//
// History features: plain unigrams and bigrams weighted by 0.5^r, where r is
// the distance of the turn from the end, plus unigrams tagged with speaker
// and r at weight 1. Node features: plain unigrams and bigrams of the
// template with placeholders removed. Both are L2-normalized. An empty input
// yields a single marker feature.
class HashedNgramFeaturizer final : public Featurizer {
 public:
  static constexpr std::uint32_t kDefaultBuckets = 1u << 18;

  explicit HashedNgramFeaturizer(std::uint32_t buckets = kDefaultBuckets) : buckets_(buckets) {}

  std::unique_ptr<Featurizer> clone() const override { return std::make_unique<HashedNgramFeaturizer>(*this); }
  std::string name() const override { return "hashed-ngram"; }
  std::uint32_t dimension() const override { return buckets_; }
  SparseFeatures history(const std::vector<Turn>& turns, std::size_t window) const override;
  SparseFeatures node(std::string_view template_text) const override;

 private:
  std::uint32_t buckets_;
};

std::unique_ptr<Featurizer> make_featurizer(std::string_view name, std::uint32_t buckets);

// Last `window` turns of `turns` (all of them when shorter).
std::vector<Turn> last_turns(const std::vector<Turn>& turns, std::size_t window);

}  // namespace schemaflow
