#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "schemaflow/encoder.hpp"
#include "schemaflow/metrics.hpp"
#include "schemaflow/schema.hpp"

namespace schemaflow {

inline constexpr std::string_view kCustomAction = "custom";
inline constexpr std::string_view kTerminalAction = "terminal";

struct GuidanceConfig {
  int dim = 256;
  int window = 5;
  double temperature = 1.0;
  bool schema_guided = true;
  // Keep node encodings out of the gradient.
  bool freeze_nodes = false;
  double init_scale = 1.0;
  std::uint32_t buckets = HashedNgramFeaturizer::kDefaultBuckets;
  std::uint64_t seed = 0;

  bool operator==(const GuidanceConfig&) const = default;
};

// Root and reply labels of every schema, `query <task>` per task, then
// `custom` and `terminal`; sorted and deduplicated.
std::vector<std::string> action_vocab(const SchemaSet& schemas);
// Actions a single task can produce.
std::vector<std::string> task_actions(const Schema& schema);

struct ActionDistribution {
  std::vector<double> probs;

  std::size_t argmax() const;
  // Indices sorted by descending probability, ties by index.
  std::vector<std::size_t> ranked() const;
};

struct FinalDistribution {
  ActionDistribution dist;
  double gate = 0.0;
};

// One schema node as seen by the attention head.
struct NodeEntry {
  std::string task;
  std::string label;
  std::size_t next_action = 0;  // index into the vocabulary
  SparseFeatures features;
};

class GuidanceModel {
 public:
  GuidanceModel(GuidanceConfig config, std::vector<std::string> vocab, std::unique_ptr<Featurizer> featurizer = nullptr);
  // Vocabulary and node table from `schemas`.
  static GuidanceModel for_schemas(const SchemaSet& schemas, GuidanceConfig config);

  GuidanceModel(const GuidanceModel& other);
  GuidanceModel& operator=(const GuidanceModel& other);
  GuidanceModel(GuidanceModel&&) noexcept = default;
  GuidanceModel& operator=(GuidanceModel&&) noexcept = default;

  const GuidanceConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  std::size_t action_index(std::string_view action) const;  // Error(UnknownLabel)
  bool has_action(std::string_view action) const;
  const Featurizer& featurizer() const noexcept { return *featurizer_; }

  // Adds every node of `schema`. Terminal nodes map to `terminal`.
  // Throws Error(UnknownLabel) if a successor action is outside the vocabulary.
  void add_schema(const Schema& schema);
  const std::vector<NodeEntry>& nodes() const noexcept { return nodes_; }
  // Node indices of the given tasks, in table order.
  std::vector<std::size_t> scope_nodes(const std::vector<std::string>& tasks) const;
  std::vector<std::string> tasks() const;
  // Vocabulary indices of the actions the given tasks can produce.
  std::vector<std::size_t> scope_actions(const std::vector<std::string>& tasks) const;

  // h = P^T x for sparse features x.
  Eigen::VectorXd encode(const SparseFeatures& x) const;
  Eigen::VectorXd encode_history(const std::vector<Turn>& history) const;
  Eigen::VectorXd encode_history(const std::vector<Turn>& history, std::size_t window) const;
  // n x d matrix of node encodings.
  Eigen::MatrixXd node_matrix(const std::vector<std::size_t>& nodes) const;

  ActionDistribution predict_clf(const Eigen::VectorXd& h) const;
  // Throws Error(EmptySchemaSet) for an empty node scope.
  ActionDistribution predict_scm(const Eigen::VectorXd& h, const std::vector<std::size_t>& nodes) const;
  FinalDistribution predict_fin(const Eigen::VectorXd& h, const std::vector<std::size_t>& nodes) const;
  // P_fin for schema-guided models, P_clf otherwise; gate is 0 for the latter.
  FinalDistribution predict(const Eigen::VectorXd& h, const std::vector<std::size_t>& nodes) const;

  // Parameters.
  Eigen::MatrixXd& W() noexcept { return W_; }
  Eigen::VectorXd& b() noexcept { return b_; }
  Eigen::VectorXd& Wh() noexcept { return Wh_; }
  double& bh() noexcept { return bh_; }
  const Eigen::MatrixXd& W() const noexcept { return W_; }
  const Eigen::VectorXd& b() const noexcept { return b_; }
  const Eigen::VectorXd& Wh() const noexcept { return Wh_; }
  double bh() const noexcept { return bh_; }

  // Projection row for a feature bucket. Rows start from a seeded draw that
  // depends only on (seed, bucket) and are materialized on first write.
  Eigen::VectorXd projection_row(std::uint32_t bucket) const;
  Eigen::Ref<Eigen::VectorXd> mutable_projection_row(std::uint32_t bucket);
  std::vector<std::uint32_t> materialized_rows() const;  // sorted

  void save(const std::filesystem::path& path) const;
  static GuidanceModel load(const std::filesystem::path& path);

 private:
  Eigen::VectorXd initial_row(std::uint32_t bucket) const;

  GuidanceConfig config_;
  std::vector<std::string> vocab_;
  std::map<std::string, std::size_t, std::less<>> vocab_index_;
  std::unique_ptr<Featurizer> featurizer_;
  std::vector<NodeEntry> nodes_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> task_actions_;
  Eigen::MatrixXd W_;
  Eigen::VectorXd b_;
  Eigen::VectorXd Wh_;
  double bh_ = 0.0;
  std::unordered_map<std::uint32_t, std::size_t> row_slot_;
  std::vector<std::uint32_t> row_bucket_;
  Eigen::MatrixXd rows_;  // d x capacity, column per materialized row
};

// A featurized training or test example.
struct PreparedExample {
  SparseFeatures features;
  std::size_t gold = 0;
  std::vector<std::size_t> nodes;  // attention scope
  std::vector<std::size_t> mask;   // competing actions; empty means all
};

struct Example {
  std::vector<Turn> history;
  std::string gold;
  std::vector<std::string> scope;  // tasks whose schemas are visible
};

// Throws Error(UnknownLabel) for gold labels outside the vocabulary. With
// `mask_to_scope`, predictions are restricted to the scope tasks' actions.
std::vector<PreparedExample> prepare(const GuidanceModel& model, const std::vector<Example>& data,
                                     bool mask_to_scope = false);

struct Gradients {
  double loss = 0.0;  // mean cross-entropy
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Eigen::VectorXd Wh;
  double bh = 0.0;
  std::map<std::uint32_t, Eigen::VectorXd> rows;
};

// Mean cross-entropy of P_fin (P_clf for schema-free models) over `batch`.
double batch_loss(const GuidanceModel& model, const std::vector<PreparedExample>& batch);
Gradients batch_gradients(const GuidanceModel& model, const std::vector<PreparedExample>& batch);

struct TrainConfig {
  double lr = 0.01;
  int epochs = 5;
  int batch = 32;
  std::uint64_t seed = 0;
  double l2 = 0.0;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;  // mean training loss per epoch
};

// Mini-batch Adam. Throws Error(EmptyDataset).
TrainResult train(GuidanceModel& model, const std::vector<PreparedExample>& data, const TrainConfig& config);
TrainResult train(GuidanceModel& model, const std::vector<Example>& data, const TrainConfig& config);

// Predicted action index; only the example's mask competes when set.
std::size_t predict_action(const GuidanceModel& model, const PreparedExample& example);
// Distribution used for prediction, renormalized over the mask when set.
FinalDistribution predict_distribution(const GuidanceModel& model, const PreparedExample& example);

// Weighted F1 of predicted against gold actions. Throws Error(EmptyDataset).
F1Report evaluate_next_action(const GuidanceModel& model, const std::vector<PreparedExample>& data);

}  // namespace schemaflow
