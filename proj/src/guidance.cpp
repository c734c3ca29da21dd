#include "schemaflow/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "schemaflow/dialog.hpp"
#include "schemaflow/error.hpp"
#include "schemaflow/policy.hpp"

namespace schemaflow {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void softmax_inplace(Eigen::VectorXd& z) {
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  z /= z.sum();
}

double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::vector<std::string> task_actions(const Schema& schema) {
  std::set<std::string> out;
  for (const auto& [label, _] : schema.replies()) {
    auto kind = schema.kind(label);
    if (kind == NodeKind::Root || kind == NodeKind::Reply) out.insert(label);
    if (kind == NodeKind::Query) out.insert(query_action(schema.task()));
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> action_vocab(const SchemaSet& schemas) {
  std::set<std::string> out;
  for (const auto& task : schemas.tasks()) {
    for (auto& a : task_actions(schemas.at(task))) out.insert(std::move(a));
  }
  out.insert(std::string(kCustomAction));
  out.insert(std::string(kTerminalAction));
  return {out.begin(), out.end()};
}

std::size_t ActionDistribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::vector<std::size_t> ActionDistribution::ranked() const {
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return idx;
}

GuidanceModel::GuidanceModel(GuidanceConfig config, std::vector<std::string> vocab,
                             std::unique_ptr<Featurizer> featurizer)
    : config_(config), vocab_(std::move(vocab)), featurizer_(std::move(featurizer)) {
  if (config_.dim < 1) throw Error(ErrorCode::InvalidConfig, "dim", "dimension must be positive");
  if (config_.window < 1) throw Error(ErrorCode::InvalidConfig, "window", "window must be at least 1");
  if (!(config_.temperature > 0)) throw Error(ErrorCode::InvalidConfig, "temperature", "must be positive");
  if (vocab_.empty()) throw Error(ErrorCode::InvalidConfig, "vocab", "empty action vocabulary");
  if (!featurizer_) featurizer_ = std::make_unique<HashedNgramFeaturizer>(config_.buckets);
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!vocab_index_.emplace(vocab_[i], i).second) {
      throw Error(ErrorCode::InvalidConfig, vocab_[i], "duplicate action in vocabulary");
    }
  }
  const auto a = static_cast<Eigen::Index>(vocab_.size());
  W_ = Eigen::MatrixXd::Zero(a, config_.dim);
  b_ = Eigen::VectorXd::Zero(a);
  Wh_ = Eigen::VectorXd::Zero(config_.dim);
  rows_.resize(config_.dim, 0);
}

GuidanceModel GuidanceModel::for_schemas(const SchemaSet& schemas, GuidanceConfig config) {
  GuidanceModel m(config, action_vocab(schemas));
  for (const auto& task : schemas.tasks()) m.add_schema(schemas.at(task));
  return m;
}

GuidanceModel::GuidanceModel(const GuidanceModel& other)
    : config_(other.config_),
      vocab_(other.vocab_),
      vocab_index_(other.vocab_index_),
      featurizer_(other.featurizer_->clone()),
      nodes_(other.nodes_),
      task_actions_(other.task_actions_),
      W_(other.W_),
      b_(other.b_),
      Wh_(other.Wh_),
      bh_(other.bh_),
      row_slot_(other.row_slot_),
      row_bucket_(other.row_bucket_),
      rows_(other.rows_) {}

GuidanceModel& GuidanceModel::operator=(const GuidanceModel& other) {
  if (this != &other) {
    GuidanceModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::size_t GuidanceModel::action_index(std::string_view action) const {
  auto it = vocab_index_.find(action);
  if (it == vocab_index_.end()) throw Error(ErrorCode::UnknownLabel, std::string(action), "not in action vocabulary");
  return it->second;
}

bool GuidanceModel::has_action(std::string_view action) const { return vocab_index_.count(action) != 0; }

void GuidanceModel::add_schema(const Schema& schema) {
  std::vector<NodeEntry> added;
  for (const auto& [label, reply] : schema.replies()) {
    NodeEntry e;
    e.task = schema.task();
    e.label = label;
    auto next = schema.next_node(label);
    e.next_action = action_index(next ? action_of_node(schema, *next) : std::string(kTerminalAction));
    e.features = featurizer_->node(reply.text());
    added.push_back(std::move(e));
  }
  std::vector<std::size_t> actions;
  for (const auto& a : task_actions(schema)) actions.push_back(action_index(a));
  std::sort(actions.begin(), actions.end());
  task_actions_[schema.task()] = std::move(actions);
  nodes_.insert(nodes_.end(), std::make_move_iterator(added.begin()), std::make_move_iterator(added.end()));
}

std::vector<std::size_t> GuidanceModel::scope_nodes(const std::vector<std::string>& tasks) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (std::find(tasks.begin(), tasks.end(), nodes_[i].task) != tasks.end()) out.push_back(i);
  }
  return out;
}

std::vector<std::string> GuidanceModel::tasks() const {
  std::vector<std::string> out;
  for (const auto& [task, _] : task_actions_) out.push_back(task);
  return out;
}

std::vector<std::size_t> GuidanceModel::scope_actions(const std::vector<std::string>& tasks) const {
  std::set<std::size_t> out;
  for (const auto& task : tasks) {
    auto it = task_actions_.find(task);
    if (it != task_actions_.end()) out.insert(it->second.begin(), it->second.end());
  }
  return {out.begin(), out.end()};
}

Eigen::VectorXd GuidanceModel::initial_row(std::uint32_t bucket) const {
  // Uniform entries with standard deviation init_scale / sqrt(d).
  std::uint64_t state = config_.seed ^ (0xD1B54A32D192ED03ULL * (static_cast<std::uint64_t>(bucket) + 1));
  const double half_width = config_.init_scale * std::sqrt(3.0 / config_.dim);
  Eigen::VectorXd row(config_.dim);
  for (Eigen::Index i = 0; i < row.size(); ++i) {
    const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    row[i] = (2.0 * u - 1.0) * half_width;
  }
  return row;
}

Eigen::VectorXd GuidanceModel::projection_row(std::uint32_t bucket) const {
  auto it = row_slot_.find(bucket);
  if (it == row_slot_.end()) return initial_row(bucket);
  return rows_.col(static_cast<Eigen::Index>(it->second));
}

Eigen::Ref<Eigen::VectorXd> GuidanceModel::mutable_projection_row(std::uint32_t bucket) {
  auto it = row_slot_.find(bucket);
  if (it != row_slot_.end()) return rows_.col(static_cast<Eigen::Index>(it->second));
  const auto slot = row_bucket_.size();
  if (static_cast<Eigen::Index>(slot) >= rows_.cols()) {
    rows_.conservativeResize(Eigen::NoChange, std::max<Eigen::Index>(64, rows_.cols() * 2));
  }
  rows_.col(static_cast<Eigen::Index>(slot)) = initial_row(bucket);
  row_slot_.emplace(bucket, slot);
  row_bucket_.push_back(bucket);
  return rows_.col(static_cast<Eigen::Index>(slot));
}

std::vector<std::uint32_t> GuidanceModel::materialized_rows() const {
  auto out = row_bucket_;
  std::sort(out.begin(), out.end());
  return out;
}

Eigen::VectorXd GuidanceModel::encode(const SparseFeatures& x) const {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(config_.dim);
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto it = row_slot_.find(x.index[k]);
    if (it != row_slot_.end()) {
      h.noalias() += x.value[k] * rows_.col(static_cast<Eigen::Index>(it->second));
    } else {
      h.noalias() += x.value[k] * initial_row(x.index[k]);
    }
  }
  return h;
}

Eigen::VectorXd GuidanceModel::encode_history(const std::vector<Turn>& history) const {
  return encode_history(history, static_cast<std::size_t>(config_.window));
}

Eigen::VectorXd GuidanceModel::encode_history(const std::vector<Turn>& history, std::size_t window) const {
  return encode(featurizer_->history(history, window));
}

Eigen::MatrixXd GuidanceModel::node_matrix(const std::vector<std::size_t>& nodes) const {
  Eigen::MatrixXd K(static_cast<Eigen::Index>(nodes.size()), config_.dim);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    K.row(static_cast<Eigen::Index>(i)) = encode(nodes_.at(nodes[i]).features).transpose();
  }
  return K;
}

ActionDistribution GuidanceModel::predict_clf(const Eigen::VectorXd& h) const {
  Eigen::VectorXd z = W_ * h + b_;
  softmax_inplace(z);
  return {to_std(z)};
}

namespace {

// Attention weights and the resulting P_scm.
struct ScmForward {
  Eigen::VectorXd alpha;
  Eigen::VectorXd p;
};

ScmForward scm_forward(const GuidanceModel& m, const Eigen::MatrixXd& K, const std::vector<std::size_t>& nodes,
                       const Eigen::VectorXd& h) {
  ScmForward f;
  f.alpha = K * h / m.config().temperature;
  softmax_inplace(f.alpha);
  f.p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.vocab().size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    f.p[static_cast<Eigen::Index>(m.nodes()[nodes[i]].next_action)] += f.alpha[static_cast<Eigen::Index>(i)];
  }
  return f;
}

}  // namespace

ActionDistribution GuidanceModel::predict_scm(const Eigen::VectorXd& h, const std::vector<std::size_t>& nodes) const {
  if (nodes.empty()) throw Error(ErrorCode::EmptySchemaSet, "scope", "no schema nodes in scope");
  return {to_std(scm_forward(*this, node_matrix(nodes), nodes, h).p)};
}

FinalDistribution GuidanceModel::predict_fin(const Eigen::VectorXd& h, const std::vector<std::size_t>& nodes) const {
  auto clf = predict_clf(h);
  auto scm = predict_scm(h, nodes);
  const double gate = sigmoid(Wh_.dot(h) + bh_);
  FinalDistribution out;
  out.gate = gate;
  out.dist.probs.resize(clf.probs.size());
  for (std::size_t a = 0; a < clf.probs.size(); ++a) out.dist.probs[a] = gate * scm.probs[a] + (1 - gate) * clf.probs[a];
  return out;
}

FinalDistribution GuidanceModel::predict(const Eigen::VectorXd& h, const std::vector<std::size_t>& nodes) const {
  if (config_.schema_guided) return predict_fin(h, nodes);
  return {predict_clf(h), 0.0};
}

// ---------------------------------------------------------------------------
// Training

std::vector<PreparedExample> prepare(const GuidanceModel& model, const std::vector<Example>& data,
                                     bool mask_to_scope) {
  std::vector<PreparedExample> out;
  out.reserve(data.size());
  std::map<std::vector<std::string>, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> scopes;
  for (const auto& ex : data) {
    PreparedExample p;
    p.features = model.featurizer().history(ex.history, static_cast<std::size_t>(model.config().window));
    p.gold = model.action_index(ex.gold);
    auto it = scopes.find(ex.scope);
    if (it == scopes.end()) {
      it = scopes.emplace(ex.scope, std::make_pair(model.scope_nodes(ex.scope), model.scope_actions(ex.scope))).first;
    }
    p.nodes = it->second.first;
    if (mask_to_scope) p.mask = it->second.second;
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

// Node encodings shared by every example with the same scope.
class NodeCache {
 public:
  explicit NodeCache(const GuidanceModel& m) : m_(m) {}

  const Eigen::MatrixXd& get(const std::vector<std::size_t>& nodes) {
    auto it = cache_.find(nodes);
    if (it == cache_.end()) it = cache_.emplace(nodes, m_.node_matrix(nodes)).first;
    return it->second;
  }

 private:
  const GuidanceModel& m_;
  std::map<std::vector<std::size_t>, Eigen::MatrixXd> cache_;
};

constexpr double kProbFloor = 1e-300;

struct GradAccumulator {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Eigen::VectorXd Wh;
  double bh = 0.0;
  std::unordered_map<std::uint32_t, Eigen::VectorXd> rows;
  std::map<std::size_t, Eigen::VectorXd> node_grads;  // d loss / d k_i, scattered to rows once per batch
  double loss = 0.0;

  GradAccumulator(Eigen::Index a, Eigen::Index d)
      : W(Eigen::MatrixXd::Zero(a, d)), b(Eigen::VectorXd::Zero(a)), Wh(Eigen::VectorXd::Zero(d)) {}

  void add_row(std::uint32_t bucket, double scale, const Eigen::VectorXd& g) {
    auto it = rows.find(bucket);
    if (it == rows.end()) {
      rows.emplace(bucket, scale * g);
    } else {
      it->second.noalias() += scale * g;
    }
  }

  void add_node(std::size_t node, double scale, const Eigen::VectorXd& h) {
    auto it = node_grads.find(node);
    if (it == node_grads.end()) {
      node_grads.emplace(node, scale * h);
    } else {
      it->second.noalias() += scale * h;
    }
  }

  void scatter_nodes(const GuidanceModel& m) {
    for (const auto& [node, g] : node_grads) {
      const auto& f = m.nodes()[node].features;
      for (std::size_t k = 0; k < f.size(); ++k) add_row(f.index[k], f.value[k], g);
    }
    node_grads.clear();
  }
};

// Loss of one example; accumulates gradients when `acc` is set.
double example_pass(const GuidanceModel& m, NodeCache& cache, const PreparedExample& ex, GradAccumulator* acc) {
  const Eigen::VectorXd h = m.encode(ex.features);
  const auto y = static_cast<Eigen::Index>(ex.gold);
  Eigen::VectorXd p_clf = m.W() * h + m.b();
  softmax_inplace(p_clf);

  if (!m.config().schema_guided) {
    const double py = std::max(p_clf[y], kProbFloor);
    if (acc != nullptr) {
      Eigen::VectorXd dz = p_clf;
      dz[y] -= 1.0;
      acc->W.noalias() += dz * h.transpose();
      acc->b += dz;
      const Eigen::VectorXd dh = m.W().transpose() * dz;
      for (std::size_t k = 0; k < ex.features.size(); ++k) acc->add_row(ex.features.index[k], ex.features.value[k], dh);
    }
    return -std::log(py);
  }

  if (ex.nodes.empty()) throw Error(ErrorCode::EmptySchemaSet, "scope", "no schema nodes in scope");
  const auto& K = cache.get(ex.nodes);
  const auto scm = scm_forward(m, K, ex.nodes, h);
  const double gate = sigmoid(m.Wh().dot(h) + m.bh());
  const double py = std::max(gate * scm.p[y] + (1 - gate) * p_clf[y], kProbFloor);
  if (acc == nullptr) return -std::log(py);

  // Gate.
  const double du = -(scm.p[y] - p_clf[y]) / py * gate * (1 - gate);
  acc->Wh.noalias() += du * h;
  acc->bh += du;
  Eigen::VectorXd dh = du * m.Wh();

  // Classifier head.
  Eigen::VectorXd dz = -p_clf;
  dz[y] += 1.0;
  dz *= -(1 - gate) * p_clf[y] / py;
  acc->W.noalias() += dz * h.transpose();
  acc->b += dz;
  dh.noalias() += m.W().transpose() * dz;

  // Attention head.
  const double T = m.config().temperature;
  Eigen::VectorXd ds(static_cast<Eigen::Index>(ex.nodes.size()));
  for (std::size_t i = 0; i < ex.nodes.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double hit = m.nodes()[ex.nodes[i]].next_action == ex.gold ? 1.0 : 0.0;
    ds[ii] = -gate / py * scm.alpha[ii] * (hit - scm.p[y]);
  }
  dh.noalias() += K.transpose() * ds / T;
  for (std::size_t k = 0; k < ex.features.size(); ++k) acc->add_row(ex.features.index[k], ex.features.value[k], dh);
  if (!m.config().freeze_nodes) {
    for (std::size_t i = 0; i < ex.nodes.size(); ++i) {
      const double s = ds[static_cast<Eigen::Index>(i)] / T;
      if (s != 0.0) acc->add_node(ex.nodes[i], s, h);
    }
  }
  return -std::log(py);
}

GradAccumulator accumulate(const GuidanceModel& m, const std::vector<const PreparedExample*>& batch) {
  GradAccumulator acc(static_cast<Eigen::Index>(m.vocab().size()), m.config().dim);
  NodeCache cache(m);
  for (const auto* ex : batch) acc.loss += example_pass(m, cache, *ex, &acc);
  acc.scatter_nodes(m);
  const double inv = 1.0 / static_cast<double>(batch.size());
  acc.loss *= inv;
  acc.W *= inv;
  acc.b *= inv;
  acc.Wh *= inv;
  acc.bh *= inv;
  for (auto& [_, g] : acc.rows) g *= inv;
  return acc;
}

std::vector<const PreparedExample*> pointers(const std::vector<PreparedExample>& data) {
  std::vector<const PreparedExample*> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(&e);
  return out;
}

double mean_loss(const GuidanceModel& m, const std::vector<PreparedExample>& data) {
  NodeCache cache(m);
  double total = 0.0;
  for (const auto& ex : data) total += example_pass(m, cache, ex, nullptr);
  return total / static_cast<double>(data.size());
}

struct AdamSlot {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
};

void adam_step(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& grad, AdamSlot& s, double lr, double c1,
               double c2) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  s.m = beta1 * s.m + (1 - beta1) * grad;
  s.v = beta2 * s.v + (1 - beta2) * grad.cwiseProduct(grad);
  param.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

}  // namespace

double batch_loss(const GuidanceModel& model, const std::vector<PreparedExample>& batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "batch", "no examples");
  return mean_loss(model, batch);
}

Gradients batch_gradients(const GuidanceModel& model, const std::vector<PreparedExample>& batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "batch", "no examples");
  auto acc = accumulate(model, pointers(batch));
  Gradients g;
  g.loss = acc.loss;
  g.W = std::move(acc.W);
  g.b = std::move(acc.b);
  g.Wh = std::move(acc.Wh);
  g.bh = acc.bh;
  for (auto& [bucket, row] : acc.rows) g.rows.emplace(bucket, std::move(row));
  return g;
}

TrainResult train(GuidanceModel& model, const std::vector<PreparedExample>& data, const TrainConfig& config) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "train", "no training examples");
  if (config.batch < 1) throw Error(ErrorCode::InvalidConfig, "batch", "batch size must be positive");
  if (config.epochs < 0) throw Error(ErrorCode::InvalidConfig, "epochs", "epochs must be non-negative");
  for (const auto& ex : data) {
    if (ex.gold >= model.vocab().size()) throw Error(ErrorCode::UnknownLabel, std::to_string(ex.gold), "gold index");
  }

  // Materializing every reachable row up front keeps encode() off the
  // initializer; values are unchanged.
  for (const auto& ex : data) {
    for (auto bucket : ex.features.index) model.mutable_projection_row(bucket);
  }
  for (const auto& node : model.nodes()) {
    for (auto bucket : node.features.index) model.mutable_projection_row(bucket);
  }

  TrainResult result;
  result.initial_loss = mean_loss(model, data);

  const auto a = static_cast<Eigen::Index>(model.vocab().size());
  const auto d = static_cast<Eigen::Index>(model.config().dim);
  AdamSlot sW{Eigen::MatrixXd::Zero(a, d), Eigen::MatrixXd::Zero(a, d)};
  AdamSlot sb{Eigen::MatrixXd::Zero(a, 1), Eigen::MatrixXd::Zero(a, 1)};
  AdamSlot sWh{Eigen::MatrixXd::Zero(d, 1), Eigen::MatrixXd::Zero(d, 1)};
  AdamSlot sbh{Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  std::unordered_map<std::uint32_t, AdamSlot> s_rows;

  std::mt19937_64 rng(config.seed);
  auto order = pointers(data);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<const PreparedExample*> batch(order.begin() + static_cast<long>(start),
                                                order.begin() + static_cast<long>(end));
      auto g = accumulate(model, batch);
      epoch_loss += g.loss * static_cast<double>(batch.size());

      ++step;
      const double c1 = 1 - std::pow(0.9, static_cast<double>(step));
      const double c2 = 1 - std::pow(0.999, static_cast<double>(step));
      if (config.l2 > 0) {
        g.W.noalias() += config.l2 * model.W();
        g.Wh.noalias() += config.l2 * model.Wh();
      }
      adam_step(model.W(), g.W, sW, config.lr, c1, c2);
      adam_step(model.b(), g.b, sb, config.lr, c1, c2);
      if (model.config().schema_guided) {
        adam_step(model.Wh(), g.Wh, sWh, config.lr, c1, c2);
        Eigen::MatrixXd bh(1, 1);
        bh(0, 0) = model.bh();
        Eigen::MatrixXd gbh(1, 1);
        gbh(0, 0) = g.bh;
        adam_step(bh, gbh, sbh, config.lr, c1, c2);
        model.bh() = bh(0, 0);
      }
      std::vector<std::uint32_t> buckets;
      buckets.reserve(g.rows.size());
      for (const auto& [bucket, _] : g.rows) buckets.push_back(bucket);
      std::sort(buckets.begin(), buckets.end());
      for (auto bucket : buckets) {
        auto row = model.mutable_projection_row(bucket);
        Eigen::VectorXd grad = g.rows.at(bucket);
        if (config.l2 > 0) grad.noalias() += config.l2 * row;
        auto [it, fresh] = s_rows.try_emplace(bucket);
        if (fresh) it->second = AdamSlot{Eigen::MatrixXd::Zero(d, 1), Eigen::MatrixXd::Zero(d, 1)};
        adam_step(row, grad, it->second, config.lr, c1, c2);
      }
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  result.final_loss = mean_loss(model, data);
  return result;
}

TrainResult train(GuidanceModel& model, const std::vector<Example>& data, const TrainConfig& config) {
  return train(model, prepare(model, data), config);
}

FinalDistribution predict_distribution(const GuidanceModel& model, const PreparedExample& example) {
  auto out = model.predict(model.encode(example.features), example.nodes);
  if (example.mask.empty()) return out;
  double total = 0.0;
  for (auto a : example.mask) total += out.dist.probs[a];
  std::vector<double> masked(out.dist.probs.size(), 0.0);
  for (auto a : example.mask) masked[a] = total > 0 ? out.dist.probs[a] / total : 1.0 / example.mask.size();
  out.dist.probs = std::move(masked);
  return out;
}

std::size_t predict_action(const GuidanceModel& model, const PreparedExample& example) {
  const auto dist = predict_distribution(model, example).dist;
  if (example.mask.empty()) return dist.argmax();
  std::size_t best = example.mask.front();
  for (auto a : example.mask) {
    if (dist.probs[a] > dist.probs[best]) best = a;
  }
  return best;
}

F1Report evaluate_next_action(const GuidanceModel& model, const std::vector<PreparedExample>& data) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "eval", "no examples");
  std::vector<std::string> gold, pred;
  gold.reserve(data.size());
  pred.reserve(data.size());
  for (const auto& ex : data) {
    gold.push_back(model.vocab()[ex.gold]);
    pred.push_back(model.vocab()[predict_action(model, ex)]);
  }
  return weighted_f1(gold, pred);
}

// ---------------------------------------------------------------------------
// Checkpoints: "SFCK", format version, then fields in declaration order.
// Integers are 64-bit and doubles IEEE-754, both in host byte order.

namespace {

constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};
constexpr std::uint64_t kCheckpointVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(const double* p, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(&v, sizeof v);
    return v;
  }
  double f64() {
    double v = 0;
    read(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = bounded(u64());
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void doubles(double* p, std::size_t n) { read(p, n * sizeof(double)); }
  std::size_t bounded(std::uint64_t n) {
    if (n > (1ULL << 32)) throw Error(ErrorCode::MalformedJson, path_, "corrupt checkpoint length");
    return static_cast<std::size_t>(n);
  }

 private:
  void read(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw Error(ErrorCode::Io, path_, "truncated checkpoint");
  }
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void GuidanceModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, path.string(), "cannot open for writing");
  out.write(kMagic, 4);
  Writer w(out);
  w.u64(kCheckpointVersion);
  w.u64(static_cast<std::uint64_t>(config_.dim));
  w.u64(static_cast<std::uint64_t>(config_.window));
  w.f64(config_.temperature);
  w.u64(config_.schema_guided ? 1 : 0);
  w.u64(config_.freeze_nodes ? 1 : 0);
  w.f64(config_.init_scale);
  w.u64(config_.buckets);
  w.u64(config_.seed);
  w.str(featurizer_->name());
  w.u64(featurizer_->dimension());
  w.u64(vocab_.size());
  for (const auto& a : vocab_) w.str(a);
  w.u64(nodes_.size());
  for (const auto& n : nodes_) {
    w.str(n.task);
    w.str(n.label);
    w.u64(n.next_action);
    w.u64(n.features.size());
    for (std::size_t k = 0; k < n.features.size(); ++k) {
      w.u64(n.features.index[k]);
      w.f64(n.features.value[k]);
    }
  }
  w.u64(task_actions_.size());
  for (const auto& [task, actions] : task_actions_) {
    w.str(task);
    w.u64(actions.size());
    for (auto a : actions) w.u64(a);
  }
  const Eigen::MatrixXd Wc = W_;  // column-major copy
  w.doubles(Wc.data(), static_cast<std::size_t>(Wc.size()));
  w.doubles(b_.data(), static_cast<std::size_t>(b_.size()));
  w.doubles(Wh_.data(), static_cast<std::size_t>(Wh_.size()));
  w.f64(bh_);
  const auto buckets = materialized_rows();
  w.u64(buckets.size());
  for (auto bucket : buckets) {
    w.u64(bucket);
    const Eigen::VectorXd row = projection_row(bucket);
    w.doubles(row.data(), static_cast<std::size_t>(row.size()));
  }
  if (!out) throw Error(ErrorCode::Io, path.string(), "write failed");
}

GuidanceModel GuidanceModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, path.string(), "cannot open checkpoint");
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::MalformedJson, path.string(), "not a checkpoint");
  Reader r(in, path.string());
  if (auto v = r.u64(); v != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch, path.string(), "checkpoint version " + std::to_string(v));
  }
  GuidanceConfig c;
  c.dim = static_cast<int>(r.bounded(r.u64()));
  c.window = static_cast<int>(r.bounded(r.u64()));
  c.temperature = r.f64();
  c.schema_guided = r.u64() != 0;
  c.freeze_nodes = r.u64() != 0;
  c.init_scale = r.f64();
  c.buckets = static_cast<std::uint32_t>(r.bounded(r.u64()));
  c.seed = r.u64();
  const auto featurizer_name = r.str();
  const auto featurizer_dim = static_cast<std::uint32_t>(r.bounded(r.u64()));
  std::vector<std::string> vocab(r.bounded(r.u64()));
  for (auto& a : vocab) a = r.str();
  GuidanceModel m(c, std::move(vocab), make_featurizer(featurizer_name, featurizer_dim));
  m.nodes_.resize(r.bounded(r.u64()));
  for (auto& n : m.nodes_) {
    n.task = r.str();
    n.label = r.str();
    n.next_action = r.bounded(r.u64());
    const auto nf = r.bounded(r.u64());
    for (std::size_t k = 0; k < nf; ++k) {
      n.features.index.push_back(static_cast<std::uint32_t>(r.bounded(r.u64())));
      n.features.value.push_back(r.f64());
    }
  }
  const auto nt = r.bounded(r.u64());
  for (std::size_t t = 0; t < nt; ++t) {
    auto task = r.str();
    std::vector<std::size_t> actions(r.bounded(r.u64()));
    for (auto& a : actions) a = r.bounded(r.u64());
    m.task_actions_[task] = std::move(actions);
  }
  r.doubles(m.W_.data(), static_cast<std::size_t>(m.W_.size()));
  r.doubles(m.b_.data(), static_cast<std::size_t>(m.b_.size()));
  r.doubles(m.Wh_.data(), static_cast<std::size_t>(m.Wh_.size()));
  m.bh_ = r.f64();
  const auto nrows = r.bounded(r.u64());
  Eigen::VectorXd row(c.dim);
  for (std::size_t k = 0; k < nrows; ++k) {
    const auto bucket = static_cast<std::uint32_t>(r.bounded(r.u64()));
    r.doubles(row.data(), static_cast<std::size_t>(row.size()));
    m.mutable_projection_row(bucket) = row;
  }
  return m;
}

}  // namespace schemaflow
