#pragma once

// Brute-force reimplementations of the scoring metrics and a central
// finite-difference gradient check, shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "schemaflow/guidance.hpp"
#include "schemaflow/text.hpp"

namespace schemaflow::testing {

inline double oracle_weighted_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  std::set<std::string> classes(gold.begin(), gold.end());
  double total = 0.0;
  for (const auto& c : classes) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == c) support += 1;
      if (gold[i] == c && pred[i] == c) tp += 1;
      if (gold[i] != c && pred[i] == c) fp += 1;
      if (gold[i] == c && pred[i] != c) fn += 1;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    total += f * support;
  }
  return total / static_cast<double>(gold.size());
}

inline double oracle_bleu(const std::vector<std::vector<std::string>>& hyps,
                          const std::vector<std::vector<std::string>>& refs) {
  double match[4] = {0, 0, 0, 0}, tot[4] = {0, 0, 0, 0};
  double hl = 0, rl = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hl += static_cast<double>(h.size());
    rl += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, int> hc, rc;
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        hc[{h.begin() + static_cast<long>(i), h.begin() + static_cast<long>(i + n)}]++;
      }
      for (std::size_t i = 0; i + n <= r.size(); ++i) {
        rc[{r.begin() + static_cast<long>(i), r.begin() + static_cast<long>(i + n)}]++;
      }
      for (const auto& [g, c] : hc) {
        tot[n - 1] += c;
        auto it = rc.find(g);
        if (it != rc.end()) match[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0 || tot[n] == 0) return 0.0;
    log_sum += 0.25 * std::log(match[n] / tot[n]);
  }
  const double bp = hl > rl ? 1.0 : (hl == 0 ? 0.0 : std::exp(1.0 - rl / hl));
  return bp * std::exp(log_sum);
}

inline double oracle_iem(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                         const std::vector<std::string>& actions, const std::vector<std::string>& generic) {
  std::size_t considered = 0, exact = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (std::find(generic.begin(), generic.end(), actions[i]) != generic.end()) continue;
    ++considered;
    if (trim(hyps[i]) == trim(refs[i])) ++exact;
  }
  return considered == 0 ? 0.0 : static_cast<double>(exact) / static_cast<double>(considered);
}

// Multiset intersection by sorted merge.
inline double oracle_entity_f1(const std::vector<std::vector<std::string>>& hyps,
                               const std::vector<std::vector<std::string>>& refs) {
  std::size_t tp = 0, nh = 0, nr = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto h = hyps[i];
    auto r = refs[i];
    std::sort(h.begin(), h.end());
    std::sort(r.begin(), r.end());
    std::vector<std::string> common;
    std::set_intersection(h.begin(), h.end(), r.begin(), r.end(), std::back_inserter(common));
    tp += common.size();
    nh += h.size();
    nr += r.size();
  }
  if (nh == 0 && nr == 0) return 1.0;
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(nh);
  const double r = static_cast<double>(tp) / static_cast<double>(nr);
  return 2 * p * r / (p + r);
}

inline std::vector<std::string> random_sentence(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> words{"the", "a", "room", "is", "booked", "for", "you", "at", "noon", "ok"};
  std::uniform_int_distribution<std::size_t> len(0, max_len), pick(0, words.size() - 1);
  std::vector<std::string> out(len(rng));
  for (auto& w : out) w = words[pick(rng)];
  return out;
}

inline void randomize_parameters(GuidanceModel& m, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index i = 0; i < m.W().size(); ++i) m.W().data()[i] = u(rng);
  for (Eigen::Index i = 0; i < m.b().size(); ++i) m.b()[i] = u(rng);
  for (Eigen::Index i = 0; i < m.Wh().size(); ++i) m.Wh()[i] = u(rng);
  m.bh() = u(rng);
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences with step `eps` against batch_gradients for every
// entry of W, b, W_h, b_h and every projection row with a gradient (every
// `row_stride`-th row). Relative error is |a - n| / max(|a|, |n|, floor).
// Rows of buckets in `skip_rows` are not compared.
inline GradientCheck check_gradients(GuidanceModel& m, const std::vector<PreparedExample>& batch, double eps,
                                     double floor, std::size_t stride = 1, std::size_t row_stride = 1,
                                     const std::set<std::uint32_t>& skip_rows = {}) {
  GradientCheck out;
  const auto g = batch_gradients(m, batch);
  auto check = [&](double analytic, const std::function<void(double)>& nudge, const std::string& what) {
    nudge(eps);
    const double up = batch_loss(m, batch);
    nudge(-2.0 * eps);
    const double down = batch_loss(m, batch);
    nudge(eps);
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++out.checked;
    if (rel > out.max_relative_error) {
      out.max_relative_error = rel;
      out.worst = what;
    }
  };
  for (Eigen::Index r = 0; r < m.W().rows(); ++r) {
    for (Eigen::Index c = 0; c < m.W().cols(); ++c) {
      if (static_cast<std::size_t>(r * m.W().cols() + c) % stride != 0) continue;
      check(g.W(r, c), [&](double d) { m.W()(r, c) += d; }, "W");
    }
  }
  for (Eigen::Index i = 0; i < m.b().size(); ++i) {
    if (static_cast<std::size_t>(i) % stride == 0) check(g.b[i], [&](double d) { m.b()[i] += d; }, "b");
  }
  for (Eigen::Index i = 0; i < m.Wh().size(); ++i) check(g.Wh[i], [&](double d) { m.Wh()[i] += d; }, "W_h");
  check(g.bh, [&](double d) { m.bh() += d; }, "b_h");
  std::size_t seen = 0;
  for (const auto& [bucket, grad] : g.rows) {
    if (skip_rows.count(bucket) != 0) continue;
    if (seen++ % row_stride != 0) continue;
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      const auto b = bucket;
      check(grad[k], [&, b, k](double d) { m.mutable_projection_row(b)[k] += d; }, "P row " + std::to_string(b));
    }
  }
  return out;
}

}  // namespace schemaflow::testing
