#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fvar/clustering.h"
#include "fvar/pipeline.h"

namespace fvar {

// Linear-softmax testbed: features x (length D) feed C class projections
// z_c = relu(x . w_c), q = softmax(z). Weights are row-major (C, D).
struct SoftmaxTestbed {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<double> weights;

  static SoftmaxTestbed random(std::size_t features, std::size_t classes, std::mt19937_64& rng);

  std::vector<double> projections(const std::vector<double>& x) const;
  std::vector<double> probabilities(const std::vector<double>& x) const;
  // -log q_y(x)
  double loss(const std::vector<double>& x, std::size_t label) const;
};

// Both return (C, D) row-major: entry (c, d) is the gradient with respect to w_c[d].
// 1/2 [x1 (q(x1) - onehot) + x2 (q(x2) - onehot)]
std::vector<double> grad_true_pair(const SoftmaxTestbed& tb, const std::vector<double>& x1,
                                   const std::vector<double>& x2, std::size_t label);
// m (q(m) - onehot), m = (x1 + x2) / 2
std::vector<double> grad_approx_pair(const SoftmaxTestbed& tb, const std::vector<double>& x1,
                                     const std::vector<double>& x2, std::size_t label);

struct BoundCheck {
  std::vector<double> x1;
  std::vector<double> x2;
  std::vector<double> lhs;  // |grad_true - grad_approx|, (C, D)
  std::vector<double> rhs;  // 1/4 |(x1 - x2)(q_c(x1) - q_c(x2))|, (C, D)
  bool sign_agreement = false;
  bool holds = false;
  // Largest lhs - rhs over all entries.
  double worst_excess = 0.0;
};

BoundCheck jensen_bound_check(const SoftmaxTestbed& tb, const std::vector<double>& x1,
                              const std::vector<double>& x2, std::size_t label, double eps = 1e-9);

// Draws x1 ~ N(0, I) and x2 = x1 + s * delta, halving s until every class
// projection keeps its sign. Returns false when no agreeing pair was found.
bool sample_sign_agreeing_pair(const SoftmaxTestbed& tb, std::mt19937_64& rng, std::vector<double>& x1,
                               std::vector<double>& x2);

struct BoundSummary {
  std::size_t requested = 0;
  std::size_t sampled = 0;        // sign-agreeing pairs evaluated
  std::size_t rejected = 0;       // draws that never reached sign agreement
  std::size_t holds = 0;
  double worst_excess = 0.0;
  std::vector<BoundCheck> failures;  // first few violations, for reporting

  double pass_rate() const { return sampled ? static_cast<double>(holds) / static_cast<double>(sampled) : 0.0; }
};

BoundSummary run_bound_checks(std::size_t pairs, std::size_t features, std::size_t classes, std::uint64_t seed,
                              double eps = 1e-9, std::size_t keep_failures = 5);

struct ScatterRow {
  std::size_t i = 0;
  std::size_t j = 0;
  double euclid_act = 0.0;
  std::size_t hamming_act = 0;
  double euclid_grad = 0.0;
};

struct ScatterTable {
  std::vector<ScatterRow> rows;
  // Pearson correlation of euclid_act vs euclid_grad; empty when undefined.
  std::optional<double> pearson_euclid;
  std::optional<double> pearson_hamming;
};

// One row per unordered frame pair. Activations are the block-1 pre-ReLU
// maps; gradients are the block-1 parameter gradients of each frame's own
// single-frame loss.
ScatterTable activation_gradient_scatter(const Backbone<double>& net, const Tensor<double>& frames,
                                         std::size_t label);
std::string scatter_csv(const ScatterTable& table);

struct GradientReport {
  ClusteringMethod method = ClusteringMethod::kCumulative;
  std::uint32_t g = 0;
  std::vector<std::size_t> cluster_sizes;
  // Per real cluster: || sum_i grad L_i - n_k grad Lhat_k || over the first
  // parameterised layer after aggregation.
  std::vector<double> distances;
  double mean = 0.0;
  double max = 0.0;
};

GradientReport cluster_gradient_report(const Backbone<double>& net, const Tensor<double>& frames, std::size_t label,
                                       ClusteringMethod method, std::uint32_t g);
std::string gradient_report_csv(std::span<const GradientReport> reports);

}  // namespace fvar
