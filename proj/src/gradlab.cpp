#include "fvar/gradlab.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fvar/loss.h"
#include "fvar/signature.h"
#include "fvar/stats.h"

namespace fvar {

SoftmaxTestbed SoftmaxTestbed::random(std::size_t features, std::size_t classes, std::mt19937_64& rng) {
  if (features == 0 || classes < 2) throw std::invalid_argument("testbed: need features >= 1 and classes >= 2");
  SoftmaxTestbed tb;
  tb.features = features;
  tb.classes = classes;
  // Unit-variance projections for unit-variance inputs.
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(features)));
  tb.weights.resize(features * classes);
  for (auto& w : tb.weights) w = dist(rng);
  return tb;
}

std::vector<double> SoftmaxTestbed::projections(const std::vector<double>& x) const {
  if (x.size() != features) {
    throw std::invalid_argument("testbed: feature vector has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(features));
  }
  std::vector<double> z(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t d = 0; d < features; ++d) z[c] += x[d] * weights[c * features + d];
  }
  return z;
}

std::vector<double> SoftmaxTestbed::probabilities(const std::vector<double>& x) const {
  auto z = projections(x);
  for (auto& v : z) v = std::max(v, 0.0);
  const double top = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - top);
    sum += v;
  }
  for (auto& v : z) v /= sum;
  return z;
}

double SoftmaxTestbed::loss(const std::vector<double>& x, std::size_t label) const {
  return -std::log(probabilities(x).at(label));
}

namespace {

// x (q(x) - onehot(label)) scaled by `scale`, accumulated into out (C, D).
void add_single_gradient(const SoftmaxTestbed& tb, const std::vector<double>& x, std::size_t label, double scale,
                         std::vector<double>& out) {
  const auto q = tb.probabilities(x);
  for (std::size_t c = 0; c < tb.classes; ++c) {
    const double r = q[c] - (c == label ? 1.0 : 0.0);
    for (std::size_t d = 0; d < tb.features; ++d) out[c * tb.features + d] += scale * x[d] * r;
  }
}

}  // namespace

std::vector<double> grad_true_pair(const SoftmaxTestbed& tb, const std::vector<double>& x1,
                                   const std::vector<double>& x2, std::size_t label) {
  if (label >= tb.classes) throw std::out_of_range("grad_true_pair: label out of range");
  std::vector<double> g(tb.classes * tb.features, 0.0);
  add_single_gradient(tb, x1, label, 0.5, g);
  add_single_gradient(tb, x2, label, 0.5, g);
  return g;
}

std::vector<double> grad_approx_pair(const SoftmaxTestbed& tb, const std::vector<double>& x1,
                                     const std::vector<double>& x2, std::size_t label) {
  if (label >= tb.classes) throw std::out_of_range("grad_approx_pair: label out of range");
  if (x1.size() != x2.size()) throw std::invalid_argument("grad_approx_pair: feature length mismatch");
  std::vector<double> m(x1.size());
  for (std::size_t d = 0; d < m.size(); ++d) m[d] = 0.5 * (x1[d] + x2[d]);
  std::vector<double> g(tb.classes * tb.features, 0.0);
  add_single_gradient(tb, m, label, 1.0, g);
  return g;
}

BoundCheck jensen_bound_check(const SoftmaxTestbed& tb, const std::vector<double>& x1, const std::vector<double>& x2,
                              std::size_t label, double eps) {
  BoundCheck bc;
  bc.x1 = x1;
  bc.x2 = x2;
  const auto z1 = tb.projections(x1);
  const auto z2 = tb.projections(x2);
  bc.sign_agreement = true;
  for (std::size_t c = 0; c < tb.classes; ++c) bc.sign_agreement &= (z1[c] > 0.0) == (z2[c] > 0.0);

  const auto gt = grad_true_pair(tb, x1, x2, label);
  const auto ga = grad_approx_pair(tb, x1, x2, label);
  const auto q1 = tb.probabilities(x1);
  const auto q2 = tb.probabilities(x2);
  bc.lhs.resize(gt.size());
  bc.rhs.resize(gt.size());
  bc.worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < tb.classes; ++c) {
    for (std::size_t d = 0; d < tb.features; ++d) {
      const std::size_t k = c * tb.features + d;
      bc.lhs[k] = std::abs(gt[k] - ga[k]);
      bc.rhs[k] = 0.25 * std::abs((x1[d] - x2[d]) * (q1[c] - q2[c]));
      bc.worst_excess = std::max(bc.worst_excess, bc.lhs[k] - bc.rhs[k]);
    }
  }
  bc.holds = bc.worst_excess <= eps;
  return bc;
}

bool sample_sign_agreeing_pair(const SoftmaxTestbed& tb, std::mt19937_64& rng, std::vector<double>& x1,
                               std::vector<double>& x2) {
  std::normal_distribution<double> unit(0.0, 1.0);
  x1.resize(tb.features);
  x2.resize(tb.features);
  std::vector<double> delta(tb.features);
  for (auto& v : x1) v = unit(rng);
  for (auto& v : delta) v = unit(rng);
  const auto z1 = tb.projections(x1);
  double s = 1.0;
  for (int attempt = 0; attempt < 40; ++attempt, s *= 0.5) {
    for (std::size_t d = 0; d < tb.features; ++d) x2[d] = x1[d] + s * delta[d];
    const auto z2 = tb.projections(x2);
    bool agree = true;
    for (std::size_t c = 0; c < tb.classes && agree; ++c) agree = (z1[c] > 0.0) == (z2[c] > 0.0);
    if (agree) return true;
  }
  return false;
}

BoundSummary run_bound_checks(std::size_t pairs, std::size_t features, std::size_t classes, std::uint64_t seed,
                              double eps, std::size_t keep_failures) {
  std::mt19937_64 rng(seed);
  const SoftmaxTestbed tb = SoftmaxTestbed::random(features, classes, rng);
  std::uniform_int_distribution<std::size_t> pick_label(0, classes - 1);
  BoundSummary s;
  s.requested = pairs;
  s.worst_excess = -std::numeric_limits<double>::infinity();
  std::vector<double> x1, x2;
  while (s.sampled < pairs) {
    const std::size_t label = pick_label(rng);
    if (!sample_sign_agreeing_pair(tb, rng, x1, x2)) {
      ++s.rejected;
      continue;
    }
    auto bc = jensen_bound_check(tb, x1, x2, label, eps);
    ++s.sampled;
    s.worst_excess = std::max(s.worst_excess, bc.worst_excess);
    if (bc.holds) {
      ++s.holds;
    } else if (s.failures.size() < keep_failures) {
      s.failures.push_back(std::move(bc));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> flatten(const std::vector<Tensor<double>>& grads, std::size_t begin, std::size_t end) {
  std::vector<double> out;
  for (std::size_t i = begin; i < end; ++i) out.insert(out.end(), grads[i].data().begin(), grads[i].data().end());
  return out;
}

// Gradients of the single-position loss of `input` (one frame) through `net`.
std::vector<Tensor<double>> single_position_gradients(const Sequential<double>& net, const Tensor<double>& input,
                                                      std::size_t label) {
  Tape<double> tape;
  const auto logits = net.forward(input, &tape);
  Tensor<double> dlogits;
  cross_entropy(logits, label, &dlogits);
  return net.backward(tape, dlogits).param_grads;
}

std::size_t first_parameterised_layer_params(const Sequential<double>& net) {
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    if (!net.layer(i).params.empty()) return net.layer(i).params.size();
  }
  throw std::invalid_argument("cluster_gradient_report: blocks after aggregation have no parameters");
}

}  // namespace

ScatterTable activation_gradient_scatter(const Backbone<double>& net, const Tensor<double>& frames, std::size_t label) {
  const std::size_t n = frames.dim(0);
  const Tensor<double> pre = net.block1.forward(frames);
  const auto sigs = binarize_frames(pre);
  const std::size_t b1 = net.block1.parameters().size();

  std::vector<std::vector<double>> grads(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto pass = forward_full(net, slice_frames(frames, i, 1), label);
    grads[i] = flatten(backward(net, pass).params, 0, b1);
  }

  ScatterTable table;
  table.rows.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      ScatterRow row;
      row.i = i;
      row.j = j;
      row.euclid_act = l2_distance(pre.frame(i), pre.frame(j));
      row.hamming_act = hamming(sigs[i], sigs[j]);
      row.euclid_grad = l2_distance(std::span<const double>(grads[i]), std::span<const double>(grads[j]));
      table.rows.push_back(row);
    }
  }
  std::vector<double> ea, ha, eg;
  for (const auto& r : table.rows) {
    ea.push_back(r.euclid_act);
    ha.push_back(static_cast<double>(r.hamming_act));
    eg.push_back(r.euclid_grad);
  }
  table.pearson_euclid = pearson(ea, eg);
  table.pearson_hamming = pearson(ha, eg);
  return table;
}

std::string scatter_csv(const ScatterTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "pair_i,pair_j,euclid_act,hamming_act,euclid_grad\n";
  for (const auto& r : table.rows) {
    os << r.i << ',' << r.j << ',' << r.euclid_act << ',' << r.hamming_act << ',' << r.euclid_grad << '\n';
  }
  return os.str();
}

GradientReport cluster_gradient_report(const Backbone<double>& net, const Tensor<double>& frames, std::size_t label,
                                       ClusteringMethod method, std::uint32_t g) {
  if (method == ClusteringMethod::kNone) throw std::invalid_argument("cluster_gradient_report: method 'none'");
  const std::size_t tracked = first_parameterised_layer_params(net.rest);
  const Tensor<double> pre = net.block1.forward(frames);
  const ClusterAssignment assignment = method == ClusteringMethod::kUniform
                                           ? uniform_cluster(pre.dim(0), g)
                                           : assign_clusters(method, binarize_frames(pre), g);
  const auto batch = aggregate(pre, assignment, g);
  const auto segments = assignment.segments();

  GradientReport report;
  report.method = method;
  report.g = g;
  report.cluster_sizes = batch.cluster_sizes;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto [begin, end] = segments[k];
    std::vector<double> sum;
    for (std::size_t f = begin; f < end; ++f) {
      const auto gi = flatten(single_position_gradients(net.rest, slice_frames(pre, f, 1), label), 0, tracked);
      if (sum.empty()) {
        sum = gi;
      } else {
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += gi[j];
      }
    }
    auto approx =
        flatten(single_position_gradients(net.rest, slice_frames(batch.activations, k, 1), label), 0, tracked);
    const double n = static_cast<double>(end - begin);
    for (auto& v : approx) v *= n;
    report.distances.push_back(l2_distance(std::span<const double>(sum), std::span<const double>(approx)));
  }
  report.mean = mean(report.distances);
  report.max = *std::max_element(report.distances.begin(), report.distances.end());
  return report;
}

std::string gradient_report_csv(std::span<const GradientReport> reports) {
  std::ostringstream os;
  os.precision(17);
  os << "cluster_id,method,distance\n";
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.distances.size(); ++k) {
      os << k + 1 << ',' << to_string(r.method) << ',' << r.distances[k] << '\n';
    }
  }
  return os.str();
}

}  // namespace fvar
