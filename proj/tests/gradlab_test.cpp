#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "fvar/gradlab.h"
#include "test_util.h"

using namespace fvar;

namespace {

// Positive weights and positive features keep every projection above zero,
// where the closed forms coincide with the derivative of the loss.
SoftmaxTestbed positive_testbed(std::size_t d, std::size_t c, std::mt19937_64& rng) {
  SoftmaxTestbed tb{d, c, std::vector<double>(d * c)};
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto& w : tb.weights) w = u(rng);
  return tb;
}

std::vector<double> positive_vector(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.5);
  std::vector<double> x(d);
  for (auto& v : x) v = u(rng);
  return x;
}

std::vector<double> numeric_grad(SoftmaxTestbed& tb, const std::function<double()>& loss) {
  std::vector<double> g(tb.weights.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w = tb.weights[i];
    tb.weights[i] = w + h;
    const double up = loss();
    tb.weights[i] = w - h;
    const double down = loss();
    tb.weights[i] = w;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(Testbed, ProbabilitiesAndLoss) {
  std::mt19937_64 rng(1);
  const auto tb = SoftmaxTestbed::random(6, 3, rng);
  const std::vector<double> x{0.3, -1, 2, 0.1, 0, 1};
  const auto q = tb.probabilities(x);
  EXPECT_NEAR(q[0] + q[1] + q[2], 1.0, 1e-12);
  EXPECT_NEAR(tb.loss(x, 2), -std::log(q[2]), 1e-12);
  for (double z : tb.projections(x)) EXPECT_GE(z, 0.0);
}

TEST(PairGradients, IdenticalSamplesAgree) {
  std::mt19937_64 rng(2);
  const auto tb = SoftmaxTestbed::random(5, 4, rng);
  const std::vector<double> x{1, -2, 0.5, 0.3, -0.7};
  const auto t = grad_true_pair(tb, x, x, 1), a = grad_approx_pair(tb, x, x, 1);
  EXPECT_EQ(t, a);
  const auto q = tb.probabilities(x);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(t[c * 5 + d], x[d] * (q[c] - (c == 1)), 1e-15);
}

TEST(PairGradients, SaturatedCorrectClassHasZeroGradient) {
  SoftmaxTestbed tb{2, 2, {1000, 0, 0, 0}};
  const std::vector<double> x{1, 1};
  ASSERT_EQ(tb.probabilities(x)[0], 1.0);
  const auto t = grad_true_pair(tb, x, x, 0);
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 0.0);
}

TEST(PairGradients, SymmetricPairApproximatesAtZero) {
  std::mt19937_64 rng(3);
  const auto tb = SoftmaxTestbed::random(4, 3, rng);
  const std::vector<double> x1{1, -2, 0.5, 3}, x2{-1, 2, -0.5, -3};
  for (double v : grad_approx_pair(tb, x1, x2, 2)) EXPECT_EQ(v, 0.0);
}

TEST(PairGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 2 + trial % 3, d = 1 + trial % 4;
    auto tb = positive_testbed(d, c, rng);
    const auto x1 = positive_vector(d, rng), x2 = positive_vector(d, rng);
    std::vector<double> m(d);
    for (std::size_t i = 0; i < d; ++i) m[i] = 0.5 * (x1[i] + x2[i]);
    const std::size_t y = trial % c;
    const auto nt = numeric_grad(tb, [&] { return 0.5 * (tb.loss(x1, y) + tb.loss(x2, y)); });
    const auto na = numeric_grad(tb, [&] { return tb.loss(m, y); });
    const auto t = grad_true_pair(tb, x1, x2, y), a = grad_approx_pair(tb, x1, x2, y);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_NEAR(t[i], nt[i], 1e-7);
      EXPECT_NEAR(a[i], na[i], 1e-7);
    }
  }
}

TEST(BoundCheck, IdenticalPairHoldsTrivially) {
  std::mt19937_64 rng(5);
  const auto tb = SoftmaxTestbed::random(8, 3, rng);
  std::vector<double> x(8, 0.4);
  const auto r = jensen_bound_check(tb, x, x, 0);
  EXPECT_TRUE(r.sign_agreement);
  EXPECT_TRUE(r.holds);
  for (double v : r.lhs) EXPECT_EQ(v, 0.0);
  for (double v : r.rhs) EXPECT_EQ(v, 0.0);
}

TEST(BoundCheck, SampledPairsAgreeInSign) {
  std::mt19937_64 rng(6);
  const auto tb = SoftmaxTestbed::random(16, 4, rng);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x1, x2;
    if (!sample_sign_agreeing_pair(tb, rng, x1, x2)) continue;
    const auto r = jensen_bound_check(tb, x1, x2, 0);
    EXPECT_TRUE(r.sign_agreement);
    // holds must be exactly the elementwise comparison.
    bool all = true;
    for (std::size_t i = 0; i < r.lhs.size(); ++i) all = all && r.lhs[i] <= r.rhs[i] + 1e-9;
    EXPECT_EQ(r.holds, all);
  }
}

TEST(BoundCheck, SummaryAccounting) {
  const auto s = run_bound_checks(200, 16, 4, 7, 1e-9, 3);
  EXPECT_EQ(s.requested, 200u);
  EXPECT_EQ(s.sampled + s.rejected, 200u);
  EXPECT_LE(s.holds, s.sampled);
  EXPECT_LE(s.failures.size(), 3u);
  if (s.holds < s.sampled) {
    EXPECT_GT(s.worst_excess, 1e-9);
    EXPECT_FALSE(s.failures.empty());
  }
  const auto again = run_bound_checks(200, 16, 4, 7, 1e-9, 3);
  EXPECT_EQ(again.holds, s.holds);
}

TEST(Scatter, OneRowPerFramePair) {
  auto net = Backbone<double>::from_config(PipelineConfig::desk_scale(8, ClusteringMethod::kCumulative));
  net.initialize(3);
  std::mt19937_64 rng(8);
  auto video = fvar::testing::random_tensor({32, 3, 8, 8}, rng);
  std::copy(video.frame(0).begin(), video.frame(0).end(), video.frame(1).begin());
  const auto table = activation_gradient_scatter(net, video, 2);
  ASSERT_EQ(table.rows.size(), 496u);
  const auto& dup = table.rows[0];
  EXPECT_EQ(dup.i, 0u);
  EXPECT_EQ(dup.j, 1u);
  EXPECT_EQ(dup.euclid_act, 0.0);
  EXPECT_EQ(dup.hamming_act, 0u);
  EXPECT_EQ(dup.euclid_grad, 0.0);
  const auto csv = scatter_csv(table);
  EXPECT_EQ(csv.rfind("pair_i,pair_j,euclid_act,hamming_act,euclid_grad\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 497);
}

TEST(ClusterReport, SingletonsAreExact) {
  auto net = Backbone<double>::from_config(PipelineConfig::desk_scale(8, ClusteringMethod::kCumulative));
  net.initialize(4);
  std::mt19937_64 rng(9);
  const auto video = fvar::testing::random_tensor({8, 3, 8, 8}, rng);
  const auto r = cluster_gradient_report(net, video, 1, ClusteringMethod::kUniform, 8);
  ASSERT_EQ(r.distances.size(), 8u);
  for (double d : r.distances) EXPECT_LT(d, 1e-12);
}

TEST(ClusterReport, IdenticalFramesAreExactForEveryMethod) {
  auto net = Backbone<double>::from_config(PipelineConfig::desk_scale(8, ClusteringMethod::kCumulative));
  net.initialize(5);
  std::mt19937_64 rng(10);
  const auto video = pad_frames(fvar::testing::random_tensor({1, 3, 8, 8}, rng), 12);
  for (auto m : {ClusteringMethod::kCumulative, ClusteringMethod::kSlope, ClusteringMethod::kUniform}) {
    const auto r = cluster_gradient_report(net, video, 0, m, 4);
    for (double d : r.distances) EXPECT_LT(d, 1e-10) << to_string(m);
    EXPECT_EQ(r.distances.size(), r.cluster_sizes.size());
  }
  std::vector<GradientReport> reports{cluster_gradient_report(net, video, 0, ClusteringMethod::kUniform, 4)};
  const auto csv = gradient_report_csv(reports);
  EXPECT_EQ(csv.rfind("cluster_id,method,distance\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(ClusterReport, MixedClustersDeviate) {
  auto net = Backbone<double>::from_config(PipelineConfig::desk_scale(8, ClusteringMethod::kCumulative));
  net.initialize(6);
  std::mt19937_64 rng(11);
  const auto video = fvar::testing::random_tensor({8, 3, 8, 8}, rng);
  const auto r = cluster_gradient_report(net, video, 0, ClusteringMethod::kUniform, 2);
  EXPECT_EQ(r.cluster_sizes, (std::vector<std::size_t>{4, 4}));
  EXPECT_GT(r.max, 0.0);
  EXPECT_GE(r.max, r.mean);
}
