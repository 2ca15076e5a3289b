#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fvar/flops.h"
#include "fvar/gradcheck.h"
#include "fvar/loss.h"
#include "fvar/pipeline.h"
#include "test_util.h"

using namespace fvar;
using fvar::testing::random_tensor;

namespace {

Backbone<double> small_net(std::uint64_t seed, bool shift = false) {
  auto net = Backbone<double>::from_config(PipelineConfig::desk_scale(4, ClusteringMethod::kCumulative, 4, shift));
  net.initialize(seed);
  return net;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Aggregate, TwoMapMean) {
  Tensor<double> maps({2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto b = aggregate(maps, ClusterAssignment::from_ids({1, 1}, 1), 1);
  EXPECT_EQ(b.activations.values(), (std::vector<double>{2, 3}));
  EXPECT_EQ(b.cluster_sizes, (std::vector<std::size_t>{2}));
}

TEST(Aggregate, IdenticalMembersAreExact) {
  std::mt19937_64 rng(1);
  const auto one = random_tensor({1, 2, 3, 3}, rng);
  Tensor<double> maps({5, 2, 3, 3});
  for (std::size_t f = 0; f < 5; ++f) std::copy(one.data().begin(), one.data().end(), maps.frame(f).begin());
  const auto b = aggregate(maps, ClusterAssignment::from_ids({1, 1, 1, 1, 1}, 3), 3);
  ASSERT_EQ(b.activations.dim(0), 3u);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(b.activations.frame(k)[i], one[i]);
}

TEST(Aggregate, MatchesScalarMeanOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto maps = random_tensor({32, 2, 3, 3}, rng);
    std::vector<std::uint64_t> d(31);
    for (auto& v : d) v = rng() % 20;
    const auto a = cumulative_cluster(CumulativeProfile::from_distances(d), 8);
    const auto b = aggregate(maps, a, 8);
    ASSERT_EQ(b.activations.shape(), (Shape{8, 2, 3, 3}));
    const auto segs = a.segments();
    for (std::size_t k = 0; k < 8; ++k) {
      const auto [beg, end] = segs[std::min(k, segs.size() - 1)];
      for (std::size_t i = 0; i < maps.frame_size(); ++i) {
        double s = 0;
        for (std::size_t f = beg; f < end; ++f) s += maps.frame(f)[i];
        ASSERT_NEAR(b.activations.frame(k)[i], s / static_cast<double>(end - beg), 1e-12);
      }
    }
  }
}

TEST(Aggregate, LinearAndPermutationInvariant) {
  std::mt19937_64 rng(3);
  const auto A = random_tensor({12, 3, 2, 2}, rng), B = random_tensor({12, 3, 2, 2}, rng);
  const auto assign = uniform_cluster(12, 4);
  const double alpha = 0.7, beta = -1.3;
  Tensor<double> mix(A.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * A[i] + beta * B[i];
  const auto lhs = aggregate(mix, assign, 4).activations;
  const auto ra = aggregate(A, assign, 4).activations, rb = aggregate(B, assign, 4).activations;
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * ra[i] + beta * rb[i], 1e-12);

  // Reverse the frames inside every cluster.
  Tensor<double> permuted(A.shape());
  for (auto [beg, end] : assign.segments())
    for (std::size_t f = beg; f < end; ++f) {
      const auto src = A.frame(beg + end - 1 - f);
      std::copy(src.begin(), src.end(), permuted.frame(f).begin());
    }
  const auto rp = aggregate(permuted, assign, 4).activations;
  for (std::size_t i = 0; i < rp.size(); ++i) EXPECT_NEAR(rp[i], ra[i], 1e-12);
}

TEST(Aggregate, BackwardIsTheAdjoint) {
  std::mt19937_64 rng(4);
  const auto A = random_tensor({9, 2, 2, 2}, rng);
  // Two real clusters padded to four positions.
  const auto assign = ClusterAssignment::from_ids({1, 1, 1, 1, 3, 3, 3, 3, 3}, 4);
  const auto b = aggregate(A, assign, 4);
  ASSERT_EQ(b.activations.dim(0), 4u);
  const auto G = random_tensor(b.activations.shape(), rng);
  const auto back = aggregate_backward(G, b, A.shape());
  EXPECT_NEAR(dot(b.activations, G), dot(A, back), 1e-10);
  EXPECT_THROW(aggregate(A, uniform_cluster(8, 4), 4), std::invalid_argument);
}

TEST(Loss, ClosedFormCases) {
  Tensor<double> one({1, 3}, std::vector<double>{0.2, 1.5, -0.4});
  const double lse = std::log(std::exp(0.2) + std::exp(1.5) + std::exp(-0.4));
  EXPECT_NEAR(cross_entropy(one, 1), lse - 1.5, 1e-12);
  EXPECT_EQ(cross_entropy(Tensor<double>({1, 3}, std::vector<double>{1000, 0, 0}), 0), 0.0);
  EXPECT_NEAR(cross_entropy(Tensor<double>({4, 5}, 0.3), 2), std::log(5.0), 1e-12);
  EXPECT_THROW(cross_entropy(one, 3), std::out_of_range);
}

TEST(Loss, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(5);
  const auto p = softmax_rows(random_tensor({6, 4}, rng, 10.0));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += p[r * 4 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, SingletonClustersReproduceTheFullPass) {
  auto net = small_net(6);
  std::mt19937_64 rng(6);
  const auto video = random_tensor({8, 3, 8, 8}, rng);
  const auto full = forward_full(net, video, 2);
  for (auto m : {ClusteringMethod::kSlope, ClusteringMethod::kUniform}) {
    const auto c = forward_clustered(net, video, 2, m, 8);
    ASSERT_EQ(c.batch.cluster_sizes, std::vector<std::size_t>(8, 1));
    EXPECT_EQ(c.scores, full.scores);
    EXPECT_EQ(c.loss, full.loss);
    EXPECT_EQ(c.logits, full.logits);
  }
}

TEST(Forward, IdenticalFramesMatchOneFrame) {
  auto net = small_net(7);
  std::mt19937_64 rng(7);
  const auto frame = random_tensor({1, 3, 8, 8}, rng);
  const auto video = pad_frames(frame, 6);
  const auto single = forward_full(net, frame, 1);
  for (std::uint32_t g : {1u, 3u, 6u}) {
    const auto c = forward_clustered(net, video, 1, ClusteringMethod::kCumulative, g);
    EXPECT_EQ(c.batch.cluster_sizes, std::vector<std::size_t>{6});
    ASSERT_EQ(c.logits.dim(0), g);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(c.scores[k], single.scores[k], 1e-12);
    EXPECT_NEAR(c.loss, single.loss, 1e-12);
  }
}

TEST(Forward, ScoresShapeAndNormalisation) {
  auto net = small_net(8);
  std::mt19937_64 rng(8);
  const auto video = random_tensor({16, 3, 8, 8}, rng);
  const auto c = forward_clustered(net, video, 0, ClusteringMethod::kCumulative, 4);
  ASSERT_EQ(c.scores.size(), 4u);
  const auto p = softmax_rows(Tensor<double>({1, 4}, c.scores));
  EXPECT_NEAR(p[0] + p[1] + p[2] + p[3], 1.0, 1e-6);
}

TEST(Forward, StoredFramesAreGVersusN) {
  auto net = small_net(9);
  std::mt19937_64 rng(9);
  const auto video = random_tensor({32, 3, 8, 8}, rng);
  EXPECT_EQ(forward_full(net, video, 0).rest_tape.stored_frames(), 32u);
  for (std::uint32_t g : {1u, 4u, 16u})
    EXPECT_EQ(forward_clustered(net, video, 0, ClusteringMethod::kCumulative, g).rest_tape.stored_frames(), g);
}

// End-to-end gradient through block 1, aggregation (with padding) and the
// remaining blocks, against central differences. Uniform grouping keeps the
// assignment fixed while parameters are probed.
TEST(Backward, ClusteredPipelineFiniteDifference) {
  for (bool shift : {false, true}) {
    auto net = small_net(10, shift);
    std::mt19937_64 rng(10);
    const auto video = random_tensor({10, 3, 6, 6}, rng);
    for (std::uint32_t g : {3u, 12u}) {
      const auto run = [&] { return forward_clustered(net, video, 3, ClusteringMethod::kUniform, g); };
      auto pass = run();
      const auto grads = backward(net, pass);
      const auto report = check_gradients(net.parameters(), grads.params, [&] { return run().loss; }, 1e-4);
      EXPECT_TRUE(report.pass) << "g=" << g << " shift=" << shift << ": " << report.message;
    }
  }
}

TEST(Backward, FullPassFiniteDifference) {
  auto net = small_net(11, true);
  std::mt19937_64 rng(11);
  const auto video = random_tensor({5, 3, 6, 6}, rng);
  auto pass = forward_full(net, video, 0);
  const auto grads = backward(net, pass);
  const auto report =
      check_gradients(net.parameters(), grads.params, [&] { return forward_full(net, video, 0).loss; }, 1e-4);
  EXPECT_TRUE(report.pass) << report.message;
}

TEST(PadVideo, RepeatsTheLastFrame) {
  std::vector<int> v(30);
  std::iota(v.begin(), v.end(), 1);
  const auto p = pad_video(v, 32);
  ASSERT_EQ(p.size(), 32u);
  EXPECT_EQ(p[30], 30);
  EXPECT_EQ(p[31], 30);
  EXPECT_EQ(pad_video(v, 30), v);
  EXPECT_EQ(pad_video(std::vector<int>{7}, 4), (std::vector<int>{7, 7, 7, 7}));
  EXPECT_THROW(pad_video(v, 29), std::invalid_argument);
  EXPECT_THROW(pad_video(std::vector<int>{}, 3), std::invalid_argument);
}

TEST(Sampling, OneFramePerSegment) {
  const auto centred = sample_frame_indices(32, 8, nullptr);
  ASSERT_EQ(centred.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GE(centred[k], 4 * k);
    EXPECT_LT(centred[k], 4 * k + 4);
  }
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto r = sample_frame_indices(32, 8, &rng);
    for (std::size_t k = 0; k < 8; ++k) ASSERT_EQ(r[k] / 4, k);
  }
}

TEST(Config, Validation) {
  auto cfg = PipelineConfig::desk_scale(8, ClusteringMethod::kCumulative);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.positions(), 8u);
  cfg.g = 33;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.g = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  auto one_class = PipelineConfig::desk_scale(8, ClusteringMethod::kCumulative, 1);
  EXPECT_THROW(one_class.validate(), std::invalid_argument);
}

TEST(Flops, ClusteredIsBlockOneOnNPlusRestOnG) {
  for (std::uint32_t g : {2u, 8u, 32u}) {
    const auto cfg = PipelineConfig::desk_scale(g, ClusteringMethod::kSlope);
    const auto f = pipeline_flops(cfg);
    const auto mid = Sequential<float>(cfg.block1).output_shape({1, 3, 32, 32});
    const Shape mid_frame(mid.begin() + 1, mid.end());
    EXPECT_EQ(f.block1, count_flops(cfg.block1, cfg.frame_shape, 32).total);
    EXPECT_EQ(f.rest, count_flops(cfg.rest, mid_frame, g).total);
    EXPECT_EQ(f.total, f.block1 + f.rest);
  }
}
