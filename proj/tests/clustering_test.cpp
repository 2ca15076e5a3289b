#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fvar/clustering.h"

using namespace fvar;

namespace {

CumulativeProfile profile(std::vector<std::uint64_t> d) { return CumulativeProfile::from_distances(d); }

std::vector<std::size_t> sizes(const ClusterAssignment& a) {
  std::vector<std::size_t> out;
  for (auto [b, e] : a.segments()) out.push_back(e - b);
  return out;
}

void expect_valid(const ClusterAssignment& a, std::uint32_t g, std::size_t n) {
  ASSERT_EQ(a.ids.size(), n);
  EXPECT_EQ(a.ids.front(), 1u);
  EXPECT_LE(a.ids.back(), g);
  for (std::size_t i = 1; i < n; ++i) ASSERT_LE(a.ids[i - 1], a.ids[i]);
  std::vector<std::size_t> bounds;
  for (std::size_t i = 1; i < n; ++i)
    if (a.ids[i] != a.ids[i - 1]) bounds.push_back(i);
  EXPECT_EQ(a.boundaries, bounds);
  std::size_t covered = 0;
  for (auto [b, e] : a.segments()) {
    EXPECT_EQ(b, covered);
    covered = e;
  }
  EXPECT_EQ(covered, n);
}

Signature from_bits(const std::vector<int>& bits) {
  Signature s(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) s.set(i, bits[i]);
  return s;
}

}  // namespace

TEST(Profile, HandSummation) {
  const auto p = profile({1, 1, 1, 6, 1, 1, 6, 1, 1});
  EXPECT_EQ(p.cumulative, (std::vector<std::uint64_t>{0, 1, 2, 3, 9, 10, 11, 17, 18, 19}));
  EXPECT_EQ(p.total(), 19u);
  EXPECT_EQ(profile({}).cumulative, (std::vector<std::uint64_t>{0}));
}

TEST(Profile, FromSignatures) {
  std::vector<Signature> same(4, from_bits({1, 0, 1}));
  const auto p = cumulative_profile(same);
  EXPECT_EQ(p.adjacent, (std::vector<std::uint64_t>{0, 0, 0}));
  EXPECT_EQ(p.cumulative, (std::vector<std::uint64_t>{0, 0, 0, 0}));
  std::vector<Signature> varied{from_bits({1, 0, 1}), from_bits({0, 0, 1}), from_bits({0, 1, 0})};
  EXPECT_EQ(cumulative_profile(varied).adjacent, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_THROW(cumulative_profile(std::vector<Signature>{}), std::invalid_argument);
  std::vector<Signature> mixed{Signature(3), Signature(4)};
  EXPECT_THROW(cumulative_profile(mixed), std::invalid_argument);
}

TEST(Cumulative, ThreeClusterExample) {
  const auto a = cumulative_cluster(profile({1, 1, 1, 6, 1, 1, 6, 1, 1}), 3);
  EXPECT_EQ(a.ids, (std::vector<std::uint32_t>{1, 1, 1, 1, 2, 2, 2, 3, 3, 3}));
  EXPECT_EQ(sizes(a), (std::vector<std::size_t>{4, 3, 3}));
}

TEST(Cumulative, DegenerateCases) {
  const auto one = cumulative_cluster(profile({3, 1, 4}), 1);
  EXPECT_EQ(one.ids, (std::vector<std::uint32_t>(4, 1)));
  const auto flat = cumulative_cluster(profile({0, 0, 0}), 4);
  EXPECT_EQ(flat.ids, (std::vector<std::uint32_t>(4, 1)));
  EXPECT_EQ(flat.cluster_count(), 1u);
  EXPECT_THROW(cumulative_cluster(profile({1}), 0), std::invalid_argument);
}

TEST(Cumulative, GEqualsNWithPositiveDistances) {
  const auto a = cumulative_cluster(profile({5, 1, 1, 1, 1, 1, 1}), 8);
  expect_valid(a, 8, 8);
  EXPECT_LE(a.cluster_count(), 8u);
}

TEST(Slope, TopTwoSlopesExample) {
  const auto a = slope_cluster(profile({1, 1, 1, 1, 1, 7, 2, 1, 1}), 3);
  EXPECT_EQ(sizes(a), (std::vector<std::size_t>{6, 1, 3}));
  EXPECT_EQ(a.ids, (std::vector<std::uint32_t>{1, 1, 1, 1, 1, 1, 2, 3, 3, 3}));
}

TEST(Slope, TiesGoToEarlierFrames) {
  const auto a = slope_cluster(profile({2, 2, 2, 2, 2}), 3);
  EXPECT_EQ(a.boundaries, (std::vector<std::size_t>{1, 2}));
  const auto zero = slope_cluster(profile({0, 0, 0}), 3);
  EXPECT_EQ(zero.cluster_count(), 1u);
  EXPECT_EQ(*std::max_element(zero.ids.begin(), zero.ids.end()), 1u);
  const auto few = slope_cluster(profile({0, 4, 0, 0}), 4);
  EXPECT_EQ(few.cluster_count(), 2u);
  EXPECT_THROW(slope_cluster(profile({1}), 0), std::invalid_argument);
}

TEST(Uniform, BalancedSplits) {
  EXPECT_EQ(sizes(uniform_cluster(10, 3)), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(sizes(uniform_cluster(8, 8)), (std::vector<std::size_t>(8, 1)));
  EXPECT_EQ(sizes(uniform_cluster(32, 16)), (std::vector<std::size_t>(16, 2)));
  EXPECT_EQ(uniform_cluster(3, 5).cluster_count(), 3u);
}

TEST(Clustering, InvariantsOverRandomProfiles) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::uint32_t g = 1 + static_cast<std::uint32_t>(rng() % 40);
    std::vector<std::uint64_t> d(n - 1);
    const bool sparse = trial % 3 == 0;
    for (auto& v : d) v = sparse && rng() % 2 ? 0 : rng() % 50;
    const auto p = profile(d);

    const auto cum = cumulative_cluster(p, g);
    expect_valid(cum, g, n);
    for (std::size_t i = 0; i < n && p.total() > 0; ++i) {
      const double ci = static_cast<double>(p.cumulative[i]), cn = static_cast<double>(p.total());
      const std::uint32_t k = cum.ids[i];
      if (k >= 2) {
        ASSERT_GT(ci * g, (k - 1) * cn);
      }
      ASSERT_LE(ci * g, k * cn);
    }

    const auto slope = slope_cluster(p, g);
    expect_valid(slope, g, n);
    const std::size_t positive = static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](auto v) { return v > 0; }));
    EXPECT_EQ(slope.cluster_count(), std::min<std::size_t>(g, positive + 1));
    std::uint64_t min_chosen = UINT64_MAX, max_other = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const bool chosen = std::find(slope.boundaries.begin(), slope.boundaries.end(), i + 1) != slope.boundaries.end();
      if (chosen) min_chosen = std::min(min_chosen, d[i]);
      else max_other = std::max(max_other, d[i]);
    }
    if (!slope.boundaries.empty()) {
      ASSERT_GE(min_chosen, max_other);
    }

    const auto uni = uniform_cluster(n, g);
    expect_valid(uni, g, n);
    const auto s = sizes(uni);
    EXPECT_EQ(s.size(), std::min<std::size_t>(g, n));
    EXPECT_LE(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()), 1u);
    EXPECT_TRUE(std::is_sorted(s.rbegin(), s.rend()));
  }
}

// Rearranging bits identically in every frame keeps every adjacent distance,
// so the assignment must not move.
TEST(Clustering, DependsOnlyOnDistanceSequence) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t bits = 40, n = 12;
    std::vector<Signature> frames;
    for (std::size_t f = 0; f < n; ++f) {
      Signature s(bits);
      for (std::size_t i = 0; i < bits; ++i) s.set(i, rng() % 4 == 0);
      frames.push_back(s);
    }
    std::vector<std::size_t> perm(bits);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Signature> permuted;
    for (const auto& s : frames) {
      Signature t(bits);
      for (std::size_t i = 0; i < bits; ++i) t.set(perm[i], s.bit(i) != (i % 7 == 0));
      permuted.push_back(t);
    }
    for (auto m : {ClusteringMethod::kCumulative, ClusteringMethod::kSlope, ClusteringMethod::kUniform}) {
      EXPECT_EQ(assign_clusters(m, frames, 4).ids, assign_clusters(m, permuted, 4).ids);
    }
  }
}

TEST(Clustering, NoneGivesOneClusterPerFrame) {
  std::vector<Signature> frames(5, Signature(8));
  EXPECT_EQ(assign_clusters(ClusteringMethod::kNone, frames, 5).cluster_count(), 5u);
  EXPECT_EQ(clustering_method_from_string("slope"), ClusteringMethod::kSlope);
  EXPECT_THROW(clustering_method_from_string("kmeans"), std::invalid_argument);
}

TEST(Clustering, AssignmentCsv) {
  std::vector<AssignmentRecord> recs{{2, 7, ClusterAssignment::from_ids({1, 1, 2}, 2)}};
  EXPECT_EQ(assignments_csv(recs), "epoch,video_id,frame_index,cluster_id\n2,7,0,1\n2,7,1,1\n2,7,2,2\n");
  EXPECT_THROW(ClusterAssignment::from_ids({1, 3, 2}, 3), std::invalid_argument);
  EXPECT_THROW(ClusterAssignment::from_ids({2, 2}, 3), std::invalid_argument);
}
