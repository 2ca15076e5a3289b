#include "fvar/clustering.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fvar {

std::string_view to_string(ClusteringMethod m) {
  switch (m) {
    case ClusteringMethod::kNone: return "none";
    case ClusteringMethod::kCumulative: return "cumulative";
    case ClusteringMethod::kSlope: return "slope";
    case ClusteringMethod::kUniform: return "uniform";
  }
  return "unknown";
}

ClusteringMethod clustering_method_from_string(std::string_view name) {
  for (auto m : {ClusteringMethod::kNone, ClusteringMethod::kCumulative, ClusteringMethod::kSlope,
                 ClusteringMethod::kUniform}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown clustering method '" + std::string(name) + "'");
}

CumulativeProfile CumulativeProfile::from_distances(std::span<const std::uint64_t> distances) {
  CumulativeProfile p;
  p.adjacent.assign(distances.begin(), distances.end());
  p.cumulative.resize(distances.size() + 1, 0);
  for (std::size_t i = 0; i < distances.size(); ++i) p.cumulative[i + 1] = p.cumulative[i] + distances[i];
  return p;
}

std::vector<std::pair<std::size_t, std::size_t>> ClusterAssignment::segments() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (auto b : boundaries) {
    out.emplace_back(begin, b);
    begin = b;
  }
  out.emplace_back(begin, ids.size());
  return out;
}

ClusterAssignment ClusterAssignment::from_ids(std::vector<std::uint32_t> ids, std::uint32_t g) {
  if (ids.empty()) throw std::invalid_argument("cluster assignment: no frames");
  ClusterAssignment a;
  a.g = g;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] < ids[i - 1]) throw std::invalid_argument("cluster assignment: ids must be non-decreasing");
    if (ids[i] != ids[i - 1]) a.boundaries.push_back(i);
  }
  if (ids.front() != 1 || ids.back() > g) throw std::invalid_argument("cluster assignment: ids must lie in [1, g] starting at 1");
  a.ids = std::move(ids);
  return a;
}

CumulativeProfile cumulative_profile(std::span<const Signature> frames) {
  if (frames.empty()) throw std::invalid_argument("cumulative_profile: no frames");
  std::vector<std::uint64_t> d;
  d.reserve(frames.size() - 1);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) d.push_back(hamming(frames[i], frames[i + 1]));
  return CumulativeProfile::from_distances(d);
}

namespace {
void require_g(std::uint32_t g) {
  if (g < 1) throw std::invalid_argument("clustering: g must be at least 1");
}
}  // namespace

ClusterAssignment cumulative_cluster(const CumulativeProfile& profile, std::uint32_t g) {
  require_g(g);
  const std::size_t n = profile.frames();
  if (n == 0) throw std::invalid_argument("cumulative_cluster: empty profile");
  std::vector<std::uint32_t> ids(n, 1);
  const std::uint64_t total = profile.total();
  if (total > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      // Exact integer ceil(g * C_i / C_N); frame 0 (C = 0) is clamped to 1.
      const std::uint64_t num = static_cast<std::uint64_t>(g) * profile.cumulative[i];
      const auto id = static_cast<std::uint32_t>((num + total - 1) / total);
      ids[i] = std::max<std::uint32_t>(1, id);
    }
  }
  return ClusterAssignment::from_ids(std::move(ids), g);
}

ClusterAssignment slope_cluster(const CumulativeProfile& profile, std::uint32_t g) {
  require_g(g);
  const std::size_t n = profile.frames();
  if (n == 0) throw std::invalid_argument("slope_cluster: empty profile");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < profile.adjacent.size(); ++i) {
    if (profile.adjacent[i] > 0) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return profile.adjacent[a] > profile.adjacent[b]; });
  candidates.resize(std::min<std::size_t>(candidates.size(), g - 1));
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::uint32_t> ids(n, 1);
  std::uint32_t id = 1;
  std::size_t next = 0;
  for (std::size_t i = 1; i < n; ++i) {
    // Distance index i-1 sits between frames i-1 and i.
    if (next < candidates.size() && candidates[next] == i - 1) {
      ++id;
      ++next;
    }
    ids[i] = id;
  }
  return ClusterAssignment::from_ids(std::move(ids), g);
}

ClusterAssignment uniform_cluster(std::size_t n_frames, std::uint32_t g) {
  require_g(g);
  if (n_frames == 0) throw std::invalid_argument("uniform_cluster: no frames");
  const std::size_t k = std::min<std::size_t>(g, n_frames);
  const std::size_t base = n_frames / k, extra = n_frames % k;
  std::vector<std::uint32_t> ids;
  ids.reserve(n_frames);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t size = base + (c < extra ? 1 : 0);
    ids.insert(ids.end(), size, static_cast<std::uint32_t>(c + 1));
  }
  return ClusterAssignment::from_ids(std::move(ids), g);
}

ClusterAssignment assign_clusters(ClusteringMethod method, std::span<const Signature> frames, std::uint32_t g) {
  switch (method) {
    case ClusteringMethod::kCumulative: return cumulative_cluster(cumulative_profile(frames), g);
    case ClusteringMethod::kSlope: return slope_cluster(cumulative_profile(frames), g);
    case ClusteringMethod::kUniform: return uniform_cluster(frames.size(), g);
    case ClusteringMethod::kNone: {
      std::vector<std::uint32_t> ids(frames.size());
      std::iota(ids.begin(), ids.end(), 1u);
      return ClusterAssignment::from_ids(std::move(ids), static_cast<std::uint32_t>(frames.size()));
    }
  }
  throw std::invalid_argument("assign_clusters: unknown method");
}

std::string assignments_csv(std::span<const AssignmentRecord> records) {
  std::string out = "epoch,video_id,frame_index,cluster_id\n";
  for (const auto& r : records) {
    for (std::size_t f = 0; f < r.assignment.ids.size(); ++f) {
      out += std::to_string(r.epoch) + ',' + std::to_string(r.video_id) + ',' + std::to_string(f) + ',' +
             std::to_string(r.assignment.ids[f]) + '\n';
    }
  }
  return out;
}

}  // namespace fvar
