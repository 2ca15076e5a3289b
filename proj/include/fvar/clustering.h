#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fvar/signature.h"

namespace fvar {

enum class ClusteringMethod { kNone, kCumulative, kSlope, kUniform };

std::string_view to_string(ClusteringMethod m);
ClusteringMethod clustering_method_from_string(std::string_view name);

// Running sum of adjacent-frame Hamming distances: C[0] = 0 and
// C[i] = d[0] + ... + d[i-1]. Indices are 0-based frames.
struct CumulativeProfile {
  std::vector<std::uint64_t> cumulative;
  std::vector<std::uint64_t> adjacent;

  std::size_t frames() const { return cumulative.size(); }
  std::uint64_t total() const { return cumulative.back(); }

  // Builds a profile straight from adjacent distances (n-1 entries for n frames).
  static CumulativeProfile from_distances(std::span<const std::uint64_t> distances);
};

// Per-frame cluster ids, non-decreasing, starting at 1, never above g. Ids
// may skip values when one adjacent step spans more than one segment.
struct ClusterAssignment {
  std::vector<std::uint32_t> ids;
  std::uint32_t g = 1;
  // 0-based frame indices where the id increments.
  std::vector<std::size_t> boundaries;

  std::size_t frames() const { return ids.size(); }
  std::size_t cluster_count() const { return boundaries.size() + 1; }
  // Frame ranges [begin, end) of each contiguous cluster, in temporal order.
  std::vector<std::pair<std::size_t, std::size_t>> segments() const;

  static ClusterAssignment from_ids(std::vector<std::uint32_t> ids, std::uint32_t g);
};

// Only neighbouring frames are compared: n-1 Hamming distances.
CumulativeProfile cumulative_profile(std::span<const Signature> frames);

// id(i) = max(1, ceil(g * C_i / C_N)); everything in cluster 1 when C_N = 0.
ClusterAssignment cumulative_cluster(const CumulativeProfile& profile, std::uint32_t g);

// Boundaries after the g-1 largest strictly positive adjacent distances,
// ties broken toward the earlier frame.
ClusterAssignment slope_cluster(const CumulativeProfile& profile, std::uint32_t g);

// Content-blind split into min(g, n) contiguous segments whose sizes differ
// by at most one; earlier segments take the extra frame.
ClusterAssignment uniform_cluster(std::size_t n_frames, std::uint32_t g);

// Dispatch on method; kNone yields one cluster per frame.
ClusterAssignment assign_clusters(ClusteringMethod method, std::span<const Signature> frames, std::uint32_t g);

// Rows "epoch,video_id,frame_index,cluster_id" (frame_index 0-based).
struct AssignmentRecord {
  std::size_t epoch = 0;
  std::size_t video_id = 0;
  ClusterAssignment assignment;
};
std::string assignments_csv(std::span<const AssignmentRecord> records);

}  // namespace fvar
