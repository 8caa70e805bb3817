#pragma once

#include <compare>
#include <string>
#include <vector>

#include "mstdp/trajectory.hpp"

namespace mstdp {

// Daily mobility motif: the directed graph over the distinct places visited
// in one day, with an edge for each observed transition between two places.
// Node labels are canonical (isomorphic days produce identical ids) for days
// with up to kMaxExactMotifNodes distinct places; larger days fall into a
// single oversized bucket per node count, flagged non-canonical.
struct MotifId {
  int n_nodes = 0;
  std::vector<std::pair<int, int>> edges; // sorted, labels in [0, n_nodes)
  bool canonical = true;

  auto operator<=>(const MotifId&) const = default;
  std::string key() const;
};

inline constexpr int kMaxExactMotifNodes = 10;

MotifId extract_motif(const DailyTrajectory& day);

// Counts per motif, sorted by descending count (ties by id) for stable
// reporting.
std::vector<std::pair<MotifId, std::int64_t>> motif_distribution(
    const std::vector<const DailyTrajectory*>& days);

} // namespace mstdp
