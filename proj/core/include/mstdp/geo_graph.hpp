#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "mstdp/dataset.hpp"
#include "mstdp/grid.hpp"

namespace mstdp {

// Directed movement edge with hourly transition counts. counts[h] is the
// number of observed departures src -> dst during hour h.
struct FlowEdge {
  int src = 0;
  int dst = 0;
  std::array<std::int64_t, 24> counts{};

  std::int64_t total() const;
};

// Two-level heterogeneous graph over grid cells and admin regions.
// Undirected structural edges are stored once with first < second; flow
// edges are directed and sparse (zero-count pairs are absent). Self flow
// edges (p == p) are kept: they carry stay-put mass at admin level.
struct HeteroGraph {
  int n_cells = 0;
  int n_admins = 0;
  std::vector<std::pair<int, int>> cell_adj;   // centroid distance <= threshold
  std::vector<std::pair<int, int>> admin_adj;  // share a grid edge
  std::vector<std::pair<int, int>> inclusion;  // (cell, admin)
  std::vector<FlowEdge> cell_flow;
  std::vector<FlowEdge> admin_flow;

  int n_nodes() const { return n_cells + n_admins; }
  void validate() const;
};

// Hourly occupancy per region, counted over the same day range as the flows.
struct NodeFeatures {
  std::vector<std::array<std::int64_t, 24>> cell_occupancy;
  std::vector<std::array<std::int64_t, 24>> admin_occupancy;
};

// Cell pairs whose centroids are within threshold_km (excluding self),
// each pair once, ordered, sorted.
std::vector<std::pair<int, int>> build_cell_adjacency(const CityGrid& grid, double threshold_km);

// Admin pairs that share at least one grid cell border.
std::vector<std::pair<int, int>> build_admin_adjacency(const CityGrid& grid);

std::vector<std::pair<int, int>> build_inclusion(const CityGrid& grid);

// Transition counts between consecutive slots of each trajectory within
// `days`, at cell granularity. Hour of a transition is the hour of its
// departure slot. Stay-put transitions (p == q) are not counted at cell
// level.
std::vector<FlowEdge> build_cell_flow(const Histories& histories, DayRange days, int T);

// Projects cell flows onto admin regions; admin self-flows are kept.
std::vector<FlowEdge> aggregate_admin_flow(const std::vector<FlowEdge>& cell_flow,
                                           const CityGrid& grid);

NodeFeatures build_features(const Histories& histories, DayRange days, const CityGrid& grid,
                            int T);

// Full graph from the training portion of the data.
HeteroGraph build_graph(const CityGrid& grid, const Histories& histories, DayRange train_days,
                        int T, double adjacency_km = 2.0);

void save_graph(const HeteroGraph& g, const NodeFeatures& f, const std::filesystem::path& file);
std::pair<HeteroGraph, NodeFeatures> load_graph(const std::filesystem::path& file);

} // namespace mstdp
