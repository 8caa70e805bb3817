#include "mstdp/geo_graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

namespace mstdp {

using ordered_json = nlohmann::ordered_json;

std::int64_t FlowEdge::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

void HeteroGraph::validate() const {
  if (n_cells <= 0 || n_admins <= 0) throw ContractError("graph: empty node sets");
  auto check_pairs = [&](const std::vector<std::pair<int, int>>& pairs, int lo_max, int hi_max,
                         bool strict, const char* what) {
    for (auto [a, b] : pairs) {
      if (a < 0 || a >= lo_max || b < 0 || b >= hi_max)
        throw ContractError(std::string("graph: ") + what + " id out of range");
      if (strict && a >= b)
        throw ContractError(std::string("graph: ") + what + " pair not ordered");
    }
  };
  check_pairs(cell_adj, n_cells, n_cells, true, "cell_adj");
  check_pairs(admin_adj, n_admins, n_admins, true, "admin_adj");
  check_pairs(inclusion, n_cells, n_admins, false, "inclusion");
  for (const auto& e : cell_flow) {
    if (e.src < 0 || e.src >= n_cells || e.dst < 0 || e.dst >= n_cells)
      throw ContractError("graph: cell_flow id out of range");
    if (e.src == e.dst) throw ContractError("graph: cell_flow self edge");
  }
  for (const auto& e : admin_flow)
    if (e.src < 0 || e.src >= n_admins || e.dst < 0 || e.dst >= n_admins)
      throw ContractError("graph: admin_flow id out of range");
}

std::vector<std::pair<int, int>> build_cell_adjacency(const CityGrid& grid, double threshold_km) {
  if (threshold_km <= 0) throw ContractError("adjacency: non-positive threshold");
  std::vector<std::pair<int, int>> out;
  // Candidate window: the threshold in cell units bounds the row/col offset.
  int reach = static_cast<int>(threshold_km / grid.cell_size_km) + 1;
  for (CellId a = 0; a < grid.n_cells(); ++a) {
    int ra = grid.row(a), ca = grid.col(a);
    for (int dr = -reach; dr <= reach; ++dr) {
      int rb = ra + dr;
      if (rb < 0 || rb >= grid.height) continue;
      for (int dc = -reach; dc <= reach; ++dc) {
        int cb = ca + dc;
        if (cb < 0 || cb >= grid.width) continue;
        CellId b = grid.cell_at(rb, cb);
        if (b <= a) continue;
        if (grid.distance_km(a, b) <= threshold_km) out.emplace_back(a, b);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<int, int>> build_admin_adjacency(const CityGrid& grid) {
  std::set<std::pair<int, int>> found;
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      AdminId here = grid.admin_of(grid.cell_at(r, c));
      if (c + 1 < grid.width) {
        AdminId right = grid.admin_of(grid.cell_at(r, c + 1));
        if (right != here) found.emplace(std::min(here, right), std::max(here, right));
      }
      if (r + 1 < grid.height) {
        AdminId down = grid.admin_of(grid.cell_at(r + 1, c));
        if (down != here) found.emplace(std::min(here, down), std::max(here, down));
      }
    }
  }
  return {found.begin(), found.end()};
}

std::vector<std::pair<int, int>> build_inclusion(const CityGrid& grid) {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(grid.n_cells()));
  for (CellId c = 0; c < grid.n_cells(); ++c) out.emplace_back(c, grid.admin_of(c));
  return out;
}

namespace {

int hour_of_slot(int slot, int T) { return slot * 24 / T; }

std::vector<FlowEdge> flow_map_to_edges(const std::map<std::pair<int, int>,
                                                       std::array<std::int64_t, 24>>& acc) {
  std::vector<FlowEdge> out;
  out.reserve(acc.size());
  for (const auto& [key, counts] : acc) {
    FlowEdge e;
    e.src = key.first;
    e.dst = key.second;
    e.counts = counts;
    out.push_back(e);
  }
  return out;
}

} // namespace

std::vector<FlowEdge> build_cell_flow(const Histories& histories, DayRange days, int T) {
  std::map<std::pair<int, int>, std::array<std::int64_t, 24>> acc;
  for (const auto& [user, hist] : histories) {
    for (const auto& [day, traj] : hist.days) {
      if (!days.contains(day)) continue;
      for (int s = 0; s + 1 < T; ++s) {
        CellId p = traj.slots[static_cast<std::size_t>(s)];
        CellId q = traj.slots[static_cast<std::size_t>(s + 1)];
        if (p == q) continue;
        acc[{p, q}][static_cast<std::size_t>(hour_of_slot(s, T))] += 1;
      }
    }
  }
  return flow_map_to_edges(acc);
}

std::vector<FlowEdge> aggregate_admin_flow(const std::vector<FlowEdge>& cell_flow,
                                           const CityGrid& grid) {
  std::map<std::pair<int, int>, std::array<std::int64_t, 24>> acc;
  for (const auto& e : cell_flow) {
    AdminId pa = grid.admin_of(e.src);
    AdminId qa = grid.admin_of(e.dst);
    auto& counts = acc[{pa, qa}];
    for (std::size_t h = 0; h < 24; ++h) counts[h] += e.counts[h];
  }
  return flow_map_to_edges(acc);
}

NodeFeatures build_features(const Histories& histories, DayRange days, const CityGrid& grid,
                            int T) {
  NodeFeatures f;
  f.cell_occupancy.assign(static_cast<std::size_t>(grid.n_cells()), {});
  f.admin_occupancy.assign(static_cast<std::size_t>(grid.n_admins), {});
  for (const auto& [user, hist] : histories) {
    for (const auto& [day, traj] : hist.days) {
      if (!days.contains(day)) continue;
      for (int s = 0; s < T; ++s) {
        CellId c = traj.slots[static_cast<std::size_t>(s)];
        std::size_t h = static_cast<std::size_t>(hour_of_slot(s, T));
        f.cell_occupancy[static_cast<std::size_t>(c)][h] += 1;
        f.admin_occupancy[static_cast<std::size_t>(grid.admin_of(c))][h] += 1;
      }
    }
  }
  return f;
}

HeteroGraph build_graph(const CityGrid& grid, const Histories& histories, DayRange train_days,
                        int T, double adjacency_km) {
  HeteroGraph g;
  g.n_cells = grid.n_cells();
  g.n_admins = grid.n_admins;
  g.cell_adj = build_cell_adjacency(grid, adjacency_km);
  g.admin_adj = build_admin_adjacency(grid);
  g.inclusion = build_inclusion(grid);
  g.cell_flow = build_cell_flow(histories, train_days, T);
  g.admin_flow = aggregate_admin_flow(g.cell_flow, grid);
  g.validate();
  return g;
}

void save_graph(const HeteroGraph& g, const NodeFeatures& f, const std::filesystem::path& file) {
  g.validate();
  ordered_json j;
  j["n_cells"] = g.n_cells;
  j["n_admins"] = g.n_admins;
  auto pairs = [](const std::vector<std::pair<int, int>>& v) {
    ordered_json arr = ordered_json::array();
    for (auto [a, b] : v) arr.push_back({a, b});
    return arr;
  };
  j["cell_adj"] = pairs(g.cell_adj);
  j["admin_adj"] = pairs(g.admin_adj);
  j["inclusion"] = pairs(g.inclusion);
  auto flows = [](const std::vector<FlowEdge>& v) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : v) {
      ordered_json o;
      o["src"] = e.src;
      o["dst"] = e.dst;
      o["counts"] = e.counts;
      arr.push_back(o);
    }
    return arr;
  };
  j["cell_flow"] = flows(g.cell_flow);
  j["admin_flow"] = flows(g.admin_flow);
  auto occ = [](const std::vector<std::array<std::int64_t, 24>>& v) {
    ordered_json arr = ordered_json::array();
    for (const auto& row : v) arr.push_back(row);
    return arr;
  };
  j["cell_occupancy"] = occ(f.cell_occupancy);
  j["admin_occupancy"] = occ(f.admin_occupancy);
  std::ofstream out(file);
  if (!out) throw ContractError("graph: cannot write " + file.string());
  out << j.dump() << "\n";
}

std::pair<HeteroGraph, NodeFeatures> load_graph(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ContractError("graph: cannot open " + file.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ContractError("graph: bad json: " + std::string(e.what()));
  }
  HeteroGraph g;
  NodeFeatures f;
  try {
    g.n_cells = j.at("n_cells").get<int>();
    g.n_admins = j.at("n_admins").get<int>();
    auto pairs = [&](const char* key) {
      std::vector<std::pair<int, int>> v;
      for (const auto& p : j.at(key)) v.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      return v;
    };
    g.cell_adj = pairs("cell_adj");
    g.admin_adj = pairs("admin_adj");
    g.inclusion = pairs("inclusion");
    auto flows = [&](const char* key) {
      std::vector<FlowEdge> v;
      for (const auto& o : j.at(key)) {
        FlowEdge e;
        e.src = o.at("src").get<int>();
        e.dst = o.at("dst").get<int>();
        e.counts = o.at("counts").get<std::array<std::int64_t, 24>>();
        v.push_back(e);
      }
      return v;
    };
    g.cell_flow = flows("cell_flow");
    g.admin_flow = flows("admin_flow");
    auto occ = [&](const char* key) {
      std::vector<std::array<std::int64_t, 24>> v;
      for (const auto& row : j.at(key)) v.push_back(row.get<std::array<std::int64_t, 24>>());
      return v;
    };
    f.cell_occupancy = occ("cell_occupancy");
    f.admin_occupancy = occ("admin_occupancy");
  } catch (const ContractError&) {
    throw;
  } catch (const std::exception& e) {
    throw ContractError("graph: missing or bad field: " + std::string(e.what()));
  }
  if (f.cell_occupancy.size() != static_cast<std::size_t>(g.n_cells) ||
      f.admin_occupancy.size() != static_cast<std::size_t>(g.n_admins))
    throw ContractError("graph: occupancy size mismatch");
  g.validate();
  return {std::move(g), std::move(f)};
}

} // namespace mstdp
