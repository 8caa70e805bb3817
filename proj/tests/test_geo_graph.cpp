#include "doctest.h"

#include <filesystem>
#include <set>

#include "mstdp/geo_graph.hpp"
#include "mstdp/synth.hpp"

using namespace mstdp;

namespace {

DailyTrajectory make_day(UserId u, int d, int weekday, const std::vector<CellId>& slots) {
  DailyTrajectory day;
  day.user = u;
  day.day_index = d;
  day.weekday = weekday;
  day.slots = slots;
  return day;
}

} // namespace

TEST_CASE("cell adjacency matches an all-pairs distance scan") {
  CityGrid g = generate_city(5, 4, 4, 1);
  auto adj = build_cell_adjacency(g, 2.0);

  std::set<std::pair<int, int>> expect;
  for (CellId a = 0; a < g.n_cells(); ++a)
    for (CellId b = a + 1; b < g.n_cells(); ++b)
      if (g.distance_km(a, b) <= 2.0) expect.insert({a, b});

  std::set<std::pair<int, int>> got(adj.begin(), adj.end());
  CHECK(got == expect);
  CHECK(adj.size() == expect.size());
  // Stored once with the smaller id first, sorted.
  for (std::size_t i = 0; i + 1 < adj.size(); ++i) CHECK(adj[i] < adj[i + 1]);
  for (const auto& [a, b] : adj) CHECK(a < b);
}

TEST_CASE("admin adjacency wants a shared cell border, not a diagonal touch") {
  // 4x4 grid split into 2x2 admin quadrants.
  CityGrid g = generate_city(4, 4, 4, 1);
  // Quadrant layout: 0 | 1 over 2 | 3.
  auto adj = build_admin_adjacency(g);
  std::set<std::pair<int, int>> got(adj.begin(), adj.end());
  std::set<std::pair<int, int>> expect = {{0, 1}, {0, 2}, {1, 3}, {2, 3}};
  CHECK(got == expect); // no {0,3} or {1,2}: corners do not count
}

TEST_CASE("inclusion lists every cell exactly once with its own region") {
  CityGrid g = generate_city(6, 3, 3, 1);
  auto inc = build_inclusion(g);
  REQUIRE(inc.size() == static_cast<std::size_t>(g.n_cells()));
  std::set<int> seen;
  for (const auto& [cell, admin] : inc) {
    CHECK(admin == g.admin_of(cell));
    seen.insert(cell);
  }
  CHECK(seen.size() == inc.size());
}

TEST_CASE("flow edges count departures by hour and drop stay-puts") {
  CityGrid g = generate_city(4, 1, 2, 1); // cells 0,1 in admin 0; 2,3 in admin 1
  REQUIRE(g.admin_of(0) == 0);
  REQUIRE(g.admin_of(2) == 1);

  Histories hs;
  std::vector<CellId> slots(24, 0);
  slots[3] = 2; // 0 -> 2 departing slot 2, 2 -> 0 departing slot 3
  slots[10] = 1;
  slots[11] = 1; // 0 -> 1 at slot 9, 1 -> 0 at slot 11
  hs[1].user = 1;
  hs[1].days[0] = make_day(1, 0, 0, slots);
  // A second user repeating one transition: 0 -> 2 at slot 2.
  std::vector<CellId> slots2(24, 0);
  slots2[3] = 2;
  slots2[4] = 2;
  slots2[5] = 2; // returns 2 -> 0 departing slot 5
  hs[2].user = 2;
  hs[2].days[0] = make_day(2, 0, 0, slots2);

  auto flows = build_cell_flow(hs, {0, 1}, 24);
  auto find = [&](int s, int d) -> const FlowEdge* {
    for (const auto& e : flows)
      if (e.src == s && e.dst == d) return &e;
    return nullptr;
  };

  const FlowEdge* e02 = find(0, 2);
  REQUIRE(e02 != nullptr);
  CHECK(e02->counts[2] == 2); // both users depart 0 -> 2 during hour 2
  CHECK(e02->total() == 2);

  const FlowEdge* e20 = find(2, 0);
  REQUIRE(e20 != nullptr);
  CHECK(e20->counts[3] == 1);
  CHECK(e20->counts[5] == 1);

  const FlowEdge* e01 = find(0, 1);
  REQUIRE(e01 != nullptr);
  CHECK(e01->counts[9] == 1);
  CHECK(find(1, 0)->counts[11] == 1);

  for (const auto& e : flows) CHECK(e.src != e.dst); // no self flow at cell level

  // Admin projection keeps within-region churn as a self flow.
  auto admin = aggregate_admin_flow(flows, g);
  const FlowEdge* a00 = nullptr;
  const FlowEdge* a01 = nullptr;
  for (const auto& e : admin) {
    if (e.src == 0 && e.dst == 0) a00 = &e;
    if (e.src == 0 && e.dst == 1) a01 = &e;
  }
  REQUIRE(a00 != nullptr);
  CHECK(a00->counts[9] == 1);  // 0 -> 1 stays inside admin 0
  CHECK(a00->counts[11] == 1); // 1 -> 0 likewise
  REQUIRE(a01 != nullptr);
  CHECK(a01->counts[2] == 2);
}

TEST_CASE("half-hour slots fold into 24 hours") {
  CityGrid g = generate_city(2, 1, 1, 1);
  Histories hs;
  std::vector<CellId> slots(48, 0);
  slots[3] = 1; // departure at slot 2 -> hour 1
  hs[1].user = 1;
  hs[1].days[0] = make_day(1, 0, 0, slots);

  auto flows = build_cell_flow(hs, {0, 1}, 48);
  bool found = false;
  for (const auto& e : flows)
    if (e.src == 0 && e.dst == 1) {
      CHECK(e.counts[1] == 1); // slot 2 of 48 is hour 1
      found = true;
    }
  CHECK(found);
}

TEST_CASE("occupancy features count slot presence per hour") {
  CityGrid g = generate_city(2, 1, 1, 1);
  Histories hs;
  std::vector<CellId> slots(24, 0);
  slots[5] = 1;
  hs[1].user = 1;
  hs[1].days[0] = make_day(1, 0, 0, slots);

  NodeFeatures f = build_features(hs, {0, 1}, g, 24);
  REQUIRE(f.cell_occupancy.size() == 2);
  CHECK(f.cell_occupancy[0][0] == 1);
  CHECK(f.cell_occupancy[0][5] == 0);
  CHECK(f.cell_occupancy[1][5] == 1);
  CHECK(f.admin_occupancy[0][5] == 1);
  CHECK(f.admin_occupancy[0][0] == 1);
}

TEST_CASE("graphs built from a corpus validate and round trip through disk") {
  SynthConfig cfg;
  cfg.n_agents = 8;
  cfg.n_days = 10;
  cfg.grid_width = 6;
  cfg.grid_height = 5;
  cfg.n_admins = 6;
  Dataset ds = synthesize(cfg);

  HeteroGraph g = build_graph(ds.grid, ds.histories, ds.split.train, ds.header.T);
  g.validate();
  CHECK(g.n_cells == 30);
  CHECK(g.n_admins == 6);
  CHECK(!g.cell_adj.empty());
  CHECK(!g.inclusion.empty());
  CHECK(!g.cell_flow.empty());

  NodeFeatures f = build_features(ds.histories, ds.split.train, ds.grid, ds.header.T);
  auto file = std::filesystem::temp_directory_path() / "mstdp_test_graph.json";
  save_graph(g, f, file);
  auto [g2, f2] = load_graph(file);
  std::filesystem::remove(file);

  CHECK(g2.n_cells == g.n_cells);
  CHECK(g2.cell_adj == g.cell_adj);
  CHECK(g2.admin_adj == g.admin_adj);
  CHECK(g2.inclusion == g.inclusion);
  REQUIRE(g2.cell_flow.size() == g.cell_flow.size());
  for (std::size_t i = 0; i < g.cell_flow.size(); ++i) {
    CHECK(g2.cell_flow[i].src == g.cell_flow[i].src);
    CHECK(g2.cell_flow[i].dst == g.cell_flow[i].dst);
    CHECK(g2.cell_flow[i].counts == g.cell_flow[i].counts);
  }
  CHECK(f2.cell_occupancy == f.cell_occupancy);
  CHECK(f2.admin_occupancy == f.admin_occupancy);
}

TEST_CASE("graph validation rejects self flows at cell level") {
  HeteroGraph g;
  g.n_cells = 2;
  g.n_admins = 1;
  g.inclusion = {{0, 0}, {1, 0}};
  FlowEdge e;
  e.src = 0;
  e.dst = 0;
  e.counts[0] = 1;
  g.cell_flow.push_back(e);
  CHECK_THROWS_AS(g.validate(), ContractError);
}
