#include "doctest.h"

#include <numeric>

#include "mstdp/synth.hpp"

using namespace mstdp;

TEST_CASE("synthesis is a pure function of its config") {
  SynthConfig cfg;
  cfg.seed = 77;
  cfg.n_agents = 8;
  cfg.n_days = 10;
  cfg.grid_width = 6;
  cfg.grid_height = 6;
  cfg.n_admins = 4;

  Dataset a = synthesize(cfg);
  Dataset b = synthesize(cfg);
  REQUIRE(a.histories.size() == b.histories.size());
  for (const auto& [u, hist] : a.histories) {
    REQUIRE(b.histories.count(u) == 1);
    REQUIRE(b.histories.at(u).days.size() == hist.days.size());
    for (const auto& [d, day] : hist.days)
      CHECK(b.histories.at(u).days.at(d).slots == day.slots);
  }
  CHECK(a.grid.cell_admin == b.grid.cell_admin);

  SynthConfig other = cfg;
  other.seed = 78;
  Dataset c = synthesize(other);
  bool any_differs = false;
  for (const auto& [u, hist] : a.histories)
    for (const auto& [d, day] : hist.days)
      if (c.histories.at(u).days.at(d).slots != day.slots) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("every generated day is a valid trajectory") {
  SynthConfig cfg;
  cfg.n_agents = 10;
  cfg.n_days = 12;
  cfg.grid_width = 8;
  cfg.grid_height = 5;
  cfg.n_admins = 4;
  Dataset ds = synthesize(cfg);

  REQUIRE(ds.histories.size() == 10);
  for (const auto& [u, hist] : ds.histories) {
    REQUIRE(hist.days.size() == 12);
    for (const auto& [d, day] : hist.days) {
      validate_trajectory(day, cfg.T, ds.grid.n_cells());
      CHECK(day.weekday == ds.header.weekday_of(d));
      CHECK(day.user == u);
      CHECK(!day.predicted);
    }
  }
}

TEST_CASE("agents anchor near home and noise-free commuters follow the template") {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.n_agents = 12;
  cfg.n_days = 14;
  cfg.grid_width = 10;
  cfg.grid_height = 10;
  cfg.n_admins = 4;
  cfg.noise_rate = 0.0;
  cfg.weekday_mix = {1.0, 0.0, 0.0}; // always commute
  cfg.weekend_mix = {0.0, 1.0};      // always stay home

  CityGrid grid = generate_city(cfg.grid_width, cfg.grid_height, cfg.n_admins, cfg.seed);
  auto agents = generate_population(grid, cfg);
  REQUIRE(agents.size() == 12);
  for (const auto& a : agents) {
    CHECK(a.work != a.home);
    CHECK(grid.distance_km(a.home, a.work) <= 10.0);
    CHECK(grid.distance_km(a.home, a.other) <= 5.0);
    CHECK(grid.distance_km(a.home, a.leisure) <= 5.0);
  }

  Histories hs = generate_trajectories(grid, agents, cfg);
  for (const auto& [u, hist] : hs) {
    const AgentProfile& a = agents[static_cast<std::size_t>(u)];
    for (const auto& [d, day] : hist.days) {
      bool weekend = day.weekday >= 5;
      for (int s = 0; s < 24; ++s) {
        CellId expect = weekend          ? a.home
                        : (s >= 8 && s < 17) ? a.work
                                             : a.home;
        REQUIRE(day.slots[static_cast<std::size_t>(s)] == expect);
      }
    }
  }
}

TEST_CASE("census scales home counts by the multiplier") {
  SynthConfig cfg;
  cfg.n_agents = 9;
  cfg.grid_width = 6;
  cfg.grid_height = 6;
  cfg.n_admins = 4;
  CityGrid grid = generate_city(cfg.grid_width, cfg.grid_height, cfg.n_admins, cfg.seed);
  auto agents = generate_population(grid, cfg);

  auto census = census_by_admin(grid, agents, 50);
  REQUIRE(census.size() == 4);
  CHECK(std::accumulate(census.begin(), census.end(), std::int64_t{0}) == 9 * 50);
  for (const auto& a : agents) {
    // Each agent's home admin holds at least that agent's 50 residents.
    CHECK(census[static_cast<std::size_t>(grid.admin_of(a.home))] >= 50);
  }
}
