#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mstdp/dataset.hpp"
#include "mstdp/grid.hpp"

namespace mstdp {

// Habitual anchor locations and behaviour mix of one synthetic agent.
struct AgentProfile {
  UserId user = 0;
  CellId home = 0;
  CellId work = 0;
  CellId other = 0;   // occasional weekday third place
  CellId leisure = 0; // weekend outing place
  std::array<double, 3> weekday_mix{0.6, 0.3, 0.1}; // commute / errand / stay-home
  std::array<double, 2> weekend_mix{0.5, 0.5};      // outing / stay-home
  double noise_rate = 0.05; // per-slot chance of a random nearby excursion
};

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_agents = 200;
  int n_days = 28;
  int T = 24;
  int grid_width = 20;
  int grid_height = 20;
  int n_admins = 16;
  int epoch_weekday = 0;
  double noise_rate = 0.05;
  std::array<double, 3> weekday_mix{0.6, 0.3, 0.1};
  std::array<double, 2> weekend_mix{0.5, 0.5};
};

// Grid with admin regions laid out as contiguous rectangles. Throws
// ContractError if n_admins cannot tile the grid.
CityGrid generate_city(int width, int height, int n_admins, std::uint64_t seed);

std::vector<AgentProfile> generate_population(const CityGrid& grid, const SynthConfig& cfg);

// Day-by-day realization: each day an activity template is drawn from the
// agent's weekday or weekend mix, then per-slot excursion noise is applied.
Histories generate_trajectories(const CityGrid& grid, const std::vector<AgentProfile>& agents,
                                const SynthConfig& cfg);

// Residents per admin region: home-cell counts times multiplier.
std::vector<std::int64_t> census_by_admin(const CityGrid& grid,
                                          const std::vector<AgentProfile>& agents,
                                          std::int64_t multiplier);

// Full pipeline: city, population, trajectories, 6:1:3 split.
Dataset synthesize(const SynthConfig& cfg);

} // namespace mstdp
