#include "mstdp/synth.hpp"

#include <algorithm>
#include <cmath>

#include "mstdp/rng.hpp"

namespace mstdp {

namespace {

// Activity templates as (start fraction of day, anchor) segments. Anchors:
// 0 = home, 1 = work, 2 = other, 3 = leisure.
struct Segment {
  double start;
  int anchor;
};
using Template = std::vector<Segment>;

const std::array<Template, 3> kWeekday = {{
    {{0.0, 0}, {8.0 / 24, 1}, {17.0 / 24, 0}},                  // commute
    {{0.0, 0}, {8.0 / 24, 1}, {16.0 / 24, 2}, {19.0 / 24, 0}},  // errand after work
    {{0.0, 0}},                                                 // stay home
}};

const std::array<Template, 2> kWeekend = {{
    {{0.0, 0}, {10.0 / 24, 3}, {15.0 / 24, 0}},                 // outing
    {{0.0, 0}},                                                 // stay home
}};

std::vector<CellId> cells_within(const CityGrid& grid, CellId center, double radius_km) {
  std::vector<CellId> out;
  for (CellId c = 0; c < grid.n_cells(); ++c)
    if (grid.distance_km(center, c) <= radius_km) out.push_back(c);
  return out;
}

CellId pick(const std::vector<CellId>& pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

template <std::size_t N>
std::size_t draw_mix(const std::array<double, N>& mix, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    acc += mix[i];
    if (r < acc) return i;
  }
  return N - 1;
}

std::vector<CellId> realize_day(const Template& tpl, const AgentProfile& agent, int T) {
  std::array<CellId, 4> anchor = {agent.home, agent.work, agent.other, agent.leisure};
  std::vector<CellId> slots(static_cast<std::size_t>(T));
  for (std::size_t seg = 0; seg < tpl.size(); ++seg) {
    int begin = static_cast<int>(std::llround(tpl[seg].start * T));
    int end = seg + 1 < tpl.size() ? static_cast<int>(std::llround(tpl[seg + 1].start * T)) : T;
    for (int s = begin; s < end; ++s)
      slots[static_cast<std::size_t>(s)] = anchor[static_cast<std::size_t>(tpl[seg].anchor)];
  }
  return slots;
}

} // namespace

CityGrid generate_city(int width, int height, int n_admins, std::uint64_t seed) {
  (void)seed; // layout is deterministic; seed reserved for future variation
  if (width <= 0 || height <= 0 || n_admins <= 0)
    throw ContractError("generate_city: non-positive dimensions");
  if (n_admins > width * height)
    throw ContractError("generate_city: more admins than cells");

  // Pick the factor pair rows x cols == n_admins that best matches the grid
  // aspect ratio, so admin regions are near-square rectangles.
  int best_r = -1, best_c = -1;
  double best_score = 1e300;
  for (int r = 1; r <= n_admins; ++r) {
    if (n_admins % r != 0) continue;
    int c = n_admins / r;
    if (r > height || c > width) continue;
    double score = std::abs(std::log((static_cast<double>(height) / r) /
                                     (static_cast<double>(width) / c)));
    if (score < best_score) {
      best_score = score;
      best_r = r;
      best_c = c;
    }
  }
  if (best_r < 0) throw ContractError("generate_city: admins cannot tile the grid");

  auto band = [](int extent, int parts, int idx) {
    // Index of the part that covers coordinate idx when extent is divided
    // into `parts` near-equal bands.
    return std::min(parts - 1, idx * parts / extent);
  };

  CityGrid g;
  g.width = width;
  g.height = height;
  g.cell_size_km = 1.0;
  g.origin_lat = 40.0;
  g.origin_lon = 116.0;
  g.n_admins = n_admins;
  g.cell_admin.resize(static_cast<std::size_t>(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      g.cell_admin[static_cast<std::size_t>(g.cell_at(r, c))] =
          band(height, best_r, r) * best_c + band(width, best_c, c);
  g.validate();
  return g;
}

std::vector<AgentProfile> generate_population(const CityGrid& grid, const SynthConfig& cfg) {
  if (cfg.n_agents <= 0) throw ContractError("population: non-positive agent count");
  std::vector<AgentProfile> agents;
  agents.reserve(static_cast<std::size_t>(cfg.n_agents));
  for (int i = 0; i < cfg.n_agents; ++i) {
    Rng rng = make_rng(cfg.seed, 1'000'000 + static_cast<std::uint64_t>(i));
    AgentProfile a;
    a.user = i;
    std::uniform_int_distribution<CellId> any(0, grid.n_cells() - 1);
    a.home = any(rng);

    auto work_pool = cells_within(grid, a.home, 10.0);
    std::erase(work_pool, a.home);
    a.work = work_pool.empty() ? a.home : pick(work_pool, rng);

    auto near_pool = cells_within(grid, a.home, 5.0);
    std::erase(near_pool, a.home);
    auto other_pool = near_pool;
    std::erase(other_pool, a.work);
    a.other = other_pool.empty() ? (near_pool.empty() ? a.home : pick(near_pool, rng))
                                 : pick(other_pool, rng);
    a.leisure = near_pool.empty() ? a.home : pick(near_pool, rng);

    a.weekday_mix = cfg.weekday_mix;
    a.weekend_mix = cfg.weekend_mix;
    a.noise_rate = cfg.noise_rate;
    agents.push_back(a);
  }
  return agents;
}

Histories generate_trajectories(const CityGrid& grid, const std::vector<AgentProfile>& agents,
                                const SynthConfig& cfg) {
  if (cfg.T != 24 && cfg.T != 48) throw ContractError("trajectories: T must be 24 or 48");
  if (cfg.n_days <= 0) throw ContractError("trajectories: non-positive day count");
  Histories out;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const AgentProfile& a = agents[i];
    Rng rng = make_rng(cfg.seed, 2'000'000 + static_cast<std::uint64_t>(i));
    auto noise_pool = cells_within(grid, a.home, 5.0);
    UserHistory hist;
    hist.user = a.user;
    for (int day = 0; day < cfg.n_days; ++day) {
      int weekday = (cfg.epoch_weekday + day) % 7;
      bool weekend = weekday >= 5;
      const Template& tpl = weekend ? kWeekend[draw_mix(a.weekend_mix, rng)]
                                    : kWeekday[draw_mix(a.weekday_mix, rng)];
      DailyTrajectory traj;
      traj.user = a.user;
      traj.day_index = day;
      traj.weekday = weekday;
      traj.slots = realize_day(tpl, a, cfg.T);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (auto& slot : traj.slots)
        if (u(rng) < a.noise_rate) slot = pick(noise_pool, rng);
      hist.days.emplace(day, std::move(traj));
    }
    out.emplace(a.user, std::move(hist));
  }
  return out;
}

std::vector<std::int64_t> census_by_admin(const CityGrid& grid,
                                          const std::vector<AgentProfile>& agents,
                                          std::int64_t multiplier) {
  if (multiplier <= 0) throw ContractError("census: non-positive multiplier");
  std::vector<std::int64_t> out(static_cast<std::size_t>(grid.n_admins), 0);
  for (const auto& a : agents)
    out[static_cast<std::size_t>(grid.admin_of(a.home))] += multiplier;
  return out;
}

Dataset synthesize(const SynthConfig& cfg) {
  Dataset ds;
  ds.grid = generate_city(cfg.grid_width, cfg.grid_height, cfg.n_admins, cfg.seed);
  auto agents = generate_population(ds.grid, cfg);
  ds.histories = generate_trajectories(ds.grid, agents, cfg);
  ds.header.T = cfg.T;
  ds.header.epoch_weekday = cfg.epoch_weekday;
  ds.header.n_days = cfg.n_days;
  ds.header.n_agents = cfg.n_agents;
  ds.split = split_dataset(cfg.n_days);
  return ds;
}

} // namespace mstdp
