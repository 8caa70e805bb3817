#pragma once

#include <map>
#include <utility>
#include <vector>

#include "mstdp/dataset.hpp"
#include "mstdp/grid.hpp"

namespace mstdp {

struct TrajPair {
  const DailyTrajectory* pred = nullptr;
  const DailyTrajectory* actual = nullptr;
};

// Inner join on (user, day). Throws ContractError when empty or when slot
// counts disagree.
std::vector<TrajPair> align_days(const Histories& pred, const Histories& actual);

// Fraction of slots where predicted and actual cells match.
double slot_accuracy(const std::vector<TrajPair>& pairs);

// Mean over days of the mean per-slot centroid distance, km.
double deviation_distance_km(const std::vector<TrajPair>& pairs, const CityGrid& grid);

struct DayMetrics {
  double acc = 0.0;
  double dev_km = 0.0;
};
DayMetrics day_metrics(const std::vector<TrajPair>& pairs, const CityGrid& grid);

// Jensen-Shannon divergence, natural log, so the range is [0, ln 2].
// Inputs are non-negative weight vectors of equal size; normalized inside.
double jsd(const std::vector<double>& p, const std::vector<double>& q);

// Total centroid distance walked across consecutive slots.
double daily_travel_km(const DailyTrajectory& day, const CityGrid& grid);

// Last slot index still at the day's first location, or T when the user
// never moves (its own histogram bin).
int departure_slot(const DailyTrajectory& day);

// Per-user JSD of the daily travel distance distribution (1 km bins),
// averaged over users present in the pairs.
double travel_distance_jsd(const std::vector<TrajPair>& pairs, const CityGrid& grid,
                           double bin_km = 1.0);

// Per-user JSD of the departure slot distribution (T + 1 bins).
double depart_time_jsd(const std::vector<TrajPair>& pairs);

enum class FlowLevel { cell, admin };

// Origin-destination counts of consecutive-slot moves (stay-puts excluded).
struct FlowMatrix {
  FlowLevel level = FlowLevel::cell;
  std::map<std::pair<int, int>, std::int64_t> flows;

  std::int64_t total() const;
};

FlowMatrix od_flows(const std::vector<const DailyTrajectory*>& days, const CityGrid& grid,
                    FlowLevel level);

// Coefficient of determination of predicted vs actual flows over the union
// of pairs that are non-zero in either matrix.
double r_squared(const FlowMatrix& actual, const FlowMatrix& pred);

// Common part of commuters: 2 * sum(min) / (sum(actual) + sum(pred)).
double cpc(const FlowMatrix& actual, const FlowMatrix& pred);

// Copy of the same weekday last week (day k - 6), falling back to the most
// recent observed day at or before k. Predicts day k + 1.
DailyTrajectory persistence_predict(const UserHistory& history, int k,
                                    const DatasetHeader& header);

} // namespace mstdp
