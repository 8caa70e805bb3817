#pragma once

#include <array>
#include <map>
#include <vector>

#include "mstdp/types.hpp"

namespace mstdp {

// One day of movement sampled at a fixed slot width: slots[s] is the cell the
// user occupied during slot s, s in [0, T). T is 24 or 48.
struct DailyTrajectory {
  UserId user = 0;
  int day_index = 0;
  int weekday = 0; // 0 = Monday ... 6 = Sunday
  bool predicted = false;
  std::vector<CellId> slots;

  int T() const { return static_cast<int>(slots.size()); }
};

struct LocationChain {
  std::vector<CellId> locations;

  std::size_t size() const { return locations.size(); }
  bool operator==(const LocationChain&) const = default;
};

struct DurationChain {
  std::vector<int> durations; // slots spent at each visit, all >= 1

  std::size_t size() const { return durations.size(); }
  int total() const;
  bool operator==(const DurationChain&) const = default;
};

struct DecoupledDay {
  LocationChain loc;
  DurationChain dur;
};

// Run-length encodes a day: consecutive equal slots collapse into one visit.
// Invariants on the result: no two consecutive locations equal, durations
// positive, durations sum to T.
DecoupledDay decouple(const DailyTrajectory& day);

// Inverse of decouple. Chains must be equal length, durations positive and
// summing to T; throws ContractError otherwise.
std::vector<CellId> recouple(const LocationChain& loc, const DurationChain& dur, int T);

// All observed days of one user, keyed by day index. Days may be missing.
struct UserHistory {
  UserId user = 0;
  std::map<int, DailyTrajectory> days;
};

// The seven-day window ending at day k: entry i refers to day k-6+i.
// Absent days have present[i] == false and days[i] == nullptr.
struct HistoryWindow {
  int end_day = 0; // k
  std::array<const DailyTrajectory*, 7> days{};
  std::array<bool, 7> present{};

  int present_count() const;
};

HistoryWindow history_window(const UserHistory& history, int k);

// Throws ContractError if the day is malformed: wrong slot count, cell ids
// outside [0, n_cells), or negative day index.
void validate_trajectory(const DailyTrajectory& day, int T, int n_cells);

} // namespace mstdp
