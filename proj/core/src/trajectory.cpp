#include "mstdp/trajectory.hpp"

#include <numeric>

namespace mstdp {

int DurationChain::total() const {
  return std::accumulate(durations.begin(), durations.end(), 0);
}

int HistoryWindow::present_count() const {
  int n = 0;
  for (bool p : present) n += p ? 1 : 0;
  return n;
}

DecoupledDay decouple(const DailyTrajectory& day) {
  if (day.slots.empty()) throw ContractError("decouple: empty trajectory");
  DecoupledDay out;
  CellId cur = day.slots[0];
  int run = 1;
  for (std::size_t s = 1; s < day.slots.size(); ++s) {
    if (day.slots[s] == cur) {
      ++run;
    } else {
      out.loc.locations.push_back(cur);
      out.dur.durations.push_back(run);
      cur = day.slots[s];
      run = 1;
    }
  }
  out.loc.locations.push_back(cur);
  out.dur.durations.push_back(run);
  return out;
}

std::vector<CellId> recouple(const LocationChain& loc, const DurationChain& dur, int T) {
  if (loc.size() != dur.size())
    throw ContractError("recouple: chain length mismatch");
  if (loc.size() == 0) throw ContractError("recouple: empty chains");
  int total = 0;
  for (int d : dur.durations) {
    if (d <= 0) throw ContractError("recouple: non-positive duration");
    total += d;
  }
  if (total != T) throw ContractError("recouple: durations do not sum to T");
  std::vector<CellId> slots;
  slots.reserve(static_cast<std::size_t>(T));
  for (std::size_t i = 0; i < loc.size(); ++i)
    slots.insert(slots.end(), static_cast<std::size_t>(dur.durations[i]), loc.locations[i]);
  return slots;
}

HistoryWindow history_window(const UserHistory& history, int k) {
  HistoryWindow w;
  w.end_day = k;
  for (int i = 0; i < 7; ++i) {
    int day = k - 6 + i;
    auto it = history.days.find(day);
    if (it != history.days.end()) {
      w.days[static_cast<std::size_t>(i)] = &it->second;
      w.present[static_cast<std::size_t>(i)] = true;
    }
  }
  return w;
}

void validate_trajectory(const DailyTrajectory& day, int T, int n_cells) {
  if (day.T() != T)
    throw ContractError("trajectory: expected " + std::to_string(T) + " slots, got " +
                        std::to_string(day.T()));
  if (day.day_index < 0) throw ContractError("trajectory: negative day index");
  if (day.weekday < 0 || day.weekday > 6) throw ContractError("trajectory: bad weekday");
  for (CellId c : day.slots)
    if (c < 0 || c >= n_cells)
      throw ContractError("trajectory: cell id " + std::to_string(c) + " out of range");
}

} // namespace mstdp
