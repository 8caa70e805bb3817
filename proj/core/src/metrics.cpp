#include "mstdp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mstdp {

std::vector<TrajPair> align_days(const Histories& pred, const Histories& actual) {
  std::vector<TrajPair> out;
  for (const auto& [user, ph] : pred) {
    auto ah = actual.find(user);
    if (ah == actual.end()) continue;
    for (const auto& [day, ptraj] : ph.days) {
      auto at = ah->second.days.find(day);
      if (at == ah->second.days.end()) continue;
      if (ptraj.T() != at->second.T())
        throw ContractError("align: slot counts differ for user " + std::to_string(user));
      out.push_back({&ptraj, &at->second});
    }
  }
  if (out.empty()) throw ContractError("align: no overlapping (user, day) pairs");
  return out;
}

double slot_accuracy(const std::vector<TrajPair>& pairs) {
  if (pairs.empty()) throw ContractError("accuracy: no pairs");
  std::int64_t hit = 0, total = 0;
  for (const auto& p : pairs) {
    for (int s = 0; s < p.pred->T(); ++s) {
      hit += p.pred->slots[static_cast<std::size_t>(s)] ==
                     p.actual->slots[static_cast<std::size_t>(s)]
                 ? 1
                 : 0;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

double deviation_distance_km(const std::vector<TrajPair>& pairs, const CityGrid& grid) {
  if (pairs.empty()) throw ContractError("deviation: no pairs");
  double day_sum = 0.0;
  for (const auto& p : pairs) {
    double slot_sum = 0.0;
    for (int s = 0; s < p.pred->T(); ++s)
      slot_sum += grid.distance_km(p.pred->slots[static_cast<std::size_t>(s)],
                                   p.actual->slots[static_cast<std::size_t>(s)]);
    day_sum += slot_sum / p.pred->T();
  }
  return day_sum / static_cast<double>(pairs.size());
}

DayMetrics day_metrics(const std::vector<TrajPair>& pairs, const CityGrid& grid) {
  return {slot_accuracy(pairs), deviation_distance_km(pairs, grid)};
}

double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty()) throw ContractError("jsd: size mismatch");
  double ps = 0.0, qs = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || q[i] < 0) throw ContractError("jsd: negative weight");
    ps += p[i];
    qs += q[i];
  }
  if (ps <= 0 || qs <= 0) throw ContractError("jsd: empty distribution");
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pi = p[i] / ps;
    double qi = q[i] / qs;
    double mi = 0.5 * (pi + qi);
    if (pi > 0) out += 0.5 * pi * std::log(pi / mi);
    if (qi > 0) out += 0.5 * qi * std::log(qi / mi);
  }
  return std::max(0.0, out);
}

double daily_travel_km(const DailyTrajectory& day, const CityGrid& grid) {
  double total = 0.0;
  for (int s = 0; s + 1 < day.T(); ++s)
    total += grid.distance_km(day.slots[static_cast<std::size_t>(s)],
                              day.slots[static_cast<std::size_t>(s + 1)]);
  return total;
}

int departure_slot(const DailyTrajectory& day) {
  CellId origin = day.slots.at(0);
  for (int s = 1; s < day.T(); ++s)
    if (day.slots[static_cast<std::size_t>(s)] != origin) return s - 1;
  return day.T();
}

namespace {

// Groups pairs by user, builds one histogram pair per user with `histogram`,
// and averages the per-user JSDs.
template <typename HistogramFn>
double per_user_jsd(const std::vector<TrajPair>& pairs, HistogramFn histogram) {
  if (pairs.empty()) throw ContractError("jsd metric: no pairs");
  std::map<UserId, std::vector<const TrajPair*>> by_user;
  for (const auto& p : pairs) by_user[p.pred->user].push_back(&p);
  double sum = 0.0;
  for (const auto& [user, group] : by_user) {
    auto [ph, ah] = histogram(group);
    sum += jsd(ph, ah);
  }
  return sum / static_cast<double>(by_user.size());
}

} // namespace

double travel_distance_jsd(const std::vector<TrajPair>& pairs, const CityGrid& grid,
                           double bin_km) {
  if (bin_km <= 0) throw ContractError("travel jsd: bad bin width");
  return per_user_jsd(pairs, [&](const std::vector<const TrajPair*>& group) {
    std::vector<double> pd, ad;
    for (const TrajPair* p : group) {
      pd.push_back(daily_travel_km(*p->pred, grid));
      ad.push_back(daily_travel_km(*p->actual, grid));
    }
    double max_d = 0.0;
    for (double d : pd) max_d = std::max(max_d, d);
    for (double d : ad) max_d = std::max(max_d, d);
    auto n_bins = static_cast<std::size_t>(std::floor(max_d / bin_km)) + 1;
    std::vector<double> ph(n_bins, 0.0), ah(n_bins, 0.0);
    for (double d : pd) ph[static_cast<std::size_t>(std::floor(d / bin_km))] += 1.0;
    for (double d : ad) ah[static_cast<std::size_t>(std::floor(d / bin_km))] += 1.0;
    return std::pair{ph, ah};
  });
}

double depart_time_jsd(const std::vector<TrajPair>& pairs) {
  return per_user_jsd(pairs, [&](const std::vector<const TrajPair*>& group) {
    auto n_bins = static_cast<std::size_t>(group.front()->pred->T()) + 1;
    std::vector<double> ph(n_bins, 0.0), ah(n_bins, 0.0);
    for (const TrajPair* p : group) {
      ph[static_cast<std::size_t>(departure_slot(*p->pred))] += 1.0;
      ah[static_cast<std::size_t>(departure_slot(*p->actual))] += 1.0;
    }
    return std::pair{ph, ah};
  });
}

std::int64_t FlowMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& [key, v] : flows) t += v;
  return t;
}

FlowMatrix od_flows(const std::vector<const DailyTrajectory*>& days, const CityGrid& grid,
                    FlowLevel level) {
  FlowMatrix out;
  out.level = level;
  for (const DailyTrajectory* day : days) {
    for (int s = 0; s + 1 < day->T(); ++s) {
      CellId p = day->slots[static_cast<std::size_t>(s)];
      CellId q = day->slots[static_cast<std::size_t>(s + 1)];
      if (p == q) continue;
      int a = level == FlowLevel::cell ? p : grid.admin_of(p);
      int b = level == FlowLevel::cell ? q : grid.admin_of(q);
      if (a == b) continue;
      out.flows[{a, b}] += 1;
    }
  }
  return out;
}

namespace {

std::set<std::pair<int, int>> flow_support(const FlowMatrix& a, const FlowMatrix& b) {
  std::set<std::pair<int, int>> keys;
  for (const auto& [k, v] : a.flows)
    if (v != 0) keys.insert(k);
  for (const auto& [k, v] : b.flows)
    if (v != 0) keys.insert(k);
  return keys;
}

std::int64_t flow_at(const FlowMatrix& m, const std::pair<int, int>& key) {
  auto it = m.flows.find(key);
  return it == m.flows.end() ? 0 : it->second;
}

} // namespace

double r_squared(const FlowMatrix& actual, const FlowMatrix& pred) {
  if (actual.level != pred.level) throw ContractError("r2: level mismatch");
  auto keys = flow_support(actual, pred);
  if (keys.empty()) throw ContractError("r2: no flows");
  double mean = 0.0;
  for (const auto& k : keys) mean += static_cast<double>(flow_at(actual, k));
  mean /= static_cast<double>(keys.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& k : keys) {
    double a = static_cast<double>(flow_at(actual, k));
    double p = static_cast<double>(flow_at(pred, k));
    ss_res += (a - p) * (a - p);
    ss_tot += (a - mean) * (a - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - ss_res / ss_tot;
}

double cpc(const FlowMatrix& actual, const FlowMatrix& pred) {
  if (actual.level != pred.level) throw ContractError("cpc: level mismatch");
  auto keys = flow_support(actual, pred);
  std::int64_t common = 0, total_a = 0, total_p = 0;
  for (const auto& k : keys) {
    std::int64_t a = flow_at(actual, k);
    std::int64_t p = flow_at(pred, k);
    common += std::min(a, p);
    total_a += a;
    total_p += p;
  }
  if (total_a + total_p == 0) throw ContractError("cpc: no flows");
  return 2.0 * static_cast<double>(common) / static_cast<double>(total_a + total_p);
}

DailyTrajectory persistence_predict(const UserHistory& history, int k,
                                    const DatasetHeader& header) {
  const DailyTrajectory* source = nullptr;
  auto it = history.days.find(k - 6);
  if (it != history.days.end()) {
    source = &it->second;
  } else {
    for (const auto& [day, traj] : history.days) {
      if (day > k) break;
      source = &traj;
    }
  }
  if (!source) throw ContractError("persistence: no observed day at or before k");
  DailyTrajectory out = *source;
  out.day_index = k + 1;
  out.weekday = header.weekday_of(k + 1);
  out.predicted = true;
  return out;
}

} // namespace mstdp
