#include "mstdp/motif.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

namespace mstdp {

std::string MotifId::key() const {
  std::string out = "n" + std::to_string(n_nodes);
  if (!canonical) return out + ":oversized";
  for (auto [a, b] : edges) out += ":" + std::to_string(a) + ">" + std::to_string(b);
  return out;
}

MotifId extract_motif(const DailyTrajectory& day) {
  DecoupledDay dec = decouple(day);
  std::vector<CellId> order; // distinct places by first visit
  std::map<CellId, int> label;
  for (CellId c : dec.loc.locations) {
    if (label.emplace(c, static_cast<int>(order.size())).second) order.push_back(c);
  }
  MotifId id;
  id.n_nodes = static_cast<int>(order.size());

  std::set<std::pair<int, int>> edge_set;
  for (std::size_t i = 0; i + 1 < dec.loc.size(); ++i)
    edge_set.emplace(label[dec.loc.locations[i]], label[dec.loc.locations[i + 1]]);

  if (id.n_nodes > kMaxExactMotifNodes) {
    id.canonical = false;
    return id;
  }

  // Canonical labeling by exhaustive permutation: the lexicographically
  // smallest sorted edge list over all relabelings.
  std::vector<int> perm(static_cast<std::size_t>(id.n_nodes));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::pair<int, int>> best;
  bool first = true;
  do {
    std::vector<std::pair<int, int>> relabeled;
    relabeled.reserve(edge_set.size());
    for (auto [a, b] : edge_set)
      relabeled.emplace_back(perm[static_cast<std::size_t>(a)],
                             perm[static_cast<std::size_t>(b)]);
    std::sort(relabeled.begin(), relabeled.end());
    if (first || relabeled < best) {
      best = std::move(relabeled);
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  id.edges = std::move(best);
  return id;
}

std::vector<std::pair<MotifId, std::int64_t>> motif_distribution(
    const std::vector<const DailyTrajectory*>& days) {
  std::map<MotifId, std::int64_t> counts;
  for (const DailyTrajectory* day : days) counts[extract_motif(*day)] += 1;
  std::vector<std::pair<MotifId, std::int64_t>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

} // namespace mstdp
