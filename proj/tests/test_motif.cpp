#include "doctest.h"

#include <algorithm>
#include <set>

#include "mstdp/motif.hpp"
#include "mstdp/rng.hpp"

using namespace mstdp;

namespace {

DailyTrajectory day_of(const std::vector<CellId>& slots) {
  DailyTrajectory day;
  day.slots = slots;
  return day;
}

// Distinct-place transition digraph of a day, nodes labeled by first visit.
std::pair<int, std::set<std::pair<int, int>>> day_graph(const DailyTrajectory& day) {
  std::vector<CellId> order;
  auto label = [&](CellId c) {
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] == c) return static_cast<int>(i);
    order.push_back(c);
    return static_cast<int>(order.size() - 1);
  };
  std::set<std::pair<int, int>> edges;
  int prev = label(day.slots.front());
  for (std::size_t s = 1; s < day.slots.size(); ++s) {
    int cur = label(day.slots[s]);
    if (cur != prev) edges.insert({prev, cur});
    prev = cur;
  }
  return {static_cast<int>(order.size()), edges};
}

// Permutation search for digraph isomorphism.
bool isomorphic(const DailyTrajectory& a, const DailyTrajectory& b) {
  auto [na, ea] = day_graph(a);
  auto [nb, eb] = day_graph(b);
  if (na != nb || ea.size() != eb.size()) return false;
  std::vector<int> perm(static_cast<std::size_t>(na));
  for (int i = 0; i < na; ++i) perm[static_cast<std::size_t>(i)] = i;
  do {
    bool ok = true;
    for (const auto& [u, v] : ea) {
      if (!eb.count({perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]})) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

DailyTrajectory random_day(Rng& rng, int n_places) {
  std::uniform_int_distribution<CellId> cell(0, static_cast<CellId>(n_places - 1));
  std::uniform_int_distribution<int> len(1, 5);
  std::vector<CellId> slots;
  while (slots.size() < 24) {
    CellId c = cell(rng);
    int n = std::min(len(rng), 24 - static_cast<int>(slots.size()));
    for (int i = 0; i < n; ++i) slots.push_back(c);
  }
  return day_of(slots);
}

} // namespace

TEST_CASE("simple day shapes produce the expected motif ids") {
  MotifId stay = extract_motif(day_of(std::vector<CellId>(24, 7)));
  CHECK(stay.n_nodes == 1);
  CHECK(stay.edges.empty());
  CHECK(stay.canonical);
  CHECK(stay.key() == "n1");

  std::vector<CellId> commute(24, 3);
  for (int s = 8; s < 17; ++s) commute[static_cast<std::size_t>(s)] = 9;
  MotifId loop = extract_motif(day_of(commute));
  CHECK(loop.n_nodes == 2);
  CHECK(loop.edges == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}});
  CHECK(loop.key() == "n2:0>1:1>0");
}

TEST_CASE("isomorphic days share one motif id regardless of cell identity") {
  // home-work-home with different cells and timings.
  std::vector<CellId> a(24, 1);
  for (int s = 9; s < 18; ++s) a[static_cast<std::size_t>(s)] = 8;
  std::vector<CellId> b(24, 50);
  for (int s = 6; s < 12; ++s) b[static_cast<std::size_t>(s)] = 2;

  CHECK(extract_motif(day_of(a)) == extract_motif(day_of(b)));

  // A chain 0 -> 1 -> 2 -> 0 versus a star 0 -> 1 -> 0 -> 2 -> 0 differ.
  std::vector<CellId> chain, star;
  for (int i : {0, 0, 1, 1, 2, 2}) chain.insert(chain.end(), 4, static_cast<CellId>(i));
  for (int i : {0, 1, 0, 2, 0, 0}) star.insert(star.end(), 4, static_cast<CellId>(i));
  chain.back() = 0; // close the loop home without a new place
  CHECK(!(extract_motif(day_of(chain)) == extract_motif(day_of(star))));
}

TEST_CASE("canonical ids agree with a brute-force isomorphism oracle") {
  Rng rng = make_rng(17, 0);
  std::vector<DailyTrajectory> days;
  for (int i = 0; i < 36; ++i) days.push_back(random_day(rng, 2 + i % 4)); // up to 5 places

  for (std::size_t i = 0; i < days.size(); ++i) {
    for (std::size_t j = i + 1; j < days.size(); ++j) {
      bool same_id = extract_motif(days[i]) == extract_motif(days[j]);
      bool iso = isomorphic(days[i], days[j]);
      INFO("days ", i, " and ", j);
      CHECK(same_id == iso);
    }
  }
}

TEST_CASE("days with too many places fall into per-size buckets") {
  std::vector<CellId> slots;
  for (CellId c = 0; c < 12; ++c) slots.insert(slots.end(), 2, c);
  MotifId big = extract_motif(day_of(slots));
  CHECK(big.n_nodes == 12);
  CHECK(!big.canonical);
  CHECK(big.key() == "n12:oversized");

  // Any other 12-place day lands in the same bucket: edges are not kept.
  std::vector<CellId> other;
  for (CellId c = 0; c < 12; ++c) other.insert(other.end(), 2, static_cast<CellId>(11 - c));
  other.insert(other.begin(), 2, 0);
  other.resize(24, 11);
  MotifId big2 = extract_motif(day_of(other));
  CHECK(big == big2);
}

TEST_CASE("motif distributions count days and sort by frequency") {
  std::vector<DailyTrajectory> days;
  std::vector<CellId> stay(24, 0);
  std::vector<CellId> commute(24, 0);
  for (int s = 8; s < 17; ++s) commute[static_cast<std::size_t>(s)] = 1;
  days.push_back(day_of(stay));
  days.push_back(day_of(stay));
  days.push_back(day_of(stay));
  days.push_back(day_of(commute));

  std::vector<const DailyTrajectory*> ptrs;
  for (const auto& d : days) ptrs.push_back(&d);
  auto dist = motif_distribution(ptrs);
  REQUIRE(dist.size() == 2);
  CHECK(dist[0].second == 3);
  CHECK(dist[0].first.key() == "n1");
  CHECK(dist[1].second == 1);
  CHECK(dist[1].first.key() == "n2:0>1:1>0");
}
