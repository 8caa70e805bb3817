#include "doctest.h"

#include "mstdp/rng.hpp"
#include "mstdp/trajectory.hpp"

using namespace mstdp;

namespace {

DailyTrajectory day_from_runs(const std::vector<std::pair<CellId, int>>& runs, int day_index = 0,
                              int weekday = 0) {
  DailyTrajectory day;
  day.day_index = day_index;
  day.weekday = weekday;
  for (auto [cell, len] : runs)
    for (int i = 0; i < len; ++i) day.slots.push_back(cell);
  return day;
}

DailyTrajectory random_day(Rng& rng, int T, int n_cells) {
  DailyTrajectory day;
  day.slots.reserve(static_cast<std::size_t>(T));
  std::uniform_int_distribution<int> cell(0, n_cells - 1);
  std::uniform_int_distribution<int> len(1, 6);
  CellId prev = -1;
  while (static_cast<int>(day.slots.size()) < T) {
    CellId c = cell(rng);
    if (c == prev) continue;
    int n = std::min(len(rng), T - static_cast<int>(day.slots.size()));
    for (int i = 0; i < n; ++i) day.slots.push_back(c);
    prev = c;
  }
  return day;
}

} // namespace

TEST_CASE("decoupling a day of stays gives the visit chain and the stay lengths") {
  // 3h at 1, 2h at 2, 7h at 4, 9h at 5, 1h at 3, 2h back at 1.
  DailyTrajectory day = day_from_runs({{1, 3}, {2, 2}, {4, 7}, {5, 9}, {3, 1}, {1, 2}});
  REQUIRE(day.T() == 24);

  DecoupledDay d = decouple(day);
  CHECK(d.loc.locations == std::vector<CellId>{1, 2, 4, 5, 3, 1});
  CHECK(d.dur.durations == std::vector<int>{3, 2, 7, 9, 1, 2});
  CHECK(d.dur.total() == 24);

  CHECK(recouple(d.loc, d.dur, 24) == day.slots);
}

TEST_CASE("recouple inverts decouple on random days") {
  Rng rng = make_rng(11, 0);
  for (int T : {24, 48}) {
    for (int i = 0; i < 2000; ++i) {
      DailyTrajectory day = random_day(rng, T, 30);
      DecoupledDay d = decouple(day);
      CHECK(d.dur.total() == T);
      REQUIRE(recouple(d.loc, d.dur, T) == day.slots);
    }
  }
}

TEST_CASE("adjacent chain entries always differ") {
  Rng rng = make_rng(12, 0);
  for (int i = 0; i < 200; ++i) {
    DecoupledDay d = decouple(random_day(rng, 24, 5));
    for (std::size_t k = 0; k + 1 < d.loc.locations.size(); ++k)
      REQUIRE(d.loc.locations[k] != d.loc.locations[k + 1]);
  }
}

TEST_CASE("decouple rejects an empty day") {
  DailyTrajectory day;
  CHECK_THROWS_AS(decouple(day), ContractError);
}

TEST_CASE("recouple validates its inputs") {
  LocationChain loc{{1, 2}};
  CHECK_THROWS_AS(recouple(loc, DurationChain{{3}}, 24), ContractError);      // length mismatch
  CHECK_THROWS_AS(recouple(loc, DurationChain{{20, 5}}, 24), ContractError);  // sum != T
  CHECK_THROWS_AS(recouple(loc, DurationChain{{24, 0}}, 24), ContractError);  // zero stay
  CHECK_THROWS_AS(recouple(loc, DurationChain{{25, -1}}, 24), ContractError); // negative stay
  CHECK_THROWS_AS(recouple(LocationChain{}, DurationChain{}, 24), ContractError);
}

TEST_CASE("history windows cover the seven days ending at the anchor") {
  UserHistory hist;
  hist.user = 9;
  for (int d : {0, 1, 2, 3, 5, 6, 7, 9}) {
    DailyTrajectory day = day_from_runs({{0, 24}}, d, d % 7);
    day.user = 9;
    hist.days[d] = day;
  }

  HistoryWindow w = history_window(hist, 7);
  CHECK(w.end_day == 7);
  // Entry i is day 1 + i; day 4 is missing, day 8 never existed.
  CHECK(w.present == std::array<bool, 7>{true, true, true, false, true, true, true});
  CHECK(w.present_count() == 6);
  REQUIRE(w.days[0] != nullptr);
  CHECK(w.days[0]->day_index == 1);
  CHECK(w.days[6]->day_index == 7);
  CHECK(w.days[3] == nullptr);

  // A window reaching before day 0 only holds what exists.
  HistoryWindow early = history_window(hist, 2);
  CHECK(early.present_count() == 3);
  CHECK(early.days[6]->day_index == 2);
}

TEST_CASE("trajectory validation catches malformed days") {
  DailyTrajectory day = day_from_runs({{1, 24}});
  CHECK_NOTHROW(validate_trajectory(day, 24, 4));
  CHECK_THROWS_AS(validate_trajectory(day, 48, 4), ContractError);
  CHECK_THROWS_AS(validate_trajectory(day, 24, 1), ContractError); // cell 1 out of range

  DailyTrajectory negative = day;
  negative.day_index = -1;
  CHECK_THROWS_AS(validate_trajectory(negative, 24, 4), ContractError);
}
