#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mstdp/dataset.hpp"
#include "mstdp/synth.hpp"

using namespace mstdp;
namespace fs = std::filesystem;

TEST_CASE("day splits are 6:1:3 with every part non-empty") {
  DatasetSplit s = split_dataset(28);
  CHECK(s.train.begin == 0);
  CHECK(s.train.end == 17);
  CHECK(s.val.begin == 17);
  CHECK(s.val.end == 20);
  CHECK(s.test.begin == 20);
  CHECK(s.test.end == 28);

  DatasetSplit ten = split_dataset(10);
  CHECK(ten.train.size() == 6);
  CHECK(ten.val.size() == 1);
  CHECK(ten.test.size() == 3);

  CHECK_THROWS_AS(split_dataset(9), ContractError);
}

TEST_CASE("weekday_of wraps in both directions") {
  DatasetHeader h{24, 2, 28, 1}; // day 0 is a Wednesday
  CHECK(h.weekday_of(0) == 2);
  CHECK(h.weekday_of(4) == 6);
  CHECK(h.weekday_of(5) == 0);
  CHECK(h.weekday_of(12) == 0);
  CHECK(h.weekday_of(-1) == 1);
  CHECK(h.weekday_of(-3) == 6);
}

TEST_CASE("trajectory files round trip") {
  DatasetHeader h{24, 0, 10, 2};
  Histories hs;
  for (UserId u : {3, 8}) {
    hs[u].user = u;
    for (int d = 0; d < 3; ++d) {
      DailyTrajectory day;
      day.user = u;
      day.day_index = d;
      day.weekday = h.weekday_of(d);
      day.predicted = (d == 2);
      day.slots.assign(24, static_cast<CellId>(u % 4));
      hs[u].days[d] = day;
    }
  }
  auto file = fs::temp_directory_path() / "mstdp_test_traj.jsonl";
  write_trajectories(hs, file);
  Histories back = read_trajectories(file, h, 8);
  fs::remove(file);

  REQUIRE(back.size() == 2);
  for (const auto& [u, hist] : hs) {
    REQUIRE(back.count(u) == 1);
    REQUIRE(back.at(u).days.size() == 3);
    for (const auto& [d, day] : hist.days) {
      const DailyTrajectory& b = back.at(u).days.at(d);
      CHECK(b.slots == day.slots);
      CHECK(b.weekday == day.weekday);
      CHECK(b.predicted == day.predicted);
      CHECK(b.user == u);
    }
  }
}

TEST_CASE("trajectory reading rejects inconsistent records") {
  DatasetHeader h{24, 0, 10, 1};
  auto file = fs::temp_directory_path() / "mstdp_test_bad.jsonl";
  auto write_line = [&](const std::string& line) {
    std::ofstream out(file, std::ios::trunc);
    out << line << "\n";
  };
  std::string slots = "[";
  for (int i = 0; i < 24; ++i) slots += (i ? ",0" : "0");
  slots += "]";

  // Weekday does not match the day index under the header epoch.
  write_line(R"({"user":1,"day":1,"weekday":0,"slots":)" + slots + "}");
  CHECK_THROWS_AS(read_trajectories(file, h, 4), ContractError);

  // Cell id out of range.
  std::string nines = "[9";
  for (int i = 1; i < 24; ++i) nines += ",9";
  nines += "]";
  write_line(R"({"user":1,"day":0,"weekday":0,"slots":)" + nines + "}");
  CHECK_THROWS_AS(read_trajectories(file, h, 4), ContractError);

  // Duplicate (user, day).
  {
    std::ofstream out(file, std::ios::trunc);
    out << R"({"user":1,"day":0,"weekday":0,"slots":)" + slots + "}\n";
    out << R"({"user":1,"day":0,"weekday":0,"slots":)" + slots + "}\n";
  }
  CHECK_THROWS_AS(read_trajectories(file, h, 4), ContractError);

  // Not JSON at all.
  write_line("not json");
  CHECK_THROWS_AS(read_trajectories(file, h, 4), ContractError);

  fs::remove(file);
}

TEST_CASE("dataset directories round trip") {
  SynthConfig cfg;
  cfg.n_agents = 6;
  cfg.n_days = 10;
  cfg.grid_width = 5;
  cfg.grid_height = 4;
  cfg.n_admins = 4;
  Dataset ds = synthesize(cfg);

  auto dir = fs::temp_directory_path() / "mstdp_test_dataset";
  fs::remove_all(dir);
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  fs::remove_all(dir);

  CHECK(back.header.T == ds.header.T);
  CHECK(back.header.epoch_weekday == ds.header.epoch_weekday);
  CHECK(back.header.n_days == ds.header.n_days);
  CHECK(back.header.n_agents == ds.header.n_agents);
  CHECK(back.split.train.begin == ds.split.train.begin);
  CHECK(back.split.test.end == ds.split.test.end);
  CHECK(back.grid.cell_admin == ds.grid.cell_admin);
  REQUIRE(back.histories.size() == ds.histories.size());
  for (const auto& [u, hist] : ds.histories) {
    REQUIRE(back.histories.count(u) == 1);
    REQUIRE(back.histories.at(u).days.size() == hist.days.size());
    for (const auto& [d, day] : hist.days)
      CHECK(back.histories.at(u).days.at(d).slots == day.slots);
  }
}
