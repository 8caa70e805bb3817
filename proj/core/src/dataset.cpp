#include "mstdp/dataset.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mstdp {

using ordered_json = nlohmann::ordered_json;

DatasetSplit split_dataset(int n_days) {
  if (n_days < 10) throw ContractError("split: need at least 10 days");
  int n_train = static_cast<int>(std::llround(0.6 * n_days));
  int n_val = static_cast<int>(std::llround(0.1 * n_days));
  if (n_val < 1) n_val = 1;
  if (n_train + n_val >= n_days) throw ContractError("split: no test days left");
  DatasetSplit s;
  s.train = {0, n_train};
  s.val = {n_train, n_train + n_val};
  s.test = {n_train + n_val, n_days};
  return s;
}

void save_header(const DatasetHeader& h, const std::filesystem::path& file) {
  ordered_json j;
  j["T"] = h.T;
  j["epoch_weekday"] = h.epoch_weekday;
  j["n_days"] = h.n_days;
  j["n_agents"] = h.n_agents;
  std::ofstream out(file);
  if (!out) throw ContractError("header: cannot write " + file.string());
  out << j.dump(2) << "\n";
}

DatasetHeader load_header(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ContractError("header: cannot open " + file.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ContractError("header: bad json: " + std::string(e.what()));
  }
  DatasetHeader h;
  try {
    h.T = j.at("T").get<int>();
    h.epoch_weekday = j.at("epoch_weekday").get<int>();
    h.n_days = j.at("n_days").get<int>();
    h.n_agents = j.at("n_agents").get<int>();
  } catch (const std::exception& e) {
    throw ContractError("header: missing field: " + std::string(e.what()));
  }
  if (h.T != 24 && h.T != 48) throw ContractError("header: T must be 24 or 48");
  if (h.epoch_weekday < 0 || h.epoch_weekday > 6) throw ContractError("header: bad epoch weekday");
  return h;
}

void save_split(const DatasetSplit& s, const std::filesystem::path& file) {
  ordered_json j;
  j["train"] = {{"begin", s.train.begin}, {"end", s.train.end}};
  j["val"] = {{"begin", s.val.begin}, {"end", s.val.end}};
  j["test"] = {{"begin", s.test.begin}, {"end", s.test.end}};
  std::ofstream out(file);
  if (!out) throw ContractError("split: cannot write " + file.string());
  out << j.dump(2) << "\n";
}

DatasetSplit load_split(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ContractError("split: cannot open " + file.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ContractError("split: bad json: " + std::string(e.what()));
  }
  auto range = [&](const char* key) {
    DayRange r;
    r.begin = j.at(key).at("begin").get<int>();
    r.end = j.at(key).at("end").get<int>();
    return r;
  };
  DatasetSplit s;
  try {
    s.train = range("train");
    s.val = range("val");
    s.test = range("test");
  } catch (const std::exception& e) {
    throw ContractError("split: missing field: " + std::string(e.what()));
  }
  return s;
}

void write_trajectories(const Histories& histories, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ContractError("trajectories: cannot write " + file.string());
  for (const auto& [user, hist] : histories) {
    for (const auto& [day, traj] : hist.days) {
      ordered_json j;
      j["user"] = traj.user;
      j["day"] = traj.day_index;
      j["weekday"] = traj.weekday;
      j["slots"] = traj.slots;
      if (traj.predicted) j["predicted"] = true;
      out << j.dump() << "\n";
    }
  }
}

Histories read_trajectories(const std::filesystem::path& file, const DatasetHeader& header,
                            int n_cells) {
  std::ifstream in(file);
  if (!in) throw ContractError("trajectories: cannot open " + file.string());
  Histories out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw ContractError("trajectories: bad json at line " + std::to_string(lineno) + ": " +
                          e.what());
    }
    DailyTrajectory traj;
    try {
      traj.user = j.at("user").get<UserId>();
      traj.day_index = j.at("day").get<int>();
      traj.weekday = j.at("weekday").get<int>();
      traj.slots = j.at("slots").get<std::vector<CellId>>();
      traj.predicted = j.value("predicted", false);
    } catch (const std::exception& e) {
      throw ContractError("trajectories: missing field at line " + std::to_string(lineno) + ": " +
                          e.what());
    }
    validate_trajectory(traj, header.T, n_cells);
    if (traj.weekday != header.weekday_of(traj.day_index))
      throw ContractError("trajectories: weekday inconsistent with day index at line " +
                          std::to_string(lineno));
    auto& hist = out[traj.user];
    hist.user = traj.user;
    if (!hist.days.emplace(traj.day_index, std::move(traj)).second)
      throw ContractError("trajectories: duplicate (user, day) at line " + std::to_string(lineno));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_city(ds.grid, dir / "city.json");
  save_header(ds.header, dir / "header.json");
  save_split(ds.split, dir / "split.json");
  write_trajectories(ds.histories, dir / "trajectories.jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.grid = load_city(dir / "city.json");
  ds.header = load_header(dir / "header.json");
  ds.split = load_split(dir / "split.json");
  ds.histories = read_trajectories(dir / "trajectories.jsonl", ds.header, ds.grid.n_cells());
  return ds;
}

} // namespace mstdp
