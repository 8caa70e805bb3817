#pragma once

#include <filesystem>
#include <map>

#include "mstdp/grid.hpp"
#include "mstdp/trajectory.hpp"

namespace mstdp {

struct DatasetHeader {
  int T = 24;
  int epoch_weekday = 0; // weekday of day index 0
  int n_days = 0;        // span of day indices [0, n_days)
  int n_agents = 0;

  int weekday_of(int day_index) const { return ((epoch_weekday + day_index) % 7 + 7) % 7; }
};

using Histories = std::map<UserId, UserHistory>;

// Half-open day ranges. Val follows train, test follows val.
struct DayRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int d) const { return d >= begin && d < end; }
};

struct DatasetSplit {
  DayRange train, val, test;
};

// 6:1:3 by day count: train = round(0.6 n), val = round(0.1 n), test = rest.
// Requires n_days >= 10 so every part is non-empty.
DatasetSplit split_dataset(int n_days);

void save_header(const DatasetHeader& h, const std::filesystem::path& file);
DatasetHeader load_header(const std::filesystem::path& file);

void save_split(const DatasetSplit& s, const std::filesystem::path& file);
DatasetSplit load_split(const std::filesystem::path& file);

// JSON-lines trajectory file: one object per line with keys user, day,
// weekday, slots, and optionally predicted. Validates every record against
// the header and grid; throws ContractError on any malformed line.
void write_trajectories(const Histories& histories, const std::filesystem::path& file);
Histories read_trajectories(const std::filesystem::path& file, const DatasetHeader& header,
                            int n_cells);

// A dataset directory: city.json, header.json, trajectories.jsonl, split.json.
struct Dataset {
  DatasetHeader header;
  CityGrid grid;
  DatasetSplit split;
  Histories histories;
};

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace mstdp
