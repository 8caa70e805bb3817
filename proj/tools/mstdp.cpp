// Command line front end: synth -> build-graph -> train -> predict ->
// evaluate -> epi-sim -> report. Every command is deterministic given its
// seed and inputs, and writes only its declared output paths.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mstdp/dataset.hpp"
#include "mstdp/epi.hpp"
#include "mstdp/geo_graph.hpp"
#include "mstdp/metrics.hpp"
#include "mstdp/model.hpp"
#include "mstdp/motif.hpp"
#include "mstdp/synth.hpp"
#include "mstdp/trainer.hpp"

namespace fs = std::filesystem;
using mstdp::ContractError;
using ordered_json = nlohmann::ordered_json;

namespace {

// Shortest round-trip decimal form; identical doubles print identically, so
// reruns with the same seed produce byte-identical text outputs.
std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw mstdp::NumericError("cannot format double");
  return std::string(buf, ptr);
}

void write_file(const fs::path& file, const std::string& content) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write " + file.string());
  out << content;
  if (!out) throw ContractError("write failed: " + file.string());
}

void write_json(const fs::path& file, const ordered_json& j) { write_file(file, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// key = value config files (# comments, blank lines allowed)

std::map<std::string, std::string> parse_kv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ContractError("cannot open config " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    auto a = s.find_first_not_of(" \t\r");
    auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config " + file.string() + ":" + std::to_string(lineno) +
                          ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ContractError("config " + file.string() + ":" + std::to_string(lineno) +
                          ": empty key or value");
    if (!kv.emplace(key, val).second)
      throw ContractError("config " + file.string() + ": duplicate key " + key);
  }
  return kv;
}

long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long out = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ContractError("config: " + key + " wants an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ContractError("config: " + key + " wants a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ContractError("config: " + key + " wants a boolean, got '" + v + "'");
}

void apply_kv(const std::map<std::string, std::string>& kv, mstdp::TrainConfig& tc,
              mstdp::ModelConfig& mc) {
  for (const auto& [k, v] : kv) {
    if (k == "epochs") tc.epochs = static_cast<int>(to_int(k, v));
    else if (k == "batch_size") tc.batch_size = static_cast<int>(to_int(k, v));
    else if (k == "lr") tc.lr = to_double(k, v);
    else if (k == "patience") tc.patience = static_cast<int>(to_int(k, v));
    else if (k == "seed") tc.seed = static_cast<std::uint64_t>(to_int(k, v));
    else if (k == "clip_norm") tc.clip_norm = to_double(k, v);
    else if (k == "use_clip") tc.use_clip = to_bool(k, v);
    else if (k == "d_el") mc.d_el = static_cast<int>(to_int(k, v));
    else if (k == "d_et") mc.d_et = static_cast<int>(to_int(k, v));
    else if (k == "d_hl") mc.d_hl = static_cast<int>(to_int(k, v));
    else if (k == "d_ht") mc.d_ht = static_cast<int>(to_int(k, v));
    else if (k == "d_zl") mc.d_zl = static_cast<int>(to_int(k, v));
    else if (k == "d_zt") mc.d_zt = static_cast<int>(to_int(k, v));
    else if (k == "d_region") mc.d_region = static_cast<int>(to_int(k, v));
    else if (k == "n_heads") mc.n_heads = static_cast<int>(to_int(k, v));
    else if (k == "n_enc_layers") mc.n_enc_layers = static_cast<int>(to_int(k, v));
    else if (k == "n_dec_layers") mc.n_dec_layers = static_cast<int>(to_int(k, v));
    else if (k == "n_gnn_layers") mc.n_gnn_layers = static_cast<int>(to_int(k, v));
    else if (k == "ff_mult") mc.ff_mult = static_cast<int>(to_int(k, v));
    else if (k == "lambda") mc.lambda = to_double(k, v);
    else if (k == "max_chain_len") mc.max_chain_len = static_cast<int>(to_int(k, v));
    else if (k == "gat_slope") mc.gat_slope = to_double(k, v);
    else if (k == "fuse_slope") mc.fuse_slope = to_double(k, v);
    else throw ContractError("config: unknown key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// shared loaders

mstdp::Dataset load_data(const fs::path& dir) { return mstdp::load_dataset(dir); }

std::vector<std::int64_t> load_census(const fs::path& dir) {
  fs::path file = dir / "census.json";
  std::ifstream in(file);
  if (!in) throw ContractError("cannot open " + file.string() + " (synth writes it)");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("census: " + std::string(e.what()));
  }
  std::vector<std::int64_t> census = j.at("by_admin").get<std::vector<std::int64_t>>();
  if (census.empty()) throw ContractError("census: empty");
  for (auto c : census)
    if (c < 0) throw ContractError("census: negative count");
  return census;
}

mstdp::Model load_model(const fs::path& ckpt, const fs::path& graph_file,
                        const mstdp::DatasetHeader& header) {
  auto [graph, feats] = mstdp::load_graph(graph_file);
  mstdp::Model model = mstdp::load_checkpoint(ckpt, std::move(graph), std::move(feats));
  if (model.config().T != header.T)
    throw ContractError("checkpoint T=" + std::to_string(model.config().T) +
                        " does not match dataset T=" + std::to_string(header.T));
  return model;
}

mstdp::DayRange parse_split_range(const mstdp::DatasetSplit& split, int n_days,
                                  const std::string& name) {
  if (name == "train") return split.train;
  if (name == "trainval") return {split.train.begin, split.val.end};
  if (name == "all") return {0, n_days};
  throw ContractError("unknown split '" + name + "' (train, trainval, all)");
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  fs::path out_dir;
  mstdp::SynthConfig cfg;
  std::int64_t census_multiplier = 50;
};

void run_synth(const SynthOpts& o) {
  mstdp::Dataset ds;
  ds.grid = mstdp::generate_city(o.cfg.grid_width, o.cfg.grid_height, o.cfg.n_admins, o.cfg.seed);
  auto agents = mstdp::generate_population(ds.grid, o.cfg);
  ds.histories = mstdp::generate_trajectories(ds.grid, agents, o.cfg);
  ds.header = {o.cfg.T, o.cfg.epoch_weekday, o.cfg.n_days, o.cfg.n_agents};
  ds.split = mstdp::split_dataset(o.cfg.n_days);
  mstdp::save_dataset(ds, o.out_dir);

  auto census = mstdp::census_by_admin(ds.grid, agents, o.census_multiplier);
  std::int64_t total = 0;
  for (auto c : census) total += c;
  ordered_json j;
  j["multiplier"] = o.census_multiplier;
  j["total"] = total;
  j["by_admin"] = census;
  write_json(o.out_dir / "census.json", j);
  std::cout << "synth: " << o.cfg.n_agents << " agents, " << o.cfg.n_days << " days, "
            << ds.grid.n_cells() << " cells -> " << o.out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// build-graph

struct BuildGraphOpts {
  fs::path data_dir;
  fs::path out_file;
  std::string split = "train";
  double threshold_km = 2.0;
};

void run_build_graph(const BuildGraphOpts& o) {
  mstdp::Dataset ds = load_data(o.data_dir);
  mstdp::DayRange days = parse_split_range(ds.split, ds.header.n_days, o.split);
  mstdp::HeteroGraph g =
      mstdp::build_graph(ds.grid, ds.histories, days, ds.header.T, o.threshold_km);
  mstdp::NodeFeatures f = mstdp::build_features(ds.histories, days, ds.grid, ds.header.T);
  mstdp::save_graph(g, f, o.out_file);
  std::cout << "build-graph: " << g.n_cells << " cells, " << g.n_admins << " admins, "
            << g.cell_flow.size() << " cell flows, " << g.admin_flow.size()
            << " admin flows -> " << o.out_file.string() << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  fs::path data_dir;
  fs::path graph_file;
  fs::path out_ckpt;
  std::optional<fs::path> log_csv;
  mstdp::TrainConfig tc;
  mstdp::ModelConfig mc;
  bool chain_len_set = false;
};

void run_train(const TrainOpts& o) {
  mstdp::Dataset ds = load_data(o.data_dir);
  auto [graph, feats] = mstdp::load_graph(o.graph_file);

  mstdp::ModelConfig mc = o.mc;
  mc.T = ds.header.T;
  if (!o.chain_len_set) mc.max_chain_len = ds.header.T;

  auto train = mstdp::make_samples(ds.histories, ds.split.train, ds.header);
  auto val = mstdp::make_samples(ds.histories, ds.split.val, ds.header);
  if (train.empty()) throw ContractError("train: no training samples in the train range");

  mstdp::Model model(mc, std::move(graph), std::move(feats), o.tc.seed);
  std::cout << "train: " << train.size() << " train samples, " << val.size()
            << " val samples, " << model.params().scalar_count() << " parameters\n";

  std::ofstream log;
  if (o.log_csv) {
    if (o.log_csv->has_parent_path()) fs::create_directories(o.log_csv->parent_path());
    log.open(*o.log_csv, std::ios::trunc);
    if (!log) throw ContractError("cannot write " + o.log_csv->string());
  }
  mstdp::TrainResult res = mstdp::train_model(model, train, val, o.tc, o.log_csv ? &log : nullptr);

  ordered_json meta;
  meta["dataset_T"] = ds.header.T;
  meta["train"] = {{"lr", o.tc.lr},         {"epochs", o.tc.epochs},
                   {"batch_size", o.tc.batch_size}, {"patience", o.tc.patience},
                   {"seed", o.tc.seed},     {"clip_norm", o.tc.clip_norm},
                   {"use_clip", o.tc.use_clip}};
  meta["best_epoch"] = res.best_epoch;
  meta["best_val_acc"] = res.best_val_acc;
  mstdp::save_checkpoint(o.out_ckpt, model, meta.dump());
  std::cout << "train: best epoch " << res.best_epoch << ", val acc " << fmt(res.best_val_acc)
            << " -> " << o.out_ckpt.string() << "\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
  fs::path data_dir;
  fs::path graph_file;
  fs::path ckpt;
  fs::path out_file;
  std::string task = "day";
  std::optional<int> start_day; // first predicted day; default test.begin
  std::optional<int> n_days;    // day task only; default the whole test range
  std::vector<std::int64_t> users;
};

void run_predict(const PredictOpts& o) {
  if (o.task != "day" && o.task != "week")
    throw ContractError("predict: --task must be day or week");
  mstdp::Dataset ds = load_data(o.data_dir);
  mstdp::Model model = load_model(o.ckpt, o.graph_file, ds.header);
  mstdp::Tensor table = model.location_table_frozen();

  int start = o.start_day.value_or(ds.split.test.begin);
  int horizon = o.task == "week" ? 7 : o.n_days.value_or(ds.split.test.end - start);
  if (horizon < 1) throw ContractError("predict: empty day range");

  std::vector<std::int64_t> users(o.users);
  if (users.empty())
    for (const auto& [uid, hist] : ds.histories) users.push_back(uid);

  mstdp::Histories out;
  for (std::int64_t uid : users) {
    auto it = ds.histories.find(uid);
    if (it == ds.histories.end())
      throw ContractError("predict: user " + std::to_string(uid) + " not in dataset");
    const mstdp::UserHistory& hist = it->second;
    mstdp::UserHistory& dst = out[uid];
    dst.user = uid;
    if (o.task == "week") {
      if (mstdp::history_window(hist, start - 1).present_count() == 0) continue;
      for (auto& day : model.predict_next_week(hist, start - 1, table, ds.header))
        dst.days.emplace(day.day_index, std::move(day));
    } else {
      for (int d = start; d < start + horizon; ++d) {
        if (mstdp::history_window(hist, d - 1).present_count() == 0) continue;
        auto day = model.predict_next_day(hist, d - 1, table, ds.header);
        dst.days.emplace(day.day_index, std::move(day));
      }
    }
    if (dst.days.empty()) out.erase(uid);
  }
  if (out.empty()) throw ContractError("predict: no user had any usable history window");

  if (o.out_file.has_parent_path()) fs::create_directories(o.out_file.parent_path());
  mstdp::write_trajectories(out, o.out_file);
  std::size_t n = 0;
  for (const auto& [uid, hist] : out) n += hist.days.size();
  std::cout << "predict " << o.task << ": " << n << " day records for " << out.size()
            << " users -> " << o.out_file.string() << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  fs::path data_dir;
  fs::path pred_file;
  std::optional<fs::path> actual_file; // default: the dataset's own trajectories
  fs::path report_dir;
};

std::string csv_header(const std::string& h) { return h + "\n"; }

void run_evaluate(const EvaluateOpts& o) {
  mstdp::Dataset ds = load_data(o.data_dir);
  mstdp::Histories pred =
      mstdp::read_trajectories(o.pred_file, ds.header, ds.grid.n_cells());
  mstdp::Histories actual =
      o.actual_file ? mstdp::read_trajectories(*o.actual_file, ds.header, ds.grid.n_cells())
                    : std::move(ds.histories);

  auto pairs = mstdp::align_days(pred, actual);
  std::vector<const mstdp::DailyTrajectory*> pred_days, actual_days;
  for (const auto& p : pairs) {
    pred_days.push_back(p.pred);
    actual_days.push_back(p.actual);
  }

  mstdp::DayMetrics overall = mstdp::day_metrics(pairs, ds.grid);
  double travel = mstdp::travel_distance_jsd(pairs, ds.grid);
  double depart = mstdp::depart_time_jsd(pairs);

  auto od_cell_a = mstdp::od_flows(actual_days, ds.grid, mstdp::FlowLevel::cell);
  auto od_cell_p = mstdp::od_flows(pred_days, ds.grid, mstdp::FlowLevel::cell);
  auto od_adm_a = mstdp::od_flows(actual_days, ds.grid, mstdp::FlowLevel::admin);
  auto od_adm_p = mstdp::od_flows(pred_days, ds.grid, mstdp::FlowLevel::admin);

  auto motifs_a = mstdp::motif_distribution(actual_days);
  auto motifs_p = mstdp::motif_distribution(pred_days);
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> motif_union; // key -> (a, p)
  for (const auto& [id, count] : motifs_a) motif_union[id.key()].first += count;
  for (const auto& [id, count] : motifs_p) motif_union[id.key()].second += count;
  std::vector<double> mva, mvp;
  for (const auto& [key, ap] : motif_union) {
    mva.push_back(static_cast<double>(ap.first));
    mvp.push_back(static_cast<double>(ap.second));
  }
  double motif_jsd = mstdp::jsd(mva, mvp);

  // Per-day curve, keyed by absolute day index.
  std::map<int, std::vector<mstdp::TrajPair>> by_day;
  for (const auto& p : pairs) by_day[p.pred->day_index].push_back(p);
  int first_day = by_day.begin()->first;

  ordered_json j;
  j["n_pairs"] = pairs.size();
  j["n_users"] = [&] {
    std::set<mstdp::UserId> u;
    for (const auto& p : pairs) u.insert(p.pred->user);
    return u.size();
  }();
  j["acc"] = overall.acc;
  j["dev_km"] = overall.dev_km;
  j["travel_jsd"] = travel;
  j["depart_jsd"] = depart;
  j["od"] = {{"cell",
              {{"r2", mstdp::r_squared(od_cell_a, od_cell_p)},
               {"cpc", mstdp::cpc(od_cell_a, od_cell_p)}}},
             {"admin",
              {{"r2", mstdp::r_squared(od_adm_a, od_adm_p)},
               {"cpc", mstdp::cpc(od_adm_a, od_adm_p)}}}};
  j["motif_jsd"] = motif_jsd;
  {
    ordered_json days = ordered_json::array();
    for (const auto& [day, dp] : by_day) {
      auto m = mstdp::day_metrics(dp, ds.grid);
      days.push_back({{"day", day},
                      {"offset", day - first_day + 1},
                      {"n_pairs", dp.size()},
                      {"acc", m.acc},
                      {"dev_km", m.dev_km}});
    }
    j["per_day"] = std::move(days);
  }
  write_json(o.report_dir / "metrics.json", j);

  // Plot-ready CSVs.
  {
    std::ostringstream csv;
    csv << csv_header("day,offset,n_pairs,acc,dev_km");
    for (const auto& [day, dp] : by_day) {
      auto m = mstdp::day_metrics(dp, ds.grid);
      csv << day << "," << day - first_day + 1 << "," << dp.size() << "," << fmt(m.acc) << ","
          << fmt(m.dev_km) << "\n";
    }
    write_file(o.report_dir / "per_day.csv", csv.str());
  }
  {
    // Rank motifs by actual count (ties by predicted count, then key).
    std::vector<std::pair<std::string, std::pair<std::int64_t, std::int64_t>>> ranked(
        motif_union.begin(), motif_union.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second.first != b.second.first) return a.second.first > b.second.first;
      if (a.second.second != b.second.second) return a.second.second > b.second.second;
      return a.first < b.first;
    });
    std::ostringstream csv;
    csv << csv_header("rank,motif,actual_count,pred_count");
    int rank = 1;
    for (const auto& [key, ap] : ranked)
      csv << rank++ << "," << key << "," << ap.first << "," << ap.second << "\n";
    write_file(o.report_dir / "motif_ranks.csv", csv.str());
  }
  {
    // Daily travel distance histogram (1 km bins) over all aligned days.
    std::map<int, std::pair<std::int64_t, std::int64_t>> bins;
    for (const auto& p : pairs) {
      bins[static_cast<int>(std::floor(mstdp::daily_travel_km(*p.actual, ds.grid)))].first++;
      bins[static_cast<int>(std::floor(mstdp::daily_travel_km(*p.pred, ds.grid)))].second++;
    }
    std::ostringstream csv;
    csv << csv_header("bin_km,actual_days,pred_days");
    for (const auto& [bin, ap] : bins) csv << bin << "," << ap.first << "," << ap.second << "\n";
    write_file(o.report_dir / "travel_hist.csv", csv.str());
  }
  {
    std::map<int, std::pair<std::int64_t, std::int64_t>> bins;
    for (const auto& p : pairs) {
      bins[mstdp::departure_slot(*p.actual)].first++;
      bins[mstdp::departure_slot(*p.pred)].second++;
    }
    std::ostringstream csv;
    csv << csv_header("slot,actual_days,pred_days");
    for (const auto& [bin, ap] : bins) csv << bin << "," << ap.first << "," << ap.second << "\n";
    write_file(o.report_dir / "depart_hist.csv", csv.str());
  }
  auto od_scatter = [&](const mstdp::FlowMatrix& a, const mstdp::FlowMatrix& p,
                        const fs::path& file) {
    std::map<std::pair<int, int>, std::pair<std::int64_t, std::int64_t>> merged;
    for (const auto& [key, c] : a.flows) merged[key].first = c;
    for (const auto& [key, c] : p.flows) merged[key].second = c;
    std::ostringstream csv;
    csv << csv_header("src,dst,actual,pred");
    for (const auto& [key, ap] : merged)
      csv << key.first << "," << key.second << "," << ap.first << "," << ap.second << "\n";
    write_file(file, csv.str());
  };
  od_scatter(od_cell_a, od_cell_p, o.report_dir / "od_scatter_cell.csv");
  od_scatter(od_adm_a, od_adm_p, o.report_dir / "od_scatter_admin.csv");

  std::cout << "evaluate: " << pairs.size() << " aligned days, acc " << fmt(overall.acc)
            << ", dev " << fmt(overall.dev_km) << " km -> " << o.report_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// epi-sim

struct EpiOpts {
  fs::path data_dir;
  fs::path pred_file;
  std::optional<fs::path> actual_file;
  fs::path out_dir;
  int runs = 100;
  std::int64_t seed_infected = 1000;
  std::optional<int> start_day;
  int sim_days = 7;
  std::uint64_t seed = 0;
  double alpha = 0.4;
  double beta = 0.1;
  double latency_days = 3.0;
  double recovery_days = 7.0;
  bool dump_runs = false;
};

// Movement matrices for consecutive offsets from `start`; stops at the first
// absent day. require_full demands the whole range (the ground-truth side);
// the predicted side may legally cover a single day, which then repeats
// cyclically across the simulated week.
std::vector<mstdp::TransitionMatrices> build_cycle(const mstdp::Histories& h,
                                                   const mstdp::CityGrid& grid, int start,
                                                   int n_days, bool require_full,
                                                   const std::string& side) {
  std::vector<mstdp::TransitionMatrices> cycle;
  for (int off = 0; off < n_days; ++off) {
    std::vector<const mstdp::DailyTrajectory*> days;
    for (const auto& [uid, hist] : h) {
      auto it = hist.days.find(start + off);
      if (it != hist.days.end()) days.push_back(&it->second);
    }
    if (days.empty()) break;
    cycle.push_back(mstdp::build_transitions(days, grid));
  }
  if (cycle.empty())
    throw ContractError("epi-sim: no " + side + " trajectories at day " + std::to_string(start));
  if (require_full && static_cast<int>(cycle.size()) != n_days)
    throw ContractError("epi-sim: " + side + " side covers only " +
                        std::to_string(cycle.size()) + " of " + std::to_string(n_days) +
                        " days");
  return cycle;
}

void run_episim(const EpiOpts& o) {
  mstdp::Dataset ds = load_data(o.data_dir);
  auto census = load_census(o.data_dir);
  if (static_cast<int>(census.size()) != ds.grid.n_admins)
    throw ContractError("epi-sim: census regions do not match the city");
  mstdp::Histories pred =
      mstdp::read_trajectories(o.pred_file, ds.header, ds.grid.n_cells());
  mstdp::Histories actual =
      o.actual_file ? mstdp::read_trajectories(*o.actual_file, ds.header, ds.grid.n_cells())
                    : std::move(ds.histories);
  if (pred.empty()) throw ContractError("epi-sim: no predicted trajectories in " +
                                        o.pred_file.string());

  int start = o.start_day.value_or([&] {
    int lo = std::numeric_limits<int>::max();
    for (const auto& [uid, hist] : pred)
      if (!hist.days.empty()) lo = std::min(lo, hist.days.begin()->first);
    return lo;
  }());
  if (o.sim_days < 1) throw ContractError("epi-sim: --days must be positive");

  auto cyc_actual = build_cycle(actual, ds.grid, start, o.sim_days, true, "actual");
  auto cyc_pred = build_cycle(pred, ds.grid, start, o.sim_days, false, "predicted");

  int T = ds.header.T;
  mstdp::SeirParams params;
  params.alpha = o.alpha;
  params.beta = o.beta;
  params.p_infectious = 1.0 / (o.latency_days * T);
  params.p_removed = 1.0 / (o.recovery_days * T);
  params.validate();

  int n_steps = o.sim_days * T;
  auto mae = mstdp::ensemble_mae(cyc_actual, cyc_pred, params, census, o.runs, o.seed_infected,
                                 n_steps, o.seed);

  {
    std::ostringstream csv;
    csv << csv_header("t,mae_infectious,mae_cumulative");
    for (int t = 0; t < n_steps; ++t)
      csv << t + 1 << "," << fmt(mae.mae_infectious[t]) << "," << fmt(mae.mae_cumulative[t])
          << "\n";
    write_file(o.out_dir / "mae.csv", csv.str());
  }
  std::int64_t total = 0;
  for (auto c : census) total += c;
  ordered_json j;
  j["r0"] = params.r0();
  j["population"] = total;
  j["seed_infected"] = o.seed_infected;
  j["runs"] = o.runs;
  j["steps"] = n_steps;
  j["pred_cycle_days"] = cyc_pred.size();
  {
    ordered_json daily = ordered_json::array();
    for (int d = 1; d <= o.sim_days; ++d) daily.push_back(mae.mae_cumulative[d * T - 1]);
    j["daily_mae_cumulative"] = std::move(daily);
    j["final_mae_infectious"] = mae.mae_infectious[n_steps - 1];
    j["final_mae_cumulative"] = mae.mae_cumulative[n_steps - 1];
  }
  write_json(o.out_dir / "summary.json", j);

  if (o.dump_runs) {
    std::ostringstream csv;
    csv << csv_header("run,t,infectious_actual,cumulative_actual,infectious_pred,cumulative_pred");
    for (int r = 0; r < o.runs; ++r) {
      std::uint64_t rs = mstdp::derive_seed(o.seed, static_cast<std::uint64_t>(r));
      auto sa = mstdp::run_simulation(cyc_actual, params, census, o.seed_infected, n_steps, rs);
      auto sp = mstdp::run_simulation(cyc_pred, params, census, o.seed_infected, n_steps, rs);
      for (int t = 0; t < n_steps; ++t)
        csv << r << "," << t + 1 << "," << sa.infectious[t] << "," << sa.cumulative_cases[t]
            << "," << sp.infectious[t] << "," << sp.cumulative_cases[t] << "\n";
    }
    write_file(o.out_dir / "runs.csv", csv.str());
  }
  std::cout << "epi-sim: R0 " << fmt(params.r0()) << ", " << o.runs << " runs, final MAE(I) "
            << fmt(mae.mae_infectious[n_steps - 1]) << ", final MAE(cum) "
            << fmt(mae.mae_cumulative[n_steps - 1]) << " -> " << o.out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// report: predict + evaluate + epi-sim bundled into one directory

struct ReportOpts {
  fs::path data_dir;
  fs::path graph_file;
  fs::path ckpt;
  fs::path out_dir;
  int epi_runs = 20;
  std::int64_t seed_infected = 1000;
  std::uint64_t seed = 0;
};

void run_report(const ReportOpts& o) {
  mstdp::Dataset ds = load_data(o.data_dir);
  int test_days = ds.split.test.size();
  int week = std::min(7, test_days);

  PredictOpts pd{o.data_dir, o.graph_file, o.ckpt, o.out_dir / "pred_day.jsonl",
                 "day",      std::nullopt, std::nullopt, {}};
  run_predict(pd);
  PredictOpts pw{o.data_dir, o.graph_file, o.ckpt, o.out_dir / "pred_week.jsonl",
                 "week",     std::nullopt, std::nullopt, {}};
  run_predict(pw);

  run_evaluate({o.data_dir, o.out_dir / "pred_day.jsonl", std::nullopt, o.out_dir / "eval_day"});
  run_evaluate({o.data_dir, o.out_dir / "pred_week.jsonl", std::nullopt, o.out_dir / "eval_week"});

  EpiOpts epi;
  epi.data_dir = o.data_dir;
  epi.pred_file = o.out_dir / "pred_week.jsonl";
  epi.out_dir = o.out_dir / "epi";
  epi.runs = o.epi_runs;
  epi.seed_infected = o.seed_infected;
  epi.sim_days = week;
  epi.seed = o.seed;
  run_episim(epi);

  // Manifest: relative paths and byte sizes only, so identical reruns are
  // byte-identical directories.
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(o.out_dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      files.push_back(fs::relative(entry.path(), o.out_dir));
  std::sort(files.begin(), files.end());
  ordered_json j;
  j["seed"] = o.seed;
  j["epi_runs"] = o.epi_runs;
  j["seed_infected"] = o.seed_infected;
  ordered_json list = ordered_json::array();
  for (const auto& f : files)
    list.push_back({{"path", f.generic_string()},
                    {"bytes", fs::file_size(o.out_dir / f)}});
  j["files"] = std::move(list);
  write_json(o.out_dir / "manifest.json", j);
  std::cout << "report: " << files.size() << " files -> " << o.out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"Mid-term mobility prediction toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mstdp 0.1.0");
  std::optional<std::uint64_t> global_seed;
  std::optional<std::string> global_config;
  app.add_option("--seed", global_seed, "Default seed for subcommands that take one");
  app.add_option("--config", global_config, "Default key = value config file for train");

  SynthOpts so;
  std::string grid_spec = "20x20";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic city and trajectory corpus");
  synth->add_option("--out-dir", so.out_dir, "Dataset directory to create")->required();
  auto* so_seed = synth->add_option("--seed", so.cfg.seed, "Corpus seed");
  synth->add_option("--agents", so.cfg.n_agents, "Number of agents")
      ->capture_default_str();
  synth->add_option("--days", so.cfg.n_days, "Number of days (>= 10)")->capture_default_str();
  synth->add_option("--grid", grid_spec, "Grid size as WIDTHxHEIGHT")->capture_default_str();
  synth->add_option("--admins", so.cfg.n_admins, "Number of admin regions")
      ->capture_default_str();
  synth->add_option("--slots", so.cfg.T, "Slots per day (24 or 48)")->capture_default_str();
  synth->add_option("--epoch-weekday", so.cfg.epoch_weekday, "Weekday of day 0 (0 = Monday)")
      ->capture_default_str();
  synth->add_option("--noise", so.cfg.noise_rate, "Per-slot excursion probability")
      ->capture_default_str();
  synth->add_option("--census-multiplier", so.census_multiplier,
                    "Residents represented by each agent")
      ->capture_default_str();

  BuildGraphOpts bo;
  auto* bg = app.add_subcommand("build-graph", "Build the two-level mobility graph");
  bg->add_option("--data", bo.data_dir, "Dataset directory")->required();
  bg->add_option("--out", bo.out_file, "Graph file to write")->required();
  bg->add_option("--split", bo.split, "Day range: train, trainval, all")->capture_default_str();
  bg->add_option("--threshold-km", bo.threshold_km, "Cell adjacency distance")
      ->capture_default_str();

  TrainOpts to;
  std::string train_config;
  auto* tr = app.add_subcommand("train", "Train the predictor");
  tr->add_option("--data", to.data_dir, "Dataset directory")->required();
  tr->add_option("--graph", to.graph_file, "Graph file")->required();
  tr->add_option("--out", to.out_ckpt, "Checkpoint file to write")->required();
  tr->add_option("--log", to.log_csv, "Training log CSV (epoch, train loss, val acc)");
  auto* tr_config = tr->add_option("--config", train_config, "key = value config file");
  auto* tr_seed = tr->add_option("--seed", to.tc.seed, "Init and shuffle seed");
  auto* tr_epochs = tr->add_option("--epochs", to.tc.epochs, "Max epochs");
  auto* tr_batch = tr->add_option("--batch-size", to.tc.batch_size, "Batch size");
  auto* tr_lr = tr->add_option("--lr", to.tc.lr, "Adam learning rate");
  auto* tr_patience = tr->add_option("--patience", to.tc.patience,
                                     "Early-stop patience in epochs (0 disables)");
  auto* tr_clip = tr->add_option("--clip-norm", to.tc.clip_norm, "Gradient norm cap");
  auto* tr_noclip = tr->add_flag("--no-clip", "Disable gradient clipping");

  PredictOpts po;
  auto* pr = app.add_subcommand("predict", "Autoregressive day or week forecasts");
  pr->add_option("--data", po.data_dir, "Dataset directory")->required();
  pr->add_option("--graph", po.graph_file, "Graph file")->required();
  pr->add_option("--ckpt", po.ckpt, "Checkpoint file")->required();
  pr->add_option("--out", po.out_file, "Predictions JSONL to write")->required();
  pr->add_option("--task", po.task, "day: each target day from true history; "
                                    "week: seven days fed back autoregressively")
      ->capture_default_str();
  pr->add_option("--start-day", po.start_day, "First predicted day (default: first test day)");
  pr->add_option("--days", po.n_days, "Day task: number of target days");
  pr->add_option("--user", po.users, "Restrict to these user ids (repeatable)");

  EvaluateOpts eo;
  auto* ev = app.add_subcommand("evaluate", "Compare predictions against observed days");
  ev->add_option("--data", eo.data_dir, "Dataset directory")->required();
  ev->add_option("--pred", eo.pred_file, "Predictions JSONL")->required();
  ev->add_option("--actual", eo.actual_file,
                 "Observed JSONL (default: the dataset's trajectories)");
  ev->add_option("--report", eo.report_dir, "Report directory to write")->required();

  EpiOpts xo;
  auto* ep = app.add_subcommand("epi-sim", "Paired epidemic simulations on observed vs "
                                           "predicted movement");
  ep->add_option("--data", xo.data_dir, "Dataset directory (needs census.json)")->required();
  ep->add_option("--pred", xo.pred_file, "Predicted trajectories JSONL")->required();
  ep->add_option("--actual", xo.actual_file,
                 "Observed JSONL (default: the dataset's trajectories)");
  ep->add_option("--out", xo.out_dir, "Output directory")->required();
  ep->add_option("--runs", xo.runs, "Paired simulation runs")->capture_default_str();
  ep->add_option("--seed-infected", xo.seed_infected, "Initially infectious individuals")
      ->capture_default_str();
  ep->add_option("--start-day", xo.start_day, "First simulated day (default: first predicted)");
  ep->add_option("--days", xo.sim_days, "Simulated days")->capture_default_str();
  auto* ep_seed = ep->add_option("--seed", xo.seed, "Ensemble seed");
  ep->add_option("--alpha", xo.alpha, "Effective contact fraction")->capture_default_str();
  ep->add_option("--beta", xo.beta, "Per-contact transmission scale")->capture_default_str();
  ep->add_option("--latency-days", xo.latency_days, "Mean days from exposure to infectiousness")
      ->capture_default_str();
  ep->add_option("--recovery-days", xo.recovery_days, "Mean infectious days")
      ->capture_default_str();
  ep->add_flag("--dump-runs", xo.dump_runs, "Also write every per-run series");

  ReportOpts ro;
  auto* rp = app.add_subcommand("report", "Predict, evaluate, and simulate into one directory");
  rp->add_option("--data", ro.data_dir, "Dataset directory")->required();
  rp->add_option("--graph", ro.graph_file, "Graph file")->required();
  rp->add_option("--ckpt", ro.ckpt, "Checkpoint file")->required();
  rp->add_option("--out", ro.out_dir, "Report directory to write")->required();
  rp->add_option("--epi-runs", ro.epi_runs, "Paired epidemic runs")->capture_default_str();
  rp->add_option("--seed-infected", ro.seed_infected, "Initially infectious individuals")
      ->capture_default_str();
  auto* rp_seed = rp->add_option("--seed", ro.seed, "Ensemble seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e); // prints help or the diagnostic
    return code == 0 ? 0 : 2;
  }

  if (synth->parsed()) {
    if (!*so_seed && global_seed) so.cfg.seed = *global_seed;
    auto x = grid_spec.find('x');
    if (x == std::string::npos)
      throw ContractError("synth: --grid wants WIDTHxHEIGHT, got '" + grid_spec + "'");
    so.cfg.grid_width = static_cast<int>(to_int("grid", grid_spec.substr(0, x)));
    so.cfg.grid_height = static_cast<int>(to_int("grid", grid_spec.substr(x + 1)));
    run_synth(so);
  } else if (bg->parsed()) {
    run_build_graph(bo);
  } else if (tr->parsed()) {
    mstdp::TrainConfig tc; // defaults, then config file, then explicit flags
    mstdp::ModelConfig mc;
    std::string cfg_file = *tr_config ? train_config : global_config.value_or("");
    bool chain_len_set = false;
    if (!cfg_file.empty()) {
      auto kv = parse_kv(cfg_file);
      chain_len_set = kv.count("max_chain_len") > 0;
      apply_kv(kv, tc, mc);
    }
    if (*tr_seed) tc.seed = to.tc.seed;
    else if (global_seed) tc.seed = *global_seed;
    if (*tr_epochs) tc.epochs = to.tc.epochs;
    if (*tr_batch) tc.batch_size = to.tc.batch_size;
    if (*tr_lr) tc.lr = to.tc.lr;
    if (*tr_patience) tc.patience = to.tc.patience;
    if (*tr_clip) tc.clip_norm = to.tc.clip_norm;
    if (*tr_noclip) tc.use_clip = false;
    to.tc = tc;
    to.mc = mc;
    to.chain_len_set = chain_len_set;
    run_train(to);
  } else if (pr->parsed()) {
    run_predict(po);
  } else if (ev->parsed()) {
    run_evaluate(eo);
  } else if (ep->parsed()) {
    if (!*ep_seed && global_seed) xo.seed = *global_seed;
    run_episim(xo);
  } else if (rp->parsed()) {
    if (!*rp_seed && global_seed) ro.seed = *global_seed;
    run_report(ro);
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mstdp::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
