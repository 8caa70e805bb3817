#include "doctest.h"

#include <cmath>

#include "mstdp/model.hpp"
#include "mstdp/trainer.hpp"

using namespace mstdp;

namespace {

// Four cells on a line split into two admin regions, two habitual users.
struct Micro {
  CityGrid grid;
  DatasetHeader header{24, 0, 10, 2};
  Histories histories;
  HeteroGraph graph;
  NodeFeatures feats;
  ModelConfig cfg;

  Micro() {
    grid.width = 4;
    grid.height = 1;
    grid.n_admins = 2;
    grid.cell_admin = {0, 0, 1, 1};
    grid.validate();

    auto day_of = [&](UserId u, int d, CellId home, CellId work) {
      DailyTrajectory day;
      day.user = u;
      day.day_index = d;
      day.weekday = header.weekday_of(d);
      bool weekend = day.weekday >= 5;
      for (int s = 0; s < 24; ++s) {
        CellId c = home;
        if (!weekend && s >= 8 && s < 17) c = work;
        day.slots.push_back(c);
      }
      return day;
    };
    for (int d = 0; d < 10; ++d) {
      histories[0].days[d] = day_of(0, d, 0, 2);
      histories[1].days[d] = day_of(1, d, 3, 1);
    }
    histories[0].user = 0;
    histories[1].user = 1;

    graph = build_graph(grid, histories, {0, 6}, 24);
    feats = build_features(histories, {0, 6}, grid, 24);

    cfg.T = 24;
    cfg.max_chain_len = 8;
    cfg.d_el = 8;
    cfg.d_et = 8;
    cfg.d_hl = 8;
    cfg.d_ht = 8;
    cfg.d_region = 4;
    cfg.n_heads = 2;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.n_gnn_layers = 1;
  }
};

Micro& micro() {
  static Micro m;
  return m;
}

} // namespace

TEST_CASE("model construction is deterministic in the seed") {
  Micro& m = micro();
  Model a(m.cfg, m.graph, m.feats, 42);
  Model b(m.cfg, m.graph, m.feats, 42);
  Model c(m.cfg, m.graph, m.feats, 43);

  REQUIRE(a.params().names() == b.params().names());
  bool all_equal = true, any_diff_seed = false;
  for (const auto& name : a.params().names()) {
    if ((a.params().value(name) - b.params().value(name)).norm() != 0.0) all_equal = false;
    if ((a.params().value(name) - c.params().value(name)).norm() != 0.0) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
  CHECK(a.params().scalar_count() > 0);
}

TEST_CASE("the location table stacks cell embeddings and the special tokens") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 1);

  Tape t;
  Value table = model.location_table(t);
  CHECK(table.rows() == m.grid.n_cells() + 3);
  CHECK(table.cols() == m.cfg.d_el);

  Tensor frozen = model.location_table_frozen();
  CHECK((frozen - table.val()).norm() == doctest::Approx(0.0));

  CHECK(model.in_sos() == 4);
  CHECK(model.in_eos() == 5);
  CHECK(model.in_pad() == 6);
  CHECK(model.out_eos() == 4);
  CHECK(model.n_out_classes() == 5);
}

TEST_CASE("window chains carry weekday labels for absent days too") {
  Micro& m = micro();
  UserHistory sparse;
  sparse.user = 7;
  sparse.days[3] = m.histories.at(0).days.at(3);
  sparse.days[5] = m.histories.at(0).days.at(5);

  WindowChains w = window_chains(history_window(sparse, 6), m.header);
  CHECK(w.present_count() == 2);
  REQUIRE(w.days[3].has_value()); // day 3 sits at position 3 of the 0..6 window
  REQUIRE(w.days[5].has_value());
  CHECK(!w.days[0].has_value());
  for (int i = 0; i < 7; ++i) CHECK(w.weekdays[i] == m.header.weekday_of(i));
  CHECK(w.days[3]->loc.locations.front() == 0);
}

TEST_CASE("samples pair each target day with its trailing window") {
  Micro& m = micro();
  auto samples = make_samples(m.histories, {7, 10}, m.header);
  REQUIRE(samples.size() == 6); // 2 users x days 7, 8, 9
  for (const auto& s : samples) {
    CHECK(s.target_day >= 7);
    CHECK(s.target_day < 10);
    CHECK(s.target_weekday == m.header.weekday_of(s.target_day));
    CHECK(s.window.present_count() == 7);
    CHECK(!s.target.loc.locations.empty());
  }
}

TEST_CASE("sample losses are finite and decoding yields a valid day") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 3);
  auto samples = make_samples(m.histories, {7, 10}, m.header);

  Tape t;
  Value table = model.location_table(t);
  Value loss = model.sample_loss(t, table, samples.front());
  CHECK(std::isfinite(loss.val()(0, 0)));
  CHECK(loss.val()(0, 0) > 0.0);

  Tensor frozen = model.location_table_frozen();
  auto decoded = model.decode_chains(samples.front().window, frozen);
  REQUIRE(!decoded.loc.locations.empty());
  CHECK(decoded.loc.locations.size() == decoded.raw_durations.size());
  for (CellId c : decoded.loc.locations) {
    CHECK(c >= 0);
    CHECK(c < m.grid.n_cells()); // the end token never lands in the chain
  }
}

TEST_CASE("duration repair rounds to a positive integer partition of the day") {
  CHECK(Model::repair_durations({0.2, 0.2}, 24).durations == std::vector<int>{12, 12});
  CHECK(Model::repair_durations({3.0, 21.0}, 24).durations == std::vector<int>{3, 21});
  CHECK(Model::repair_durations({1.0, 1.0, 1.0}, 24).durations == std::vector<int>{8, 8, 8});
  CHECK(Model::repair_durations({50.0}, 24).durations == std::vector<int>{24});

  auto long_day = Model::repair_durations({30.0, 1.0}, 24);
  CHECK(long_day.total() == 24);
  for (int d : long_day.durations) CHECK(d >= 1);

  auto crowded = Model::repair_durations(std::vector<double>(24, 0.01), 24);
  CHECK(crowded.total() == 24);
  CHECK(crowded.durations == std::vector<int>(24, 1));

  CHECK_THROWS_AS(Model::repair_durations(std::vector<double>(25, 1.0), 24), ContractError);
  CHECK_THROWS_AS(Model::repair_durations({}, 24), ContractError);
}

TEST_CASE("weekly encoding ignores whatever sits at masked days") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 5);

  std::array<bool, 7> present{true, false, true, true, false, true, true};
  std::array<int, 7> weekdays{0, 1, 2, 3, 4, 5, 6};

  auto run = [&](double garbage) {
    Tape t;
    Rng rng = make_rng(99, 0);
    std::array<Value, 7> h_loc, h_dur;
    for (int i = 0; i < 7; ++i) {
      Tensor base = gaussian(1, m.cfg.d_hl, 1.0, rng); // same draw either call
      Tensor based = gaussian(1, m.cfg.d_ht, 1.0, rng);
      if (!present[static_cast<std::size_t>(i)]) {
        base.setConstant(garbage);
        based.setConstant(-garbage);
      }
      h_loc[static_cast<std::size_t>(i)] = t.constant(base);
      h_dur[static_cast<std::size_t>(i)] = t.constant(based);
    }
    auto z = model.weekly_encode(t, h_loc, h_dur, present, weekdays);
    return std::make_pair(Tensor(z.z_loc.val()), Tensor(z.z_dur.val()));
  };

  auto [zl1, zd1] = run(123.0);
  auto [zl2, zd2] = run(-4567.0);
  CHECK((zl1 - zl2).norm() == 0.0);
  CHECK((zd1 - zd2).norm() == 0.0);
}

TEST_CASE("teacher-forced decoder logits cover prefix positions and classes") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 6);
  auto samples = make_samples(m.histories, {7, 10}, m.header);

  Tape t;
  Value table = model.location_table(t);
  auto z = model.encode_window(t, table, samples.front().window);
  Value logits = model.spatial_logits(t, z.z_loc, table, {0, 2, 0});
  CHECK(logits.rows() == 4); // start token plus three prefix tokens
  CHECK(logits.cols() == model.n_out_classes());

  Value emb = t.gather_rows(table, {0, 2, 0});
  Value durs = model.temporal_durations(t, z.z_dur, emb);
  CHECK(durs.rows() == 3);
  CHECK(durs.cols() == 1);
}

TEST_CASE("next-day predictions are well-formed trajectories") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 7);
  Tensor frozen = model.location_table_frozen();

  DailyTrajectory day = model.predict_next_day(m.histories.at(0), 6, frozen, m.header);
  CHECK(day.user == 0);
  CHECK(day.day_index == 7);
  CHECK(day.weekday == m.header.weekday_of(7));
  CHECK(day.predicted);
  validate_trajectory(day, 24, m.grid.n_cells());

  auto week = model.predict_next_week(m.histories.at(1), 2, frozen, m.header);
  REQUIRE(week.size() == 7);
  for (int i = 0; i < 7; ++i) {
    const DailyTrajectory& d = week[static_cast<std::size_t>(i)];
    CHECK(d.day_index == 3 + i);
    CHECK(d.weekday == m.header.weekday_of(3 + i));
    CHECK(d.predicted);
    CHECK(d.user == 1);
    validate_trajectory(d, 24, m.grid.n_cells());
  }
}

TEST_CASE("model config text round trips and validates") {
  ModelConfig cfg = micro().cfg;
  std::string text = config_to_text(cfg);
  ModelConfig back = config_from_text(text);
  CHECK(back.d_el == cfg.d_el);
  CHECK(back.d_hl == cfg.d_hl);
  CHECK(back.n_heads == cfg.n_heads);
  CHECK(back.lambda == cfg.lambda);
  CHECK(back.max_chain_len == cfg.max_chain_len);

  ModelConfig bad = cfg;
  bad.T = 23;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.d_hl = 7; // not divisible by two heads
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("a checkpoint restores an identical model") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 8);
  auto file = std::filesystem::temp_directory_path() / "mstdp_test_model_ckpt.bin";
  save_checkpoint(file, model, "{}");
  Model back = load_checkpoint(file, m.graph, m.feats);
  std::filesystem::remove(file);

  REQUIRE(back.params().names() == model.params().names());
  for (const auto& name : model.params().names())
    CHECK((back.params().value(name) - model.params().value(name)).norm() == 0.0);

  Tensor ft = model.location_table_frozen();
  Tensor fb = back.location_table_frozen();
  CHECK((ft - fb).norm() == 0.0);

  DailyTrajectory d1 = model.predict_next_day(m.histories.at(0), 6, ft, m.header);
  DailyTrajectory d2 = back.predict_next_day(m.histories.at(0), 6, fb, m.header);
  CHECK(d1.slots == d2.slots);
}

TEST_CASE("a store with the wrong shapes is rejected") {
  Micro& m = micro();
  Model model(m.cfg, m.graph, m.feats, 9);
  auto file = std::filesystem::temp_directory_path() / "mstdp_test_wrong_ckpt.bin";
  save_checkpoint(file, model, "{}");

  // Same checkpoint, different graph: cell count changes, shapes no longer fit.
  CityGrid other = m.grid;
  other.width = 5;
  other.cell_admin = {0, 0, 1, 1, 1};
  other.validate();
  Histories hs;
  hs[0].user = 0;
  DailyTrajectory day;
  day.user = 0;
  day.day_index = 0;
  day.weekday = 0;
  day.slots.assign(24, 4);
  hs[0].days[0] = day;
  HeteroGraph g2 = build_graph(other, hs, {0, 1}, 24);
  NodeFeatures f2 = build_features(hs, {0, 1}, other, 24);
  CHECK_THROWS_AS(load_checkpoint(file, g2, f2), ContractError);
  std::filesystem::remove(file);
}
