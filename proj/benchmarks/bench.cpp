#include <benchmark/benchmark.h>

#include <memory>

#include "mstdp/epi.hpp"
#include "mstdp/model.hpp"
#include "mstdp/synth.hpp"
#include "mstdp/trainer.hpp"

namespace {

using namespace mstdp;

struct Fixture {
  Dataset ds;
  HeteroGraph graph;
  NodeFeatures feats;
  std::unique_ptr<Model> model;
  std::vector<TrainSample> samples;
  Tensor table;
  std::vector<std::int64_t> census;
  std::vector<TransitionMatrices> cycle;

  Fixture() {
    SynthConfig cfg;
    cfg.n_agents = 40;
    cfg.n_days = 14;
    cfg.grid_width = 10;
    cfg.grid_height = 10;
    cfg.n_admins = 4;
    ds = synthesize(cfg);
    graph = build_graph(ds.grid, ds.histories, ds.split.train, ds.header.T);
    feats = build_features(ds.histories, ds.split.train, ds.grid, ds.header.T);

    ModelConfig mc;
    mc.d_el = 32;
    mc.d_et = 32;
    mc.d_hl = 32;
    mc.d_ht = 32;
    mc.d_region = 8;
    mc.n_heads = 4;
    mc.n_enc_layers = 1;
    mc.n_dec_layers = 1;
    mc.n_gnn_layers = 2;
    model = std::make_unique<Model>(mc, graph, feats, 7);
    samples = make_samples(ds.histories, ds.split.train, ds.header);
    table = model->location_table_frozen();

    census.assign(static_cast<std::size_t>(ds.grid.n_admins), 2000);
    std::vector<const DailyTrajectory*> days;
    for (const auto& [uid, hist] : ds.histories)
      if (auto it = hist.days.find(0); it != hist.days.end()) days.push_back(&it->second);
    cycle.push_back(build_transitions(days, ds.grid));
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_DecoupleRecouple(benchmark::State& state) {
  auto& f = fixture();
  const DailyTrajectory& day = f.ds.histories.begin()->second.days.begin()->second;
  for (auto _ : state) {
    DecoupledDay d = decouple(day);
    benchmark::DoNotOptimize(recouple(d.loc, d.dur, day.T()));
  }
}
BENCHMARK(BM_DecoupleRecouple);

void BM_GraphEmbed(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(f.model->graph_embed(t));
  }
}
BENCHMARK(BM_GraphEmbed);

void BM_SampleLossBackward(benchmark::State& state) {
  auto& f = fixture();
  const TrainSample& s = f.samples.front();
  for (auto _ : state) {
    Tape t;
    Value table = f.model->location_table(t);
    Value loss = f.model->sample_loss(t, table, s);
    f.model->params().zero_grads();
    t.backward(loss);
    benchmark::DoNotOptimize(loss.val()(0, 0));
  }
}
BENCHMARK(BM_SampleLossBackward);

void BM_DecodeDay(benchmark::State& state) {
  auto& f = fixture();
  const UserHistory& hist = f.ds.histories.begin()->second;
  int k = f.ds.split.train.end - 1;
  for (auto _ : state)
    benchmark::DoNotOptimize(f.model->predict_next_day(hist, k, f.table, f.ds.header));
}
BENCHMARK(BM_DecodeDay);

void BM_SeirStep(benchmark::State& state) {
  auto& f = fixture();
  SeirParams params;
  Rng rng(1);
  EpiState st;
  st.S.assign(f.census.begin(), f.census.end());
  st.E.assign(f.census.size(), 50);
  st.I.assign(f.census.size(), 100);
  st.R.assign(f.census.size(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(seir_step(st, params, rng));
}
BENCHMARK(BM_SeirStep);

void BM_MovePopulation(benchmark::State& state) {
  auto& f = fixture();
  Rng rng(1);
  EpiState st;
  st.S.assign(f.census.begin(), f.census.end());
  st.E.assign(f.census.size(), 50);
  st.I.assign(f.census.size(), 100);
  st.R.assign(f.census.size(), 0);
  const auto& m = f.cycle.front().hourly.front();
  for (auto _ : state) benchmark::DoNotOptimize(move_population(st, m, rng));
}
BENCHMARK(BM_MovePopulation);

} // namespace

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
