#include "doctest.h"

#include <cmath>
#include <numeric>

#include "mstdp/epi.hpp"
#include "mstdp/synth.hpp"

using namespace mstdp;

namespace {

// One day cycle on a small synthetic city.
struct EpiFixture {
  Dataset ds;
  std::vector<std::int64_t> census;
  std::vector<TransitionMatrices> cycle;

  EpiFixture() {
    SynthConfig cfg;
    cfg.seed = 10;
    cfg.n_agents = 20;
    cfg.n_days = 10;
    cfg.grid_width = 6;
    cfg.grid_height = 6;
    cfg.n_admins = 4;
    ds = synthesize(cfg);

    census.assign(4, 0);
    for (const auto& [uid, hist] : ds.histories) {
      CellId home = hist.days.at(0).slots.front();
      census[static_cast<std::size_t>(ds.grid.admin_of(home))] += 500;
    }

    for (int d = 0; d < 2; ++d) {
      std::vector<const DailyTrajectory*> days;
      for (const auto& [uid, hist] : ds.histories) days.push_back(&hist.days.at(d));
      cycle.push_back(build_transitions(days, ds.grid));
    }
  }
};

EpiFixture& fixture() {
  static EpiFixture f;
  return f;
}

std::int64_t total_census(const EpiFixture& f) {
  return std::accumulate(f.census.begin(), f.census.end(), std::int64_t{0});
}

} // namespace

TEST_CASE("default rates give a reproduction number of 6.72") {
  SeirParams p;
  CHECK(std::abs(p.r0() - 6.72) < 1e-12);
  CHECK_NOTHROW(p.validate());

  SeirParams bad;
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = SeirParams{};
  bad.p_removed = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("movement matrices are row-stochastic and wrap overnight") {
  EpiFixture& f = fixture();
  for (const auto& tm : f.cycle) {
    REQUIRE(tm.T() == 24);
    tm.validate();
    for (const auto& m : tm.hourly)
      for (int r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).sum() - 1.0) < 1e-9);
  }

  // A region nobody ever occupies keeps its population in place.
  CityGrid g = generate_city(4, 1, 2, 1);
  DailyTrajectory day;
  day.slots.assign(24, 0); // everyone stays in admin 0
  std::vector<const DailyTrajectory*> days = {&day};
  TransitionMatrices tm = build_transitions(days, g);
  for (const auto& m : tm.hourly) {
    CHECK(m(1, 1) == 1.0);
    CHECK(m(1, 0) == 0.0);
    CHECK(m(0, 0) == 1.0);
  }

  // The last slot's matrix describes the move into the next morning.
  DailyTrajectory worker;
  worker.slots.assign(24, 2); // admin 1 nearly all day
  worker.slots[0] = 0;        // but the day starts in admin 0
  std::vector<const DailyTrajectory*> two = {&worker};
  TransitionMatrices wrap = build_transitions(two, g);
  CHECK(wrap.hourly[23](1, 0) == 1.0); // slot 23 (admin 1) -> slot 0 (admin 0)
  CHECK(wrap.hourly[0](0, 1) == 1.0);  // slot 0 (admin 0) -> slot 1 (admin 1)
}

TEST_CASE("population is conserved exactly through simulation") {
  EpiFixture& f = fixture();
  SeirParams params;
  std::int64_t total = total_census(f);

  for (int run = 0; run < 20; ++run) {
    Rng rng = make_rng(5, static_cast<std::uint64_t>(run));
    EpiState st;
    st.S = f.census;
    st.E.assign(4, 0);
    st.I.assign(4, 0);
    st.R.assign(4, 0);
    st.S[0] -= 100;
    st.I[0] = 100;

    for (int step = 0; step < 48; ++step) {
      StepResult r = seir_step(st, params, rng);
      st = std::move(r.state);
      st.validate();
      CHECK(st.total() == total);
      st = move_population(st, f.cycle[0].hourly[static_cast<std::size_t>(step % 24)], rng);
      st.validate();
      CHECK(st.total() == total);
    }
  }
}

TEST_CASE("zero transmission means zero new cases") {
  EpiFixture& f = fixture();
  SeirParams params;
  params.beta = 0.0;

  SimSeries s = run_simulation(f.cycle, params, f.census, 50, 24 * 3, 77);
  REQUIRE(s.cumulative_cases.size() == 24 * 3);
  CHECK(s.cumulative_cases.back() == 0);
  // Infectious seeds only decay.
  std::int64_t prev = 50;
  for (std::int64_t i : s.infectious) {
    CHECK(i <= prev);
    prev = i;
  }
}

TEST_CASE("one-step exposures match the binomial expectation within three sigma") {
  SeirParams params;
  std::int64_t S = 5000, I = 300;
  std::int64_t N = S + I;
  double p_exp = std::min(1.0, params.alpha * params.beta *
                                   (static_cast<double>(I) / static_cast<double>(N)));

  EpiState st;
  st.S = {S};
  st.E = {0};
  st.I = {I};
  st.R = {0};

  const int trials = 10000;
  Rng rng = make_rng(9, 0);
  double sum = 0.0;
  for (int i = 0; i < trials; ++i) {
    StepResult r = seir_step(st, params, rng);
    sum += static_cast<double>(r.state.E[0] + (r.state.I[0] - I) + (r.state.R[0]));
    // E[0] new exposures stay in E unless promoted; adding I and R growth
    // recovers the draw when promotions happened this step.
  }
  double mean = sum / trials;
  double expect = static_cast<double>(S) * p_exp;
  double sigma = std::sqrt(static_cast<double>(S) * p_exp * (1.0 - p_exp) / trials);
  CHECK(std::abs(mean - expect) <= 3.0 * sigma);
}

TEST_CASE("simulations are reproducible and ensembles of a model with itself are exact") {
  EpiFixture& f = fixture();
  SeirParams params;

  SimSeries a = run_simulation(f.cycle, params, f.census, 100, 24 * 2, 3);
  SimSeries b = run_simulation(f.cycle, params, f.census, 100, 24 * 2, 3);
  CHECK(a.infectious == b.infectious);
  CHECK(a.cumulative_cases == b.cumulative_cases);

  SimSeries c = run_simulation(f.cycle, params, f.census, 100, 24 * 2, 4);
  CHECK(a.infectious != c.infectious); // different seed, different path

  EnsembleMae mae = ensemble_mae(f.cycle, f.cycle, params, f.census, 5, 100, 24 * 2, 12);
  REQUIRE(mae.mae_infectious.size() == 48);
  for (double v : mae.mae_infectious) CHECK(v == 0.0);
  for (double v : mae.mae_cumulative) CHECK(v == 0.0);
}

TEST_CASE("cumulative cases never decrease and count promotions") {
  EpiFixture& f = fixture();
  SeirParams params;
  params.alpha = 0.9;
  params.beta = 0.5;
  SimSeries s = run_simulation(f.cycle, params, f.census, 200, 24 * 4, 21);
  std::int64_t prev = 0;
  for (std::int64_t c : s.cumulative_cases) {
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(s.cumulative_cases.back() > 0);
}

TEST_CASE("agent-level simulation conserves and matches compartment scale") {
  EpiFixture& f = fixture();
  SeirParams params;
  params.alpha = 0.8;
  params.beta = 0.4;
  std::vector<std::int64_t> small(f.census.size());
  for (std::size_t i = 0; i < small.size(); ++i) small[i] = f.census[i] / 20; // ~500 people

  SimSeries agents = run_simulation(f.cycle, params, small, 30, 24 * 3, 5, true);
  SimSeries compart = run_simulation(f.cycle, params, small, 30, 24 * 3, 5, false);
  REQUIRE(agents.infectious.size() == compart.infectious.size());

  // Same process at the same scale: cumulative case counts agree loosely.
  double ca = static_cast<double>(agents.cumulative_cases.back());
  double cc = static_cast<double>(compart.cumulative_cases.back());
  CHECK(ca > 0);
  CHECK(cc > 0);
  CHECK(ca < 4.0 * cc + 40.0);
  CHECK(cc < 4.0 * ca + 40.0);
}

TEST_CASE("seeding never exceeds the susceptible pool") {
  EpiFixture& f = fixture();
  SeirParams params;
  std::vector<std::int64_t> tiny = {3, 2, 0, 1};
  // Asking for more seeds than residents is a contract violation.
  CHECK_THROWS_AS(run_simulation(f.cycle, params, tiny, 100, 24, 2), ContractError);
  SimSeries s = run_simulation(f.cycle, params, tiny, 5, 24, 2);
  // Five residents start infectious; nobody is created from nothing.
  CHECK(s.infectious.front() <= 5);
}
