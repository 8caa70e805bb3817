#include "mstdp/epi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mstdp {

void SeirParams::validate() const {
  for (double p : {alpha, beta, p_infectious, p_removed})
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("seir: probabilities must be in [0, 1]");
  if (p_removed <= 0) throw ContractError("seir: p_removed must be positive");
}

std::int64_t EpiState::total() const {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < S.size(); ++i) t += S[i] + E[i] + I[i] + R[i];
  return t;
}

std::int64_t EpiState::total_infectious() const {
  return std::accumulate(I.begin(), I.end(), std::int64_t{0});
}

void EpiState::validate() const {
  if (S.empty() || E.size() != S.size() || I.size() != S.size() || R.size() != S.size())
    throw ContractError("seir: compartment size mismatch");
  for (std::size_t i = 0; i < S.size(); ++i)
    if (S[i] < 0 || E[i] < 0 || I[i] < 0 || R[i] < 0)
      throw ContractError("seir: negative compartment");
}

void TransitionMatrices::validate() const {
  if (hourly.empty()) throw ContractError("transitions: empty");
  auto n = hourly.front().rows();
  for (const auto& m : hourly) {
    if (m.rows() != n || m.cols() != n) throw ContractError("transitions: shape mismatch");
    for (Eigen::Index r = 0; r < n; ++r) {
      double sum = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) {
        if (m(r, c) < 0) throw ContractError("transitions: negative entry");
        sum += m(r, c);
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ContractError("transitions: row does not sum to 1");
    }
  }
}

TransitionMatrices build_transitions(const std::vector<const DailyTrajectory*>& days,
                                     const CityGrid& grid) {
  if (days.empty()) throw ContractError("transitions: no trajectories");
  int T = days.front()->T();
  int A = grid.n_admins;
  std::vector<Eigen::MatrixXd> counts(static_cast<std::size_t>(T),
                                      Eigen::MatrixXd::Zero(A, A));
  for (const DailyTrajectory* day : days) {
    if (day->T() != T) throw ContractError("transitions: slot counts differ");
    for (int s = 0; s < T; ++s) {
      int from = grid.admin_of(day->slots[static_cast<std::size_t>(s)]);
      int to = grid.admin_of(day->slots[static_cast<std::size_t>((s + 1) % T)]);
      counts[static_cast<std::size_t>(s)](from, to) += 1.0;
    }
  }
  TransitionMatrices out;
  out.hourly.reserve(counts.size());
  for (auto& m : counts) {
    for (int r = 0; r < A; ++r) {
      double sum = m.row(r).sum();
      if (sum > 0)
        m.row(r) /= sum;
      else
        m(r, r) = 1.0;
    }
    out.hourly.push_back(std::move(m));
  }
  out.validate();
  return out;
}

namespace {

std::int64_t draw_binomial(std::int64_t n, double p, Rng& rng) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  std::binomial_distribution<std::int64_t> d(n, p);
  return d(rng);
}

// Multinomial via sequential binomials over a probability row.
std::vector<std::int64_t> split_multinomial(std::int64_t n, const Eigen::VectorXd& probs,
                                            Rng& rng) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(probs.size()), 0);
  std::int64_t remaining = n;
  double rest = 1.0;
  for (Eigen::Index j = 0; j < probs.size() && remaining > 0; ++j) {
    double p = probs(j);
    if (p <= 0) continue;
    if (j == probs.size() - 1 || rest - p <= 1e-12) {
      out[static_cast<std::size_t>(j)] += remaining;
      remaining = 0;
      break;
    }
    std::int64_t take = draw_binomial(remaining, std::min(1.0, p / rest), rng);
    out[static_cast<std::size_t>(j)] += take;
    remaining -= take;
    rest -= p;
  }
  if (remaining > 0) {
    // Row did not exhaust its mass (numerical slack); keep the rest in place
    // of the largest-probability destination.
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    out[static_cast<std::size_t>(best)] += remaining;
  }
  return out;
}

} // namespace

StepResult seir_step(const EpiState& state, const SeirParams& params, Rng& rng) {
  state.validate();
  params.validate();
  StepResult res;
  res.state = state;
  for (std::size_t i = 0; i < state.S.size(); ++i) {
    std::int64_t n = state.S[i] + state.E[i] + state.I[i] + state.R[i];
    if (n == 0) continue;
    double p_exp = std::min(
        1.0, params.alpha * params.beta * static_cast<double>(state.I[i]) /
                 static_cast<double>(n));
    std::int64_t new_e = draw_binomial(state.S[i], p_exp, rng);
    std::int64_t new_i = draw_binomial(state.E[i], params.p_infectious, rng);
    std::int64_t new_r = draw_binomial(state.I[i], params.p_removed, rng);
    res.state.S[i] -= new_e;
    res.state.E[i] += new_e - new_i;
    res.state.I[i] += new_i - new_r;
    res.state.R[i] += new_r;
    res.new_infectious += new_i;
  }
  return res;
}

EpiState move_population(const EpiState& state, const Eigen::MatrixXd& matrix, Rng& rng) {
  state.validate();
  auto n = static_cast<Eigen::Index>(state.n_regions());
  if (matrix.rows() != n || matrix.cols() != n)
    throw ContractError("move: matrix does not match region count");
  EpiState out;
  out.S.assign(state.n_regions(), 0);
  out.E.assign(state.n_regions(), 0);
  out.I.assign(state.n_regions(), 0);
  out.R.assign(state.n_regions(), 0);
  const std::vector<std::int64_t>* sources[4] = {&state.S, &state.E, &state.I, &state.R};
  std::vector<std::int64_t>* sinks[4] = {&out.S, &out.E, &out.I, &out.R};
  for (std::size_t comp = 0; comp < 4; ++comp) {
    for (Eigen::Index i = 0; i < n; ++i) {
      std::int64_t count = (*sources[comp])[static_cast<std::size_t>(i)];
      if (count == 0) continue;
      auto parts = split_multinomial(count, matrix.row(i).transpose(), rng);
      for (std::size_t j = 0; j < parts.size(); ++j) (*sinks[comp])[j] += parts[j];
    }
  }
  return out;
}

namespace {

EpiState seeded_state(const std::vector<std::int64_t>& census, std::int64_t n_seed, Rng& rng) {
  if (census.empty()) throw ContractError("simulate: empty census");
  std::int64_t total = 0;
  for (std::int64_t c : census) {
    if (c < 0) throw ContractError("simulate: negative census");
    total += c;
  }
  if (total <= 0) throw ContractError("simulate: empty population");
  if (n_seed < 0 || n_seed > total) throw ContractError("simulate: bad seed count");
  EpiState st;
  st.S.assign(census.begin(), census.end());
  st.E.assign(census.size(), 0);
  st.I.assign(census.size(), 0);
  st.R.assign(census.size(), 0);
  Eigen::VectorXd probs(static_cast<Eigen::Index>(census.size()));
  for (std::size_t i = 0; i < census.size(); ++i)
    probs(static_cast<Eigen::Index>(i)) = static_cast<double>(census[i]) /
                                          static_cast<double>(total);
  auto seeds = split_multinomial(n_seed, probs, rng);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    std::int64_t k = std::min(seeds[i], st.S[i]);
    st.S[i] -= k;
    st.I[i] += k;
  }
  return st;
}

struct AgentSim {
  // Agent-level variant: one entry per person, compartment coded 0..3.
  std::vector<std::int8_t> comp;
  std::vector<int> region;
};

SimSeries run_agents(const std::vector<TransitionMatrices>& day_cycle, const SeirParams& params,
                     const EpiState& init, int n_steps, Rng& rng) {
  AgentSim sim;
  auto regions = static_cast<int>(init.n_regions());
  for (int i = 0; i < regions; ++i) {
    auto add = [&](std::int64_t count, std::int8_t c) {
      for (std::int64_t k = 0; k < count; ++k) {
        sim.comp.push_back(c);
        sim.region.push_back(i);
      }
    };
    add(init.S[static_cast<std::size_t>(i)], 0);
    add(init.E[static_cast<std::size_t>(i)], 1);
    add(init.I[static_cast<std::size_t>(i)], 2);
    add(init.R[static_cast<std::size_t>(i)], 3);
  }
  int T = day_cycle.front().T();
  SimSeries series;
  std::int64_t cumulative = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int step = 0; step < n_steps; ++step) {
    const auto& mats = day_cycle[static_cast<std::size_t>((step / T) % day_cycle.size())];
    const Eigen::MatrixXd& P = mats.hourly[static_cast<std::size_t>(step % T)];
    std::vector<std::int64_t> n_by_region(static_cast<std::size_t>(regions), 0);
    std::vector<std::int64_t> i_by_region(static_cast<std::size_t>(regions), 0);
    for (std::size_t a = 0; a < sim.comp.size(); ++a) {
      n_by_region[static_cast<std::size_t>(sim.region[a])] += 1;
      if (sim.comp[a] == 2) i_by_region[static_cast<std::size_t>(sim.region[a])] += 1;
    }
    for (std::size_t a = 0; a < sim.comp.size(); ++a) {
      auto r = static_cast<std::size_t>(sim.region[a]);
      switch (sim.comp[a]) {
        case 0: {
          double p_exp = std::min(1.0, params.alpha * params.beta *
                                           static_cast<double>(i_by_region[r]) /
                                           static_cast<double>(n_by_region[r]));
          if (u(rng) < p_exp) sim.comp[a] = 1;
          break;
        }
        case 1:
          if (u(rng) < params.p_infectious) {
            sim.comp[a] = 2;
            ++cumulative;
          }
          break;
        case 2:
          if (u(rng) < params.p_removed) sim.comp[a] = 3;
          break;
        default:
          break;
      }
    }
    for (std::size_t a = 0; a < sim.comp.size(); ++a) {
      double roll = u(rng);
      double acc = 0.0;
      int dest = sim.region[a];
      for (int j = 0; j < regions; ++j) {
        acc += P(sim.region[a], j);
        if (roll < acc) {
          dest = j;
          break;
        }
      }
      sim.region[a] = dest;
    }
    std::int64_t infectious = 0;
    for (std::int8_t c : sim.comp) infectious += c == 2 ? 1 : 0;
    series.infectious.push_back(infectious);
    series.cumulative_cases.push_back(cumulative);
  }
  return series;
}

} // namespace

SimSeries run_simulation(const std::vector<TransitionMatrices>& day_cycle,
                         const SeirParams& params, const std::vector<std::int64_t>& census,
                         std::int64_t n_seed, int n_steps, std::uint64_t seed,
                         bool agent_mode) {
  if (day_cycle.empty()) throw ContractError("simulate: no transition matrices");
  params.validate();
  int T = day_cycle.front().T();
  for (const auto& d : day_cycle) {
    d.validate();
    if (d.T() != T) throw ContractError("simulate: day cycles disagree on T");
    if (d.hourly.front().rows() != static_cast<Eigen::Index>(census.size()))
      throw ContractError("simulate: matrices do not match census regions");
  }
  if (n_steps < 1) throw ContractError("simulate: need at least one step");

  Rng rng(mix64(seed));
  EpiState state = seeded_state(census, n_seed, rng);
  if (agent_mode) return run_agents(day_cycle, params, state, n_steps, rng);

  SimSeries series;
  std::int64_t cumulative = 0;
  for (int step = 0; step < n_steps; ++step) {
    StepResult r = seir_step(state, params, rng);
    cumulative += r.new_infectious;
    const auto& mats = day_cycle[static_cast<std::size_t>((step / T) % day_cycle.size())];
    state = move_population(r.state, mats.hourly[static_cast<std::size_t>(step % T)], rng);
    series.infectious.push_back(state.total_infectious());
    series.cumulative_cases.push_back(cumulative);
  }
  return series;
}

EnsembleMae ensemble_mae(const std::vector<TransitionMatrices>& actual,
                         const std::vector<TransitionMatrices>& predicted,
                         const SeirParams& params, const std::vector<std::int64_t>& census,
                         int n_runs, std::int64_t n_seed, int n_steps, std::uint64_t seed) {
  if (n_runs < 1) throw ContractError("ensemble: need at least one run");
  EnsembleMae out;
  out.mae_infectious.assign(static_cast<std::size_t>(n_steps), 0.0);
  out.mae_cumulative.assign(static_cast<std::size_t>(n_steps), 0.0);
  for (int r = 0; r < n_runs; ++r) {
    std::uint64_t run_seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    SimSeries sa = run_simulation(actual, params, census, n_seed, n_steps, run_seed);
    SimSeries sp = run_simulation(predicted, params, census, n_seed, n_steps, run_seed);
    for (int s = 0; s < n_steps; ++s) {
      auto us = static_cast<std::size_t>(s);
      out.mae_infectious[us] += std::abs(
          static_cast<double>(sa.infectious[us] - sp.infectious[us]));
      out.mae_cumulative[us] += std::abs(
          static_cast<double>(sa.cumulative_cases[us] - sp.cumulative_cases[us]));
    }
  }
  for (auto& v : out.mae_infectious) v /= n_runs;
  for (auto& v : out.mae_cumulative) v /= n_runs;
  return out;
}

} // namespace mstdp
