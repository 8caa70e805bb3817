#pragma once

#include <cstdint>
#include <vector>

#include "mstdp/grid.hpp"
#include "mstdp/rng.hpp"
#include "mstdp/tensor.hpp"
#include "mstdp/trajectory.hpp"

namespace mstdp {

struct SeirParams {
  double alpha = 0.4;                    // effective contact fraction
  double beta = 0.1;                     // per-contact transmission scale
  double p_infectious = 1.0 / (3 * 24);  // E -> I per step (3 day latency)
  double p_removed = 1.0 / (7 * 24);     // I -> R per step (7 day recovery)

  double r0() const { return alpha * beta / p_removed; }
  void validate() const;
};

// Compartment counts per admin region.
struct EpiState {
  std::vector<std::int64_t> S, E, I, R;

  std::size_t n_regions() const { return S.size(); }
  std::int64_t total() const;
  std::int64_t total_infectious() const;
  void validate() const;
};

// One row-stochastic region movement matrix per slot of the day; slot t
// describes moves from slot t to slot t+1 (wrapping to the next morning).
struct TransitionMatrices {
  std::vector<Eigen::MatrixXd> hourly;

  int T() const { return static_cast<int>(hourly.size()); }
  void validate() const;
};

// Observed admin-level transition frequencies of the given days. Regions
// with no observed departures at a slot keep their population (identity
// row).
TransitionMatrices build_transitions(const std::vector<const DailyTrajectory*>& days,
                                     const CityGrid& grid);

struct StepResult {
  EpiState state;
  std::int64_t new_infectious = 0;
};

// Binomial SEIR transitions within each region: exposure probability
// min(1, alpha * beta * I / N), then E -> I and I -> R.
StepResult seir_step(const EpiState& state, const SeirParams& params, Rng& rng);

// Multinomial redistribution of every compartment along matrix rows.
// Population is conserved exactly.
EpiState move_population(const EpiState& state, const Eigen::MatrixXd& matrix, Rng& rng);

struct SimSeries {
  std::vector<std::int64_t> infectious;        // per step, after movement
  std::vector<std::int64_t> cumulative_cases;  // running count of E -> I events
};

// Seeds n_seed infectious proportionally to the census, then alternates
// seir_step and move_population for n_steps. day_cycle is indexed by day
// modulo its size. agent_mode runs the same process per individual instead
// of per compartment (slow; small populations only).
SimSeries run_simulation(const std::vector<TransitionMatrices>& day_cycle,
                         const SeirParams& params, const std::vector<std::int64_t>& census,
                         std::int64_t n_seed, int n_steps, std::uint64_t seed,
                         bool agent_mode = false);

struct EnsembleMae {
  std::vector<double> mae_infectious;
  std::vector<double> mae_cumulative;
};

// Runs n_runs paired simulations (identical per-run seeds on both sides) and
// reports the mean absolute difference of the two series at each step.
EnsembleMae ensemble_mae(const std::vector<TransitionMatrices>& actual,
                         const std::vector<TransitionMatrices>& predicted,
                         const SeirParams& params, const std::vector<std::int64_t>& census,
                         int n_runs, std::int64_t n_seed, int n_steps, std::uint64_t seed);

} // namespace mstdp
