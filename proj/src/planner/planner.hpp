#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "common/rng.hpp"
#include "synthworlds/pushworld.hpp"

namespace tap::planner {

using worlds::Cell;
using worlds::PushState;

struct PlanConfig {
  int horizon = 15;
  int n_samples = 200;
  int cem_iters = 3;
  double elite_frac = 0.1;
  int budget = 40;          // 40 for two objects, 75 for three
  double max_step = 1.5;    // action magnitude clip, in cells per step
  std::uint64_t seed = 0;

  void validate() const;
  int subgoal_switch() const { return budget / 2; }
  static int default_budget(std::size_t n_objects) { return n_objects >= 3 ? 75 : 40; }
};

struct CemResult {
  std::vector<double> best;             // best sample found over all iterations
  double best_cost = 0.0;
  double first_batch_best_cost = 0.0;   // best cost in the initial, unrefined batch
  std::vector<double> elite_mean_cost;  // per iteration
};

// Cross-entropy method over R^dim with a diagonal Gaussian, starting from N(mean0, std0^2).
CemResult cem_optimize(std::size_t dim, const std::function<double(const std::vector<double>&)>& cost,
                       int n_samples, int iters, double elite_frac, Rng& rng, double mean0 = 0.0,
                       double std0 = 1.0);

// Clips a continuous displacement to magnitude max_step, then rounds it onto the {-1,0,1}^2 lattice.
Cell to_lattice(double dx, double dy, double max_step);

std::vector<PushState> rollout(const PushState& start, const std::vector<Cell>& actions);

struct PlanChoice {
  std::vector<Cell> actions;  // lattice actions of the best sequence (length = horizon)
  double cost = 0.0;
  CemResult cem;
};
// Plans `cfg.horizon` steps towards `targets` (one anchor per object).
PlanChoice cem_plan(const PushState& state, const std::vector<Cell>& targets, const PlanConfig& cfg, Rng& rng);

struct PlanResult {
  std::vector<Cell> actions;           // executed actions
  std::vector<Cell> final_objects;
  double final_mean_distance = 0.0;    // mean Euclidean object-to-goal distance in pixels
  std::vector<double> step_costs;      // summed distance to the final goal after each step
  std::vector<bool> subgoal_steps;     // whether each step planned towards the subgoal
  int steps_used = 0;
};

// MPC: replans every step and executes the first action. With a subgoal, the first floor(B/2)
// steps steer towards it and the rest towards the goal; without one, towards the goal throughout.
// Stops early once every object sits on its goal.
PlanResult hierarchical_episode(const PushState& start, const std::vector<Cell>& goal,
                                const std::optional<std::vector<Cell>>& subgoal, const PlanConfig& cfg);

}  // namespace tap::planner
