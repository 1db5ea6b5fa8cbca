#include "planner/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/parallel.hpp"

namespace tap::planner {

void PlanConfig::validate() const {
  require(horizon >= 1 && n_samples >= 1 && cem_iters >= 1, ErrorKind::Config,
          "planner: horizon, samples and iterations must be positive");
  require(elite_frac > 0 && elite_frac <= 1, ErrorKind::Config, "planner: elite_frac must be in (0, 1]");
  require(budget >= 1 && horizon <= budget, ErrorKind::Config, "planner: horizon must not exceed the budget");
  require(max_step > 0, ErrorKind::Config, "planner: max_step must be positive");
}

CemResult cem_optimize(std::size_t dim, const std::function<double(const std::vector<double>&)>& cost,
                       int n_samples, int iters, double elite_frac, Rng& rng, double mean0, double std0) {
  require(n_samples >= 1 && iters >= 1 && elite_frac > 0 && elite_frac <= 1, ErrorKind::Config,
          "cem: invalid sampling parameters");
  const auto n = static_cast<std::size_t>(n_samples);
  const std::size_t n_elite = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(elite_frac * n_samples)));
  std::vector<double> mean(dim, mean0), sd(dim, std0);
  CemResult r;
  for (int it = 0; it < iters; ++it) {
    std::vector<std::vector<double>> samples(n, std::vector<double>(dim));
    for (auto& s : samples)
      for (std::size_t d = 0; d < dim; ++d) s[d] = mean[d] + sd[d] * normal01(rng);
    std::vector<double> costs(n);
    parallel_for(n, [&](std::size_t i) { costs[i] = cost(samples[i]); });
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });
    if (it == 0) r.first_batch_best_cost = costs[order[0]];
    if (it == 0 || costs[order[0]] < r.best_cost) {
      r.best_cost = costs[order[0]];
      r.best = samples[order[0]];
    }
    double elite_cost = 0;
    for (std::size_t e = 0; e < n_elite; ++e) elite_cost += costs[order[e]];
    r.elite_mean_cost.push_back(elite_cost / static_cast<double>(n_elite));
    for (std::size_t d = 0; d < dim; ++d) {
      double m = 0, v = 0;
      for (std::size_t e = 0; e < n_elite; ++e) m += samples[order[e]][d];
      m /= static_cast<double>(n_elite);
      for (std::size_t e = 0; e < n_elite; ++e) v += (samples[order[e]][d] - m) * (samples[order[e]][d] - m);
      mean[d] = m;
      sd[d] = std::sqrt(v / static_cast<double>(n_elite));
    }
  }
  return r;
}

Cell to_lattice(double dx, double dy, double max_step) {
  const double mag = std::hypot(dx, dy);
  if (mag > max_step) {
    dx *= max_step / mag;
    dy *= max_step / mag;
  }
  auto q = [](double v) { return static_cast<int>(std::clamp(std::round(v), -1.0, 1.0)); };
  return {q(dx), q(dy)};
}

std::vector<PushState> rollout(const PushState& start, const std::vector<Cell>& actions) {
  worlds::validate_state(start);
  std::vector<PushState> traj{start};
  PushState s = start;
  for (const auto& a : actions) {
    require(std::abs(a.x) <= 1 && std::abs(a.y) <= 1, ErrorKind::Argument, "rollout: action outside the lattice");
    worlds::push_step(s, a.x, a.y);
    traj.push_back(s);
  }
  return traj;
}

namespace {
std::vector<Cell> decode(const std::vector<double>& v, double max_step) {
  std::vector<Cell> a(v.size() / 2);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = to_lattice(v[2 * i], v[2 * i + 1], max_step);
  return a;
}
}  // namespace

PlanChoice cem_plan(const PushState& state, const std::vector<Cell>& targets, const PlanConfig& cfg, Rng& rng) {
  cfg.validate();
  require(targets.size() == state.objects.size(), ErrorKind::Argument, "cem_plan: one target per object");
  auto cost = [&](const std::vector<double>& v) {
    PushState s = state;
    for (const auto& a : decode(v, cfg.max_step)) worlds::push_step(s, a.x, a.y);
    return worlds::placement_cost(s.objects, targets);
  };
  PlanChoice c;
  c.cem = cem_optimize(2 * static_cast<std::size_t>(cfg.horizon), cost, cfg.n_samples, cfg.cem_iters, cfg.elite_frac, rng);
  c.actions = decode(c.cem.best, cfg.max_step);
  c.cost = c.cem.best_cost;
  return c;
}

PlanResult hierarchical_episode(const PushState& start, const std::vector<Cell>& goal,
                                const std::optional<std::vector<Cell>>& subgoal, const PlanConfig& cfg) {
  cfg.validate();
  worlds::validate_state(start);
  require(goal.size() == start.objects.size(), ErrorKind::Argument, "plan: one goal per object");
  require(!subgoal || subgoal->size() == goal.size(), ErrorKind::Argument, "plan: one subgoal per object");
  PlanResult r;
  PushState s = start;
  for (int step = 0; step < cfg.budget; ++step) {
    if (s.objects == goal) break;
    const bool to_subgoal = subgoal && step < cfg.subgoal_switch();
    const auto& target = to_subgoal ? *subgoal : goal;
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), 0x504c414e));
    auto choice = cem_plan(s, target, cfg, rng);
    const Cell a = choice.actions.front();
    worlds::push_step(s, a.x, a.y);
    r.actions.push_back(a);
    r.step_costs.push_back(worlds::placement_cost(s.objects, goal));
    r.subgoal_steps.push_back(to_subgoal);
  }
  r.steps_used = static_cast<int>(r.actions.size());
  r.final_objects = s.objects;
  r.final_mean_distance = worlds::placement_cost(s.objects, goal) / static_cast<double>(goal.size());
  return r;
}

}  // namespace tap::planner
