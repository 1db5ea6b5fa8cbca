#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "doctest.h"
#include "planner/planner.hpp"
#include "synthworlds/worlds.hpp"

using namespace tap;
using namespace tap::planner;

namespace {

PushState start_of(const worlds::Episode& e) {
  return PushState{16, e.positions.front()[0], {e.positions.front().begin() + 1, e.positions.front().end()}};
}
std::vector<Cell> goal_of(const worlds::Episode& e) { return {e.positions.back().begin() + 1, e.positions.back().end()}; }

}  // namespace

TEST_CASE("lattice projection") {
  CHECK(to_lattice(0.2, -0.3, 1.5) == Cell{0, 0});
  CHECK(to_lattice(0.9, 0.1, 1.5) == Cell{1, 0});
  CHECK(to_lattice(5.0, 5.0, 1.5) == Cell{1, 1});
  CHECK(to_lattice(-3.0, 0.4, 1.5) == Cell{-1, 0});
  // Clipping happens before rounding: (2, 0.6) shrinks to (1.39, 0.42).
  CHECK(to_lattice(2.0, 0.6, 1.5) == Cell{1, 0});
}

TEST_CASE("rollout") {
  PushState s{16, {2, 3}, {{3, 3}, {9, 9}}};
  auto same = rollout(s, {});
  REQUIRE(same.size() == 1);
  CHECK(same[0] == s);
  auto t = rollout(s, {{1, 0}});
  CHECK(t.back().objects[0] == Cell{4, 3});
  CHECK(rollout(s, {{1, 0}, {0, 1}, {-1, -1}}) == rollout(s, {{1, 0}, {0, 1}, {-1, -1}}));
  CHECK_THROWS_AS(rollout(s, {{2, 0}}), Error);
  CHECK_THROWS_AS(rollout(PushState{16, {20, 0}, {}}, {}), Error);
}

TEST_CASE("plan config validation") {
  PlanConfig c;
  CHECK_NOTHROW(c.validate());
  c.elite_frac = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = PlanConfig{};
  c.horizon = 50;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(PlanConfig::default_budget(2) == 40);
  CHECK(PlanConfig::default_budget(3) == 75);
  CHECK(PlanConfig{}.subgoal_switch() == 20);
}

TEST_CASE("zero-cost plan when already at the target") {
  PushState s{16, {0, 0}, {{6, 6}, {10, 2}}};
  PlanConfig cfg;
  Rng rng(1);
  auto c = cem_plan(s, s.objects, cfg, rng);
  CHECK(c.cost == 0.0);
  CHECK(worlds::placement_cost(rollout(s, c.actions).back().objects, s.objects) == 0.0);
  auto r = hierarchical_episode(s, s.objects, std::nullopt, cfg);
  CHECK(r.final_mean_distance == 0.0);
  CHECK(r.steps_used == 0);
}

TEST_CASE("CEM recovers the enumerated optimal single action") {
  PushState s{16, {5, 5}, {{6, 4}}};
  const std::vector<Cell> target{{7, 4}};
  // Oracle: enumerate the 3x3 action lattice.
  std::vector<Cell> optimal;
  double best = 1e9;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy) {
      const double c = worlds::placement_cost(rollout(s, {{dx, dy}}).back().objects, target);
      if (c < best - 1e-12) {
        best = c;
        optimal = {{dx, dy}};
      } else if (std::abs(c - best) <= 1e-12) {
        optimal.push_back({dx, dy});
      }
    }
  REQUIRE(optimal.size() == 1);
  CHECK(best == 0.0);
  PlanConfig cfg;
  cfg.horizon = 1;
  cfg.budget = 1;
  int hits = 0;
  const int seeds = 200;
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    hits += cem_plan(s, target, cfg, rng).actions.front() == optimal.front();
  }
  MESSAGE("single-action recovery rate " << double(hits) / seeds);
  CHECK(double(hits) / seeds >= 0.99);
}

TEST_CASE("CEM on a convex cost") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::vector<double> centre{1.5, -2.0, 0.5, 3.0};
    auto cost = [&](const std::vector<double>& x) {
      double c = 0;
      for (std::size_t i = 0; i < x.size(); ++i) c += (x[i] - centre[i]) * (x[i] - centre[i]);
      return c;
    };
    auto r = cem_optimize(4, cost, 200, 5, 0.1, rng);
    for (std::size_t i = 1; i < r.elite_mean_cost.size(); ++i) CHECK(r.elite_mean_cost[i] < r.elite_mean_cost[i - 1]);
    CHECK(r.best_cost <= r.first_batch_best_cost);
    CHECK(r.best_cost == cost(r.best));
  }
}

TEST_CASE("hierarchical episodes") {
  auto d = worlds::gen_gridpush(17, 50, 2);
  PlanConfig cfg;
  cfg.budget = 40;
  std::size_t improved = 0;
  for (std::size_t i = 0; i < d.episodes.size(); ++i) {
    const auto& e = d.episodes[i];
    cfg.seed = i;
    const PushState s = start_of(e);
    const auto goal = goal_of(e);
    auto r = hierarchical_episode(s, goal, std::nullopt, cfg);
    CHECK(r.steps_used <= cfg.budget);
    CHECK(r.final_mean_distance >= 0.0);
    const double initial = worlds::placement_cost(s.objects, goal) / 2;
    CHECK(r.final_mean_distance <= initial);
    improved += r.final_mean_distance < initial;
    CHECK(rollout(s, r.actions).back().objects == r.final_objects);

    if (i < 5) {
      auto same_goal = hierarchical_episode(s, goal, goal, cfg);
      CHECK(same_goal.actions == r.actions);
      CHECK(same_goal.final_mean_distance == r.final_mean_distance);
      auto again = hierarchical_episode(s, goal, std::nullopt, cfg);
      CHECK(again.actions == r.actions);
      CHECK(again.step_costs == r.step_costs);

      auto sub = hierarchical_episode(s, goal, s.objects, cfg);
      for (int k = 0; k < sub.steps_used; ++k) CHECK(sub.subgoal_steps[static_cast<std::size_t>(k)] == (k < cfg.subgoal_switch()));
      CHECK(sub.steps_used == cfg.budget);
    }
  }
  MESSAGE("episodes with reduced distance: " << improved << "/50");
}
