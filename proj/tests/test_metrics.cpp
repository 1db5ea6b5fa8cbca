#include <algorithm>
#include <cmath>
#include <filesystem>

#include "autodiff/ops.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "doctest.h"
#include "io/binary.hpp"
#include "metrics/metrics.hpp"

using namespace tap;
using namespace tap::ad;
using namespace tap::metrics;
using tap::worlds::Cell;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

loss::TargetSet range_set(std::size_t first, std::size_t count) {
  loss::TargetSet s;
  for (std::size_t i = 0; i < count; ++i) s.indices.push_back(first + i);
  return s;
}

// Warp-only output for one sample with the given flows and masks.
models::PredictorOutput warp_output(const std::vector<Tensor>& flows, const Tensor& masks) {
  models::PredictorOutput out;
  out.flows = flows;
  out.masks = masks;
  return out;
}

LocationMap point_mass(Cell c, std::size_t h = 16, std::size_t w = 16) {
  LocationMap m{h, w, std::vector<double>(h * w, 0.0)};
  m.p[static_cast<std::size_t>(c.y) * w + static_cast<std::size_t>(c.x)] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("min l1 and match step") {
  Rng rng(1);
  Tensor targets = random_tensor(rng, {10, 3, 4, 4});
  auto set = range_set(1, 10);
  Tensor seventh = reshape(slice(targets, 0, 6, 1), {3, 4, 4});
  auto r = min_l1_and_match(seventh, targets, set);
  CHECK(r.min_l1_err == 0.0);
  CHECK(r.match_step == 7);

  // Equidistant from frames 3 and 4.
  Tensor two = Tensor::from({2, 1, 1, 2}, {0.0, 0.0, 1.0, 1.0});
  auto tie = min_l1_and_match(Tensor::from({1, 1, 2}, {0.5, 0.5}), two, loss::TargetSet{{3, 4}, 0});
  CHECK(tie.match_step == 3);
  CHECK(tie.min_l1_err == 0.5);

  for (int trial = 0; trial < 20; ++trial) {
    Tensor pred = random_tensor(rng, {2, 3, 4, 4}), tg = random_tensor(rng, {2, 10, 3, 4, 4});
    auto recs = min_l1_and_match_batch(pred, tg, set);
    auto lr = loss::min_over_time_loss(pred, tg, set);
    for (std::size_t i = 0; i < 2; ++i) CHECK(recs[i].match_step == lr.match_index[i]);
    CHECK((recs[0].min_l1_err + recs[1].min_l1_err) / 2 == doctest::Approx(lr.total.item()).epsilon(1e-14));
  }
  CHECK_THROWS_AS(min_l1_and_match(seventh, targets, loss::TargetSet{}), Error);
}

TEST_CASE("subgoal location maps") {
  const std::size_t h = 16, w = 16;
  Tensor zero = Tensor::zeros({1, 2, h, w});
  std::vector<double> m(2 * h * w, 0.0);
  std::fill_n(m.begin(), h * w, 1.0);
  Tensor start_only = Tensor::from({1, 2, h, w}, m);
  std::vector<std::vector<Cell>> pos{{{3, 4}, {10, 11}}, {{12, 1}, {6, 6}}};
  auto maps = subgoal_locations(warp_output({zero, zero}, start_only), 0, pos);
  REQUIRE(maps.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) CHECK(maps[e].p == point_mass(pos[0][e]).p);

  // Translating the whole frame by (+2, 0) is a backward flow of (-2, 0).
  std::vector<double> shift(2 * h * w, 0.0);
  std::fill_n(shift.begin(), h * w, -2.0);
  Tensor flow = Tensor::from({1, 2, h, w}, shift);
  auto shifted = subgoal_locations(warp_output({flow, flow}, start_only), 0, pos);
  CHECK(shifted[0].argmax() == Cell{5, 4});
  CHECK(shifted[1].argmax() == Cell{12, 11});

  // Random fractional flows and masks against a brute-force per-pixel warp of the one-hot map.
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor f0 = random_tensor(rng, {1, 2, h, w}, -3, 3), f1 = random_tensor(rng, {1, 2, h, w}, -3, 3);
    Tensor masks = softmax(random_tensor(rng, {1, 2, h, w}, -2, 2), 1);
    auto got = subgoal_locations(warp_output({f0, f1}, masks), 0, pos);
    for (std::size_t e = 0; e < 2; ++e) {
      std::vector<double> want(h * w, 0.0);
      double total = 0;
      for (std::size_t c = 0; c < 2; ++c) {
        const Tensor& f = c == 0 ? f0 : f1;
        const Cell q = pos[c][e];
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            double sx = std::clamp(x + f.data()[y * w + x], 0.0, double(w - 1));
            double sy = std::clamp(y + f.data()[h * w + y * w + x], 0.0, double(h - 1));
            const double wx = std::max(0.0, 1 - std::abs(sx - q.x)), wy = std::max(0.0, 1 - std::abs(sy - q.y));
            want[y * w + x] += masks.data()[c * h * w + y * w + x] * wx * wy;
          }
      }
      for (double v : want) total += v;
      double sum = 0;
      for (std::size_t i = 0; i < h * w; ++i) {
        if (total > 0) CHECK(got[e].p[i] == doctest::Approx(want[i] / total).epsilon(1e-9));
        sum += got[e].p[i];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }

  models::PredictorOutput with_new = warp_output({zero, zero}, Tensor::full({1, 3, h, w}, 1.0 / 3));
  CHECK_THROWS_AS(subgoal_locations(with_new, 0, pos), Error);
}

TEST_CASE("bottleneck score") {
  std::vector<Cell> starts{{0, 0}, {0, 10}}, goals{{8, 0}, {0, 2}};
  CHECK(bottleneck_score({point_mass(goals[0]), point_mass(starts[1])}, starts, goals) == 0.0);
  CHECK(bottleneck_score({point_mass(starts[0]), point_mass(goals[1])}, starts, goals) == 0.0);
  CHECK(bottleneck_score({point_mass({4, 0}), point_mass({0, 6})}, starts, goals) == doctest::Approx(8.0));

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LocationMap> maps;
    for (int e = 0; e < 2; ++e) {
      LocationMap m{16, 16, std::vector<double>(256)};
      double t = 0;
      for (auto& v : m.p) t += v = uniform01(rng);
      for (auto& v : m.p) v /= t;
      maps.push_back(m);
    }
    std::vector<Cell> s{{uniform_int(rng, 0, 15), uniform_int(rng, 0, 15)}, {uniform_int(rng, 0, 15), uniform_int(rng, 0, 15)}};
    std::vector<Cell> g{{uniform_int(rng, 0, 15), uniform_int(rng, 0, 15)}, {uniform_int(rng, 0, 15), uniform_int(rng, 0, 15)}};
    const double a = bottleneck_score(maps, s, g);
    CHECK(a >= 0.0);
    CHECK(a == doctest::Approx(bottleneck_score({maps[1], maps[0]}, {s[1], s[0]}, {g[1], g[0]})).epsilon(1e-14));
  }
  CHECK_THROWS_AS(bottleneck_score({point_mass({0, 0})}, {{0, 0}}, {{1, 1}}), Error);
}

TEST_CASE("bottleneck frequency curve") {
  auto th = default_thresholds();
  CHECK(th.front() == 0.5);
  CHECK(th.back() == 8.0);
  for (const auto& p : bottleneck_frequency_curve({0, 0, 0}, th)) CHECK(p.frequency == 1.0);
  Rng rng(8);
  std::vector<double> scores;
  for (int i = 0; i < 100; ++i) scores.push_back(10 * uniform01(rng));
  auto curve = bottleneck_frequency_curve(scores, {-1, 0.1, 1, 2, 5, 9.99, 10, 20});
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].frequency >= curve[i - 1].frequency);
  const double lo = *std::min_element(scores.begin(), scores.end()), hi = *std::max_element(scores.begin(), scores.end());
  CHECK(bottleneck_frequency_curve(scores, {lo - 1e-9})[0].frequency == 0.0);
  CHECK(bottleneck_frequency_curve(scores, {hi})[0].frequency == 1.0);
  CHECK_THROWS_AS(bottleneck_frequency_curve({}, th), Error);
}

TEST_CASE("best of n") {
  Rng rng(13);
  Tensor targets = random_tensor(rng, {5, 3, 4, 4});
  auto set = range_set(2, 5);
  std::vector<Tensor> samples;
  for (int i = 0; i < 100; ++i) samples.push_back(random_tensor(rng, {3, 4, 4}));
  auto fn = [&](std::size_t i) { return samples[i]; };
  auto one = best_of_n_eval(fn, targets, set, 1);
  auto direct = min_l1_and_match(samples[0], targets, set);
  CHECK(one.min_l1_err == direct.min_l1_err);
  CHECK(one.match_step == direct.match_step);
  auto hundred = best_of_n_eval(fn, targets, set, 100);
  for (std::size_t i = 1; i < 100; ++i) CHECK(hundred.prefix_best[i] <= hundred.prefix_best[i - 1]);
  CHECK(hundred.min_l1_err <= best_of_n_eval(fn, targets, set, 10).min_l1_err);
  CHECK_THROWS_AS(best_of_n_eval(fn, targets, set, 0), Error);
}

TEST_CASE("csv outputs") {
  const auto path = (std::filesystem::temp_directory_path() / "tap_test_eval.csv").string();
  write_eval_csv(path, {{3, "genmin", 0.125, 7}, {4, "fix", 0.1, 6}});
  auto b = io::read_file(path);
  CHECK(std::string(b.begin(), b.end()) == "episode,method,min_l1_err,match_step\n3,genmin,0.125,7\n4,fix,0.1,6\n");
  write_curve_csv(path, {{2.0, 0.5, "genmin"}});
  b = io::read_file(path);
  CHECK(std::string(b.begin(), b.end()) == "threshold,frequency,method\n2,0.5,genmin\n");
  std::filesystem::remove(path);
}
