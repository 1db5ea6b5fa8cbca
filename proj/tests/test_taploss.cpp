#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "autodiff/gradcheck.hpp"
#include "autodiff/ops.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "doctest.h"
#include "taploss/losses.hpp"

using namespace tap;
using namespace tap::ad;
using namespace tap::loss;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

TargetSet range_set(std::size_t first, std::size_t count) {
  TargetSet s;
  for (std::size_t i = 0; i < count; ++i) s.indices.push_back(first + i);
  return s;
}

// Targets whose per-t l1 error to a zero prediction equals errs[t]: every pixel is +errs[t].
Tensor targets_with_errors(const std::vector<double>& errs, Shape frame = {1, 2, 2}) {
  const std::size_t per = numel_of(frame);
  std::vector<double> v;
  for (double e : errs) v.insert(v.end(), per, e);
  return Tensor::from({1, errs.size(), frame[0], frame[1], frame[2]}, v);
}

Tensor zero_pred(Shape frame = {1, 2, 2}) { return Tensor::zeros({1, frame[0], frame[1], frame[2]}); }

}  // namespace

TEST_CASE("fixed-time loss") {
  Rng rng(1);
  Tensor target = random_tensor(rng, {1, 3, 4, 4});
  CHECK(fixed_time_loss(target, target, 7).total.item() == 0.0);
  auto r = fixed_time_loss(add_scalar(target, 0.5), target, 7);
  CHECK(r.total.item() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.match_index == std::vector<std::size_t>{7});

  Tensor pred = random_tensor(rng, {1, 3, 4, 4}).clone(true);
  backward(fixed_time_loss(pred, target, 0).total);
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double s = pred.data()[i] > target.data()[i] ? 1.0 : -1.0;
    CHECK(pred.grad()[i] == doctest::Approx(s / 48.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fixed_time_loss(pred, random_tensor(rng, {1, 3, 4, 5}), 0), Error);
}

TEST_CASE("min-over-time loss examples") {
  auto set = range_set(1, 3);
  auto r = min_over_time_loss(zero_pred(), targets_with_errors({0.5, 0.2, 0.9}), set);
  CHECK(r.total.item() == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.match_position == std::vector<std::size_t>{1});
  CHECK(r.match_index == std::vector<std::size_t>{2});

  auto tie = min_over_time_loss(zero_pred(), targets_with_errors({0.3, 0.3}), range_set(1, 2));
  CHECK(tie.match_position == std::vector<std::size_t>{0});

  Rng rng(2);
  Tensor pred = random_tensor(rng, {2, 2, 4, 4}), tgt = random_tensor(rng, {2, 1, 2, 4, 4});
  auto single = min_over_time_loss(pred, tgt, range_set(5, 1));
  auto fixed = fixed_time_loss(pred, reshape(tgt, {2, 2, 4, 4}), 5);
  CHECK(single.total.item() == doctest::Approx(fixed.total.item()).epsilon(1e-14));
  CHECK(single.match_index == fixed.match_index);

  CHECK_THROWS_AS(min_over_time_loss(zero_pred(), targets_with_errors({0.1}), TargetSet{}), Error);
}

TEST_CASE("generalized minimum examples") {
  auto set = range_set(1, 3);
  Tensor tg = targets_with_errors({0.4, 0.3, 0.5});
  TimePreference w{PreferenceKind::Uniform, {1, 2, 1}};
  auto r = generalized_min_loss(zero_pred(), tg, set, w);
  CHECK(r.match_position == std::vector<std::size_t>{1});
  CHECK(r.total.item() == doctest::Approx(0.3).epsilon(1e-12));

  auto u = generalized_min_loss(zero_pred(), tg, set, make_time_preference(PreferenceKind::Uniform, 3));
  auto m = min_over_time_loss(zero_pred(), tg, set);
  CHECK(u.total.item() == m.total.item());
  CHECK(u.match_index == m.match_index);

  TimePreference heavy{PreferenceKind::Uniform, {1, 1, 100}};
  auto h = generalized_min_loss(zero_pred(), tg, set, heavy);
  CHECK(h.match_position == std::vector<std::size_t>{2});
  CHECK(h.total.item() == doctest::Approx(0.5).epsilon(1e-12));

  // Outer error decoupled from the selection error.
  Tensor outer = Tensor::from({1, 3}, {7.0, 8.0, 9.0});
  CHECK(generalized_min_loss(zero_pred(), tg, set, w, outer).total.item() == 8.0);

  TimePreference bad{PreferenceKind::Uniform, {1, 0, 1}};
  CHECK_THROWS_AS(generalized_min_loss(zero_pred(), tg, set, bad), Error);
  TimePreference short_w{PreferenceKind::Uniform, {1, 1}};
  CHECK_THROWS_AS(generalized_min_loss(zero_pred(), tg, set, short_w), Error);
}

TEST_CASE("time preferences") {
  auto lin = make_time_preference(PreferenceKind::Linear, 15, 2.0);
  CHECK(lin.weights.front() == doctest::Approx(2.0 + 1.0 / 15).epsilon(1e-14));
  CHECK(lin.weights.back() == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(std::is_sorted(lin.weights.begin(), lin.weights.end()));

  auto bell = make_time_preference(PreferenceKind::Bell, 21);
  CHECK(std::abs(bell.weights[10] - 1.0) <= 1e-12);
  CHECK(std::abs(bell.weights.front() - 2.0 / 3.0) <= 1e-12);
  CHECK(std::abs(bell.weights.back() - 2.0 / 3.0) <= 1e-12);
  for (std::size_t k = 0; k < 21; ++k) CHECK(bell.weights[k] == doctest::Approx(bell.weights[20 - k]).epsilon(1e-14));

  CHECK_THROWS_AS(make_time_preference(PreferenceKind::Linear, 5, 0.0), Error);
  CHECK_THROWS_AS(make_time_preference(PreferenceKind::Linear, 5, -1.0), Error);
  CHECK_THROWS_AS(parse_preference_kind("cosine"), Error);

  // beta -> infinity reduces to the plain minimum.
  Rng rng(4);
  auto huge = make_time_preference(PreferenceKind::Linear, 9, 1e9);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor e = random_tensor(rng, {1, 9}, 0.0, 1.0);
    CHECK(select_matches(e, huge.weights) == argmin(e, 1));
  }
}

TEST_CASE("generalized minimum properties on random error matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + uniform_int(rng, 0, 11);
    Tensor e = random_tensor(rng, {4, k}, 0.0, 1.0);
    std::vector<double> w(k);
    for (auto& x : w) x = 0.1 + 2 * uniform01(rng);
    auto base = select_matches(e, w);

    auto scaled = w;
    const double c = 0.01 + 100 * uniform01(rng);
    for (auto& x : scaled) x *= c;
    CHECK(select_matches(e, scaled) == base);

    // Raising one weight never moves a match away from it; a huge weight captures it.
    const std::size_t t0 = uniform_int(rng, 0, static_cast<long>(k) - 1);
    auto raised = w;
    raised[t0] *= 1.0 + 5 * uniform01(rng);
    auto after = select_matches(e, raised);
    for (std::size_t i = 0; i < 4; ++i)
      if (base[i] == t0) CHECK(after[i] == t0);
    raised[t0] = 1e12;
    for (auto p : select_matches(e, raised)) CHECK(p == t0);
  }
}

TEST_CASE("min-over-time bounded by every fixed-time loss; gradient sparsity") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor pred = random_tensor(rng, {1, 2, 3, 3});
    Tensor tg = random_tensor(rng, {1, 5, 2, 3, 3});
    auto set = range_set(2, 5);
    const double m = min_over_time_loss(pred, tg, set).total.item();
    for (std::size_t t = 0; t < 5; ++t)
      CHECK(m <= fixed_time_loss(pred, reshape(slice(tg, 1, t, 1), {1, 2, 3, 3}), set.indices[t]).total.item());
  }

  Tensor pred = random_tensor(rng, {1, 2, 3, 3});
  Tensor tg = random_tensor(rng, {1, 4, 2, 3, 3});
  auto set = range_set(1, 4);
  const std::size_t match = min_over_time_loss(pred, tg, set).match_position[0];
  auto f = [&](const Tensor& x) { return min_over_time_loss(pred, x, set).total; };
  auto report = grad_check(f, tg);
  CHECK(report.passed);
  Tensor leaf = tg.clone(true);
  backward(f(leaf));
  const std::size_t per = 18;
  const double eps = 1e-4;
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t i = t * per + j;
      if (t != match) CHECK(leaf.grad()[i] == 0.0);
      Tensor plus = tg.clone(), minus = tg.clone();
      plus.mutable_data()[i] += eps;
      minus.mutable_data()[i] -= eps;
      const double num = (f(plus).item() - f(minus).item()) / (2 * eps);
      if (t != match) CHECK(num == 0.0);
    }
  }
}

TEST_CASE("loss gradients match finite differences") {
  for (int k = 0; k < 10; ++k) {
    Rng rng(100 + k);
    Tensor tg = random_tensor(rng, {2, 4, 2, 3, 3});
    Tensor pred = random_tensor(rng, {2, 2, 3, 3});
    auto set = range_set(3, 4);
    auto pref = make_time_preference(PreferenceKind::Bell, 4);
    Tensor fake_d = random_tensor(rng, {2, 4}, 0.05, 0.95);
    Tensor fake_dp = random_tensor(rng, {2, 4}, 0.05, 0.95);
    Tensor mu = random_tensor(rng, {2, 3}), lv = random_tensor(rng, {2, 3});
    Tensor real = random_tensor(rng, {2, 4, 4}, 0.05, 0.95);

    CHECK(grad_check([&](const Tensor& x) { return fixed_time_loss(x, reshape(slice(tg, 1, 0, 1), {2, 2, 3, 3}), 3).total; }, pred).passed);
    CHECK(grad_check([&](const Tensor& x) { return min_over_time_loss(x, tg, set).total; }, pred).passed);
    CHECK(grad_check([&](const Tensor& x) { return generalized_min_loss(x, tg, set, pref).total; }, pred).passed);
    CHECK(grad_check([&](const Tensor& x) { return kl_standard_normal({x, lv}); }, mu).passed);
    CHECK(grad_check([&](const Tensor& x) { return kl_standard_normal({mu, x}); }, lv).passed);
    LossWeights lam{0.3, 0.7};
    auto combined = [&](const Tensor& p, const Tensor& d, const Tensor& m) {
      CombinedInputs in{p, tg, d, fake_dp, models::LatentPosterior{m, lv}};
      return combined_loss(in, set, pref, lam, true).total;
    };
    CHECK(grad_check([&](const Tensor& x) { return combined(x, fake_d, mu); }, pred).passed);
    CHECK(grad_check([&](const Tensor& x) { return combined(pred, x, mu); }, fake_d).passed);
    CHECK(grad_check([&](const Tensor& x) { return combined(pred, fake_d, x); }, mu).passed);
    std::vector<std::size_t> neg{1, 3};
    CHECK(grad_check([&](const Tensor& x) { return tap_gan_discriminator_loss(x, fake_d, neg, set, 0.25); }, real).passed);
    CHECK(grad_check([&](const Tensor& x) { return tap_gan_discriminator_loss(real, x, neg, set, 0.25); }, fake_d).passed);
  }
}

TEST_CASE("recursive target update") {
  TargetSet t = range_set(1, 10);
  auto r1 = recursive_target_update(t, 5);
  CHECK(r1.indices == range_set(6, 5).indices);
  CHECK(r1.level == 1);
  CHECK(recursive_target_update(t, 10).empty());
  CHECK(recursive_target_update(t, 1).indices == range_set(2, 9).indices);
  CHECK(recursive_target_update(t, 5, RecursionSide::Before).indices == range_set(1, 4).indices);
  CHECK_THROWS_AS(recursive_target_update(t, 11), Error);
  CHECK_THROWS_AS(recursive_target_update(r1, 3), Error);

  // Termination within |T| steps for arbitrary match sequences; strict shrinkage.
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    TargetSet cur = range_set(2, 1 + uniform_int(rng, 0, 19));
    const std::size_t full = cur.size();
    std::size_t steps = 0;
    while (!cur.empty()) {
      const std::size_t before = cur.size();
      cur = recursive_target_update(cur, cur.indices[uniform_int(rng, 0, static_cast<long>(before) - 1)]);
      CHECK(cur.size() < before);
      ++steps;
    }
    CHECK(steps <= full);
  }
}

TEST_CASE("target set validation") {
  TargetSet ok = range_set(1, 5);
  CHECK_NOTHROW(ok.validate({0, 6}));
  CHECK_THROWS_AS(ok.validate({0, 3}), Error);
  TargetSet unordered{{3, 2}, 0};
  CHECK_THROWS_AS(unordered.validate({}), Error);
}

TEST_CASE("label smoothing") {
  CHECK(label_smoothing_weight(4, 4, 0.25) == 1.0);
  CHECK(label_smoothing_weight(4, 6, 0.25) == 0.5);
  CHECK(label_smoothing_weight(4, 8, 0.25) == 0.0);
  for (long a = 0; a < 12; ++a)
    for (long b = 0; b < 12; ++b) {
      const double l = label_smoothing_weight(a, b, 0.25);
      CHECK(l == label_smoothing_weight(b, a, 0.25));
      CHECK((l >= 0.0 && l <= 1.0));
    }
  CHECK_THROWS_AS(label_smoothing_weight(0, 1, -0.1), Error);
}

TEST_CASE("discriminator loss arithmetic") {
  auto set = range_set(2, 3);
  const std::size_t k = 3;
  // Hard targets (alpha large): D = 0.5 everywhere gives ln 2 per term.
  Tensor real = Tensor::full({1, k, k}, 0.5), fake = Tensor::full({1, k}, 0.5);
  const double terms = k /*positives*/ + k /*fake*/ + (k - 1) /*negatives, t' != t*/;
  CHECK(tap_gan_discriminator_loss(real, fake, {1}, set, 10.0).item() ==
        doctest::Approx(terms * std::log(2.0)).epsilon(1e-12));

  // Soft target l = 0.5 at D = 0.5: independent evaluation of -l ln D - (1-l) ln(1-D).
  const double l = 0.5, d = 0.5;
  CHECK(-l * std::log(d) - (1 - l) * std::log(1 - d) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // With alpha = 0.25 and a single neighbour-at-distance-2 negative, the soft term still costs ln 2.
  TargetSet two{{2, 4}, 0};
  Tensor r2 = Tensor::full({1, 2, 2}, 0.5), f2 = Tensor::full({1, 2}, 0.5);
  CHECK(tap_gan_discriminator_loss(r2, f2, {1}, two, 0.25).item() == doctest::Approx(5 * std::log(2.0)).epsilon(1e-12));

  // Perfect discriminator drives the loss to ~0.
  const double e = 1e-9;
  std::vector<double> rv(k * k);
  const std::size_t tp = 2;
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t t = 0; t < k; ++t) {
      double target = f == t ? 1.0 : (f == tp ? label_smoothing_weight(set.indices[t], set.indices[tp], 10.0) : 0.5);
      rv[f * k + t] = std::clamp(target, e, 1 - e);
    }
  const double perfect = tap_gan_discriminator_loss(Tensor::from({1, k, k}, rv), Tensor::full({1, k}, e), {tp}, set, 10.0).item();
  CHECK(perfect < 1e-5);
  CHECK_THROWS_AS(tap_gan_discriminator_loss(real, Tensor::full({1, 4}, 0.5), {1}, set, 0.25), Error);
}

TEST_CASE("generator term") {
  CHECK(tap_gan_generator_term(Tensor::from({1, 2}, {0.3, 1 - 1e-7}), {1}).item() < 2e-7);
  CHECK(tap_gan_generator_term(Tensor::from({1, 2}, {0.5, 0.1}), {0}).item() == doctest::Approx(std::log(2.0)));
  double prev = -1;
  for (double d = 0.99; d > 0.01; d -= 0.05) {
    const double v = tap_gan_generator_term(Tensor::from({1, 1}, {d}), {0}).item();
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("KL to the standard normal") {
  CHECK(kl_standard_normal({Tensor::zeros({1, 4}), Tensor::zeros({1, 4})}).item() == 0.0);
  CHECK(kl_standard_normal({Tensor::full({1, 1}, 1.0), Tensor::zeros({1, 1})}).item() == doctest::Approx(0.5));
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    Tensor mu = random_tensor(rng, {3, 5}, -3, 3), lv = random_tensor(rng, {3, 5}, -5, 5);
    CHECK(kl_standard_normal({mu, lv}).item() >= 0.0);
  }
}

TEST_CASE("KL closed form matches a Monte-Carlo estimate") {
  Rng rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t dim = 4;
    Tensor mu = random_tensor(rng, {1, dim}, -1.5, 1.5), lv = random_tensor(rng, {1, dim}, -1.5, 1.0);
    const double closed = kl_standard_normal({mu, lv}).item();
    // E_q[ln q(z) - ln p(z)] with z = mu + sigma eps.
    double acc = 0;
    const int samples = 1000000;
    for (int s = 0; s < samples; ++s)
      for (std::size_t d = 0; d < dim; ++d) {
        const double eps = normal01(rng), sd = std::exp(0.5 * lv.data()[d]);
        const double z = mu.data()[d] + sd * eps;
        acc += -0.5 * eps * eps - std::log(sd) + 0.5 * z * z;
      }
    const double mc = acc / samples;
    INFO("closed " << closed << " mc " << mc);
    CHECK(std::abs(mc - closed) <= 0.01 * closed);
  }
}

TEST_CASE("combined loss bookkeeping and reductions") {
  Rng rng(30);
  auto set = range_set(2, 5);
  Tensor pred = random_tensor(rng, {3, 2, 4, 4}), tg = random_tensor(rng, {3, 5, 2, 4, 4});
  Tensor d = random_tensor(rng, {3, 5}, 0.1, 0.9), dp = random_tensor(rng, {3, 5}, 0.1, 0.9);
  models::LatentPosterior post{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
  auto pref = make_time_preference(PreferenceKind::Linear, 5, 1.5);

  LossWeights zero{0.0, 0.0};
  auto r0 = combined_loss({pred, tg, d, dp, post}, set, pref, zero, true);
  auto g = generalized_min_loss(pred, tg, set, pref);
  CHECK(r0.total.item() == g.total.item());
  CHECK(r0.match_index == g.match_index);
  auto uni = make_time_preference(PreferenceKind::Uniform, 5);
  auto ru = combined_loss({pred, tg, d, dp, post}, set, uni, zero, true);
  auto m = min_over_time_loss(pred, tg, set);
  CHECK(ru.total.item() == doctest::Approx(m.total.item()).epsilon(1e-15));
  CHECK(ru.match_index == m.match_index);

  LossWeights lam{0.2, 0.3};
  auto r = combined_loss({pred, tg, d, dp, post}, set, pref, lam, true);
  for (const auto& [name, v] : r.components) CHECK(std::isfinite(v));
  const double want = r.components["l1"] + lam.kl * r.components["kl"] + lam.gan * r.components["gan_gen"];
  CHECK(r.total.item() == doctest::Approx(want).epsilon(1e-13));
  const double gen = tap_gan_generator_term(d, r.match_position).item() + tap_gan_generator_term(dp, r.match_position).item();
  CHECK(r.components["gan_gen"] == doctest::Approx(gen).epsilon(1e-14));

  CHECK_THROWS_AS(combined_loss({pred, tg, d, dp, std::nullopt}, set, pref, lam, true), Error);
}
