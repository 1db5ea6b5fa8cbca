#include "taploss/losses.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace tap::loss {

using namespace tap::ad;

std::size_t TargetSet::position_of(std::size_t frame) const {
  auto it = std::lower_bound(indices.begin(), indices.end(), frame);
  require(it != indices.end() && *it == frame, ErrorKind::Argument,
          "frame " + std::to_string(frame) + " is not in the target set");
  return static_cast<std::size_t>(it - indices.begin());
}

void TargetSet::validate(const std::vector<std::size_t>& context_indices) const {
  for (std::size_t i = 1; i < indices.size(); ++i)
    require(indices[i - 1] < indices[i], ErrorKind::Argument, "target indices must be strictly increasing");
  for (auto c : context_indices)
    require(!std::binary_search(indices.begin(), indices.end(), c), ErrorKind::Argument,
            "target set overlaps context frame " + std::to_string(c));
}

TimePreference make_time_preference(PreferenceKind kind, std::size_t target_count, double beta, double sigma) {
  require(target_count >= 1, ErrorKind::Argument, "time preference needs at least one target");
  TimePreference p{kind, std::vector<double>(target_count, 1.0)};
  const double k_count = static_cast<double>(target_count);
  switch (kind) {
    case PreferenceKind::Uniform:
      break;
    case PreferenceKind::Linear:
      require(beta > 0 && std::isfinite(beta), ErrorKind::Config, "linear preference needs beta > 0");
      for (std::size_t k = 0; k < target_count; ++k) p.weights[k] = beta + static_cast<double>(k + 1) / k_count;
      break;
    case PreferenceKind::Bell: {
      if (sigma <= 0) sigma = k_count / 4.0;
      const double mid = (k_count - 1.0) / 2.0;
      std::vector<double> g(target_count);
      for (std::size_t k = 0; k < target_count; ++k) {
        const double d = static_cast<double>(k) - mid;
        g[k] = std::exp(-d * d / (2 * sigma * sigma));
      }
      const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
      const double gmin = *lo, gmax = *hi;
      for (std::size_t k = 0; k < target_count; ++k)
        p.weights[k] = gmax > gmin ? 2.0 / 3.0 + (g[k] - gmin) / (gmax - gmin) / 3.0 : 1.0;
      break;
    }
  }
  return p;
}

PreferenceKind parse_preference_kind(const std::string& name) {
  if (name == "uniform") return PreferenceKind::Uniform;
  if (name == "linear") return PreferenceKind::Linear;
  if (name == "bell") return PreferenceKind::Bell;
  fail(ErrorKind::Config, "unknown time preference '" + name + "' (uniform, linear, bell)");
}

std::string preference_kind_name(PreferenceKind kind) {
  switch (kind) {
    case PreferenceKind::Uniform: return "uniform";
    case PreferenceKind::Linear: return "linear";
    case PreferenceKind::Bell: return "bell";
  }
  return "uniform";
}

Tensor l1_errors(const Tensor& pred, const Tensor& targets) {
  require(pred.rank() == 4 && targets.rank() == 5 && targets.dim(0) == pred.dim(0) &&
              targets.dim(2) == pred.dim(1) && targets.dim(3) == pred.dim(2) && targets.dim(4) == pred.dim(3),
          ErrorKind::Shape,
          "l1_errors: prediction " + shape_str(pred.shape()) + " incompatible with targets " +
              shape_str(targets.shape()));
  require(targets.dim(1) >= 1, ErrorKind::Argument, "empty target set");
  Tensor p = reshape(pred, {pred.dim(0), 1, pred.dim(1), pred.dim(2), pred.dim(3)});
  return mean(abs(sub(p, targets)), {2, 3, 4});
}

std::vector<std::size_t> select_matches(const Tensor& errors, const std::vector<double>& weights) {
  require(errors.rank() == 2 && errors.dim(1) == weights.size(), ErrorKind::Shape,
          "select_matches: weights must cover exactly the target set");
  for (double w : weights) require(w > 0 && std::isfinite(w), ErrorKind::Argument, "time preference weights must be > 0");
  const std::size_t n = errors.dim(0), k = errors.dim(1);
  auto e = errors.data();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_v = e[i * k] / weights[0];
    for (std::size_t j = 1; j < k; ++j) {
      const double v = e[i * k + j] / weights[j];
      if (v < best_v) best_v = v, best = j;
    }
    out[i] = best;
  }
  return out;
}

Tensor gather_rows(const Tensor& errors, const std::vector<std::size_t>& pos) {
  require(errors.rank() == 2 && errors.dim(0) == pos.size(), ErrorKind::Shape, "gather_rows: one index per row");
  const std::size_t n = errors.dim(0), k = errors.dim(1);
  std::vector<double> onehot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    require(pos[i] < k, ErrorKind::Argument, "gather_rows: index out of range");
    onehot[i * k + pos[i]] = 1.0;
  }
  return sum(mul(errors, Tensor::from({n, k}, std::move(onehot))), {1});
}

namespace {
LossReport report_from(const Tensor& per_sample, std::vector<std::size_t> pos, const TargetSet& set) {
  LossReport r;
  r.total = mean(per_sample);
  for (auto p : pos) r.match_index.push_back(set.indices[p]);
  r.match_position = std::move(pos);
  r.components["l1"] = r.total.item();
  return r;
}
}  // namespace

LossReport fixed_time_loss(const Tensor& pred, const Tensor& target, std::size_t target_index) {
  require(pred.shape() == target.shape(), ErrorKind::Shape,
          "fixed_time_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  LossReport r;
  r.total = mean(abs(sub(pred, target)));
  const std::size_t n = pred.rank() == 4 ? pred.dim(0) : 1;
  r.match_index.assign(n, target_index);
  r.match_position.assign(n, 0);
  r.components["l1"] = r.total.item();
  return r;
}

LossReport min_over_time_loss(const Tensor& pred, const Tensor& targets, const TargetSet& set) {
  require(!set.empty(), ErrorKind::Argument, "min_over_time_loss: empty target set");
  require(targets.rank() == 5 && targets.dim(1) == set.size(), ErrorKind::Shape,
          "min_over_time_loss: target tensor does not match the target set");
  Tensor e = l1_errors(pred, targets);
  Tensor best = min(e, 1);
  return report_from(best, argmin(e, 1), set);
}

LossReport generalized_min_loss(const Tensor& pred, const Tensor& targets, const TargetSet& set,
                                const TimePreference& pref, const std::optional<Tensor>& outer) {
  require(!set.empty(), ErrorKind::Argument, "generalized_min_loss: empty target set");
  require(targets.rank() == 5 && targets.dim(1) == set.size(), ErrorKind::Shape,
          "generalized_min_loss: target tensor does not match the target set");
  Tensor e = l1_errors(pred, targets);
  auto pos = select_matches(e, pref.weights);
  const Tensor& o = outer ? *outer : e;
  require(o.shape() == e.shape(), ErrorKind::Shape, "generalized_min_loss: outer errors must be [N,|T|]");
  Tensor picked = gather_rows(o, pos);
  return report_from(picked, std::move(pos), set);
}

TargetSet recursive_target_update(const TargetSet& current, std::size_t match_index, RecursionSide side) {
  current.position_of(match_index);
  TargetSet next;
  next.level = current.level + 1;
  for (auto i : current.indices)
    if (side == RecursionSide::After ? i > match_index : i < match_index) next.indices.push_back(i);
  return next;
}

double label_smoothing_weight(long t, long t_prime, double alpha) {
  require(alpha >= 0, ErrorKind::Argument, "label smoothing alpha must be >= 0");
  return std::max(0.0, 1.0 - alpha * static_cast<double>(std::labs(t - t_prime)));
}

namespace {
// Sum of -l ln p - (1 - l) ln(1 - p) over the entries with mask 1, divided by `batch`.
Tensor masked_bce(const Tensor& probs, const std::vector<double>& label, const std::vector<double>& mask,
                  std::size_t batch) {
  const Shape& s = probs.shape();
  Tensor p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Tensor pos_w = Tensor::from(s, [&] {
    std::vector<double> v(label.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] * label[i];
    return v;
  }());
  Tensor neg_w = Tensor::from(s, [&] {
    std::vector<double> v(label.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] * (1.0 - label[i]);
    return v;
  }());
  Tensor terms = add(mul(pos_w, log(p)), mul(neg_w, log(add_scalar(neg(p), 1.0))));
  return mul_scalar(sum(terms), -1.0 / static_cast<double>(batch));
}
}  // namespace

Tensor tap_gan_discriminator_loss(const Tensor& real_probs, const Tensor& fake_probs,
                                  const std::vector<std::size_t>& negatives, const TargetSet& set, double alpha) {
  const std::size_t k = set.size();
  require(k >= 1, ErrorKind::Argument, "discriminator loss: empty target set");
  require(fake_probs.rank() == 2 && fake_probs.dim(1) == k, ErrorKind::Shape,
          "discriminator loss: bank has " + (fake_probs.rank() == 2 ? std::to_string(fake_probs.dim(1)) : "?") +
              " outputs, target set has " + std::to_string(k));
  const std::size_t n = fake_probs.dim(0);
  require(real_probs.shape() == Shape{n, k, k}, ErrorKind::Shape,
          "discriminator loss: real outputs must be [N,|T|,|T|], got " + shape_str(real_probs.shape()));
  require(negatives.size() == n, ErrorKind::Argument, "discriminator loss: one negative per sample");

  std::vector<double> label(n * k * k, 0.0), mask(n * k * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    require(negatives[i] < k, ErrorKind::Argument, "discriminator loss: negative position out of range");
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t diag = (i * k + t) * k + t;  // D_t on x_t
      label[diag] = 1.0;
      mask[diag] = 1.0;
      const std::size_t tp = negatives[i];
      if (tp == t) continue;
      const std::size_t off = (i * k + tp) * k + t;  // D_t on x_t'
      label[off] = label_smoothing_weight(static_cast<long>(set.indices[t]), static_cast<long>(set.indices[tp]), alpha);
      mask[off] = 1.0;
    }
  }
  Tensor real = masked_bce(real_probs, label, mask, n);
  Tensor fake = masked_bce(fake_probs, std::vector<double>(n * k, 0.0), std::vector<double>(n * k, 1.0), n);
  return add(real, fake);
}

Tensor tap_gan_generator_term(const Tensor& fake_probs, const std::vector<std::size_t>& match_position) {
  Tensor p = clamp(fake_probs, kProbClamp, 1.0);
  return neg(mean(gather_rows(log(p), match_position)));
}

Tensor kl_standard_normal(const models::LatentPosterior& p) {
  require(p.mean.shape() == p.log_variance.shape() && p.mean.rank() == 2, ErrorKind::Shape,
          "kl_standard_normal: mean and log-variance must both be [N, latent]");
  Tensor per = add_scalar(sub(add(square(p.mean), exp(p.log_variance)), p.log_variance), -1.0);
  return mul_scalar(sum(per), 0.5 / static_cast<double>(p.mean.dim(0)));
}

LossReport combined_loss(const CombinedInputs& in, const TargetSet& set, const TimePreference& pref,
                         const LossWeights& lambda, bool use_vae) {
  require(!use_vae || in.posterior.has_value(), ErrorKind::Argument, "combined_loss: VAE mode needs a posterior");
  LossReport r = generalized_min_loss(in.pred, in.targets, set, pref);
  Tensor total = r.total;

  double gen_value = 0.0;
  Tensor gen;
  for (const auto* bank : {&in.prior_bank_fake, &in.posterior_bank_fake}) {
    if (!bank->has_value()) continue;
    Tensor term = tap_gan_generator_term(**bank, r.match_position);
    gen = gen.impl() ? add(gen, term) : term;
  }
  if (gen.impl()) {
    gen_value = gen.item();
    if (lambda.gan != 0.0) total = add(total, mul_scalar(gen, lambda.gan));
  }
  r.components["gan_gen"] = gen_value;

  double kl_value = 0.0;
  if (use_vae) {
    Tensor kl = kl_standard_normal(*in.posterior);
    kl_value = kl.item();
    if (lambda.kl != 0.0) total = add(total, mul_scalar(kl, lambda.kl));
  }
  r.components["kl"] = kl_value;
  r.total = total;
  return r;
}

}  // namespace tap::loss
