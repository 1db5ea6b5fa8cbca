#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "autodiff/ops.hpp"
#include "models/networks.hpp"

namespace tap::loss {

using ad::Tensor;

struct TargetSet {
  std::vector<std::size_t> indices;  // frame indices, strictly increasing
  int level = 0;                     // recursion level r

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  std::size_t position_of(std::size_t frame) const;  // throws if absent
  // Checks ordering and disjointness from the context frames.
  void validate(const std::vector<std::size_t>& context_indices) const;
};

enum class PreferenceKind { Uniform, Linear, Bell };

struct TimePreference {
  PreferenceKind kind = PreferenceKind::Uniform;
  std::vector<double> weights;  // one per target, all > 0
};

// linear: w_k = beta + k/|T| for k = 1..|T|. bell: discrete Gaussian centred on the middle
// target with std `sigma` (|T|/4 when sigma <= 0), rescaled so min = 2/3 and max = 1.
TimePreference make_time_preference(PreferenceKind kind, std::size_t target_count, double beta = 1.0,
                                    double sigma = 0.0);
PreferenceKind parse_preference_kind(const std::string& name);
std::string preference_kind_name(PreferenceKind kind);

// Batched report: one match per sample. match_index holds frame indices from the target set,
// match_position the corresponding positions within it.
struct LossReport {
  Tensor total;  // scalar, mean over the batch
  std::vector<std::size_t> match_index;
  std::vector<std::size_t> match_position;
  std::map<std::string, double> components;
};

// Per-sample, per-target mean absolute error: pred [N,C,H,W], targets [N,K,C,H,W] -> [N,K].
Tensor l1_errors(const Tensor& pred, const Tensor& targets);

// Picks, per row, the first position minimising errors[n][k] / weights[k].
std::vector<std::size_t> select_matches(const Tensor& errors, const std::vector<double>& weights);

// Row-wise gather errors[n][pos[n]] -> [N]; gradient reaches only the selected entries.
Tensor gather_rows(const Tensor& errors, const std::vector<std::size_t>& pos);

LossReport fixed_time_loss(const Tensor& pred, const Tensor& target, std::size_t target_index);
LossReport min_over_time_loss(const Tensor& pred, const Tensor& targets, const TargetSet& set);
// outer: optional [N,K] outer errors E_t (defaults to the l1 errors). Selection always uses l1 / w.
LossReport generalized_min_loss(const Tensor& pred, const Tensor& targets, const TargetSet& set,
                                const TimePreference& pref, const std::optional<Tensor>& outer = std::nullopt);

enum class RecursionSide { After, Before };
// Keeps the targets strictly after (or before) the matched frame and bumps the level.
TargetSet recursive_target_update(const TargetSet& current, std::size_t match_index,
                                  RecursionSide side = RecursionSide::After);

double label_smoothing_weight(long t, long t_prime, double alpha);

constexpr double kProbClamp = 1e-7;

// Binary cross-entropy summed over the bank outputs and averaged over the batch.
//   real_probs: [N, K, K], bank outputs on each real target frame (frame position, output).
//   fake_probs: [N, K], bank outputs on the generated frame.
//   negatives:  per sample, the position t' of the randomly drawn negative frame.
// For every output t: target 1 on x_t, target 0 on G(c), target l(t, t') on x_t' (skipped when t' = t).
Tensor tap_gan_discriminator_loss(const Tensor& real_probs, const Tensor& fake_probs,
                                  const std::vector<std::size_t>& negatives, const TargetSet& set, double alpha);

// -ln D_{t*}(c, G(c)) averaged over the batch; the bank outputs should come from a frozen
// discriminator, this function does not detach them.
Tensor tap_gan_generator_term(const Tensor& fake_probs, const std::vector<std::size_t>& match_position);

// Sum over latent dims of 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2), averaged over the batch.
Tensor kl_standard_normal(const models::LatentPosterior& p);

struct LossWeights {
  double kl = 1e-2;
  double gan = 1e-2;
};

struct CombinedInputs {
  Tensor pred;                                   // G(c, z_post) or G(c) without a VAE
  Tensor targets;                                // [N,K,C,H,W]
  std::optional<Tensor> prior_bank_fake;         // D(c, G(c, z_prior)) or D(c, G(c)); [N,K]
  std::optional<Tensor> posterior_bank_fake;     // D'(c, G(c, z_post)); [N,K]
  std::optional<models::LatentPosterior> posterior;
};

// total = l1(t*) + lambda_kl KL + lambda_gan (generator terms of every supplied bank at t*),
// t* = argmin_t l1_t / w(t).
LossReport combined_loss(const CombinedInputs& in, const TargetSet& set, const TimePreference& pref,
                         const LossWeights& lambda, bool use_vae);

}  // namespace tap::loss
