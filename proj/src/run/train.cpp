#include "run/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "common/error.hpp"
#include "metrics/metrics.hpp"
#include "synthworlds/dataset.hpp"

namespace tap::run {

using ad::Tensor;

namespace {

constexpr std::uint64_t kShuffleSalt = 0x53485546;  // "SHUF"
constexpr std::uint64_t kStepSalt = 0x53544550;     // "STEP"
constexpr std::uint64_t kPretrainSalt = 0x50524554;  // "PRET"
constexpr std::size_t kEvalBatch = 64;

const std::vector<std::string> kComponents{"total", "l1", "gan_gen", "kl", "gan_disc", "cvae_gan_disc"};

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i - 1)));
    std::swap(v[i - 1], v[j]);
  }
}

void require_finite(double v, const std::string& what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(v))
    fail(ErrorKind::Numeric, what + " became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step) + "; try a lower learning rate");
}

// Bank outputs on every real target frame: [N, K, K] indexed (sample, frame position, output).
Tensor real_bank_probs(const models::DiscriminatorBank& bank, const Batch& b) {
  const auto& ts = b.targets.shape();
  const std::size_t n = ts[0], k = ts[1];
  std::vector<Tensor> ctx_rep;
  for (const auto& c : b.contexts) {
    std::vector<double> v;
    v.reserve(n * k * c.numel() / n);
    const std::size_t fn = c.numel() / n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j)
        v.insert(v.end(), c.data().begin() + static_cast<std::ptrdiff_t>(i * fn),
                 c.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * fn));
    ctx_rep.push_back(Tensor::from({n * k, ts[2], ts[3], ts[4]}, std::move(v)));
  }
  Tensor frames = ad::reshape(b.targets, {n * k, ts[2], ts[3], ts[4]});
  return ad::reshape(bank(ctx_rep, frames), {n, k, k});
}

std::optional<Tensor> zero_latent(const Model& m, std::size_t n) {
  if (!m.cfg.use_vae()) return std::nullopt;
  return Tensor::zeros({n, m.cfg.latent_dim});
}

void write_log(const std::string& path, const std::vector<EpochRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::Io, "cannot write " + path);
  f << "epoch";
  for (const auto& c : kComponents) f << ",train_" << c;
  f << ",test_min_l1_err,test_mean_match_step,d_real,d_fake\n";
  for (const auto& r : rows) {
    f << r.epoch;
    for (const auto& c : kComponents) f << ',' << metrics::format_double(r.train.at(c));
    f << ',' << metrics::format_double(r.test_min_l1_err) << ',' << metrics::format_double(r.test_mean_match_step)
      << ',' << metrics::format_double(r.d_real) << ',' << metrics::format_double(r.d_fake) << '\n';
  }
  f.flush();
  require(f.good(), ErrorKind::Io, "write failed for " + path);
}

// Trains encoder, head and new-pixel decoder to reproduce single frames fed as every context.
void pretrain_decoder(Model& m, const worlds::Dataset& d, const std::vector<std::size_t>& train_idx,
                      models::Adam& opt) {
  const std::size_t fn = d.frame_numel();
  for (std::size_t epoch = 0; epoch < m.cfg.pretrain_epochs; ++epoch) {
    Rng rng(derive_seed(m.cfg.seed, epoch, kPretrainSalt));
    auto order = train_idx;
    shuffle(order, rng);
    for (std::size_t s = 0; s < order.size(); s += m.cfg.batch_size) {
      const std::size_t n = std::min(m.cfg.batch_size, order.size() - s);
      std::vector<double> v(n * fn);
      for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(d.frames - 1)));
        std::copy_n(d.episodes[order[s + i]].frames.data() + t * fn, fn, v.begin() + i * fn);
      }
      Tensor frame = Tensor::from({n, d.channels, d.height, d.width}, std::move(v));
      std::vector<Tensor> ctx(m.contexts.size(), frame);
      auto out = m.g(ctx, zero_latent(m, n));
      Tensor l = ad::mean(ad::abs(ad::sub(out.new_pixels, frame)));
      require_finite(l.item(), "pretraining loss", epoch, s);
      ad::backward(l);
      opt.step(m.g_store);
    }
  }
}

}  // namespace

TestMetrics evaluate_split(const Model& m, const worlds::Dataset& d, const std::vector<std::size_t>& episodes) {
  TestMetrics r;
  if (episodes.empty()) return r;
  ad::NoGrad ng;
  double err = 0, match = 0, real = 0, fake = 0;
  for (std::size_t s = 0; s < episodes.size(); s += kEvalBatch) {
    std::vector<std::size_t> ids(episodes.begin() + static_cast<std::ptrdiff_t>(s),
                                 episodes.begin() + static_cast<std::ptrdiff_t>(std::min(s + kEvalBatch, episodes.size())));
    Batch b = make_batch(m, d, ids);
    auto out = m.g(b.contexts, zero_latent(m, b.n));
    for (const auto& rec : metrics::min_l1_and_match_batch(out.composited, b.targets, m.targets)) {
      err += rec.min_l1_err;
      match += static_cast<double>(rec.match_step);
    }
    if (m.d) {
      Tensor rp = real_bank_probs(*m.d, b);
      const std::size_t k = m.target_count();
      for (std::size_t i = 0; i < b.n; ++i)
        for (std::size_t t = 0; t < k; ++t) real += rp.data()[(i * k + t) * k + t];
      for (double p : (*m.d)(b.contexts, out.composited).data()) fake += p;
    }
  }
  const auto n = static_cast<double>(episodes.size());
  r.min_l1_err = err / n;
  r.mean_match_step = match / n;
  if (m.d) {
    r.d_real = real / (n * static_cast<double>(m.target_count()));
    r.d_fake = fake / (n * static_cast<double>(m.target_count()));
  }
  return r;
}

TrainResult train_model(Model& m, const worlds::Dataset& d, const std::function<void(const EpochRow&)>& on_epoch) {
  check_compatible(m, d);
  const auto& cfg = m.cfg;
  auto train_idx = worlds::split_indices(d, false);
  if (cfg.max_train_episodes > 0 && train_idx.size() > cfg.max_train_episodes) train_idx.resize(cfg.max_train_episodes);
  const auto test_idx = worlds::split_indices(d, true);
  require(!train_idx.empty(), ErrorKind::Data, "dataset has no training episodes");

  const models::AdamConfig ac{cfg.lr};
  models::Adam opt_g(m.g_store, ac), opt_d(m.d_store, ac), opt_dp(m.dp_store, ac), opt_q(m.q_store, ac);
  const auto pref = cfg.preference_for(m.target_count());
  const loss::LossWeights lambda{cfg.lambda_kl, cfg.lambda_gan};
  const std::size_t k = m.target_count();
  const std::size_t fix_pos = m.targets.position_of(cfg.fix_target(d.frames));

  if (cfg.pretrain_epochs > 0) pretrain_decoder(m, d, train_idx, opt_g);

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, epoch, kShuffleSalt));
    auto order = train_idx;
    shuffle(order, order_rng);
    std::map<std::string, double> sums;
    for (const auto& c : kComponents) sums[c] = 0.0;
    std::size_t steps = 0;

    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size, ++step, ++steps) {
      Rng rng(derive_seed(cfg.seed, step, kStepSalt));
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(s + cfg.batch_size, order.size())));
      Batch b = make_batch(m, d, ids);
      const std::size_t n = b.n;

      // Generator (and inference network) update.
      std::optional<models::LatentPosterior> post;
      Tensor pred, pred_prior;
      if (m.q) {
        post = (*m.q)(b.video);
        pred = m.g(b.contexts, models::sample_latent(*post, models::gaussian_noise(n, cfg.latent_dim, rng))).composited;
        pred_prior = m.g(b.contexts, models::gaussian_noise(n, cfg.latent_dim, rng)).composited;
      } else {
        pred = m.g(b.contexts, std::nullopt).composited;
        pred_prior = pred;
      }
      loss::LossReport rep;
      if (cfg.loss == LossKind::Fix) {
        Tensor target = ad::reshape(ad::slice(b.targets, 1, fix_pos, 1), b.contexts[0].shape());
        rep = loss::fixed_time_loss(pred, target, cfg.fix_target(d.frames));
      } else {
        loss::CombinedInputs in{pred, b.targets, std::nullopt, std::nullopt, post};
        if (m.d) in.prior_bank_fake = (*m.d)(b.contexts, pred_prior);
        if (m.d_post) in.posterior_bank_fake = (*m.d_post)(b.contexts, pred);
        rep = loss::combined_loss(in, m.targets, pref, lambda, cfg.use_vae());
      }
      const double total = rep.total.item();
      require_finite(total, "training loss", epoch, step);
      ad::backward(rep.total);
      opt_g.step(m.g_store);
      if (m.q) opt_q.step(m.q_store);
      m.d_store.zero_grad();
      m.dp_store.zero_grad();
      result.step_totals.push_back(total);
      sums["total"] += total;
      sums["l1"] += rep.components.count("l1") ? rep.components.at("l1") : total;
      if (rep.components.count("gan_gen")) sums["gan_gen"] += rep.components.at("gan_gen");
      if (rep.components.count("kl")) sums["kl"] += rep.components.at("kl");

      // Discriminator updates on detached generator samples.
      if (m.d) {
        std::vector<std::size_t> negatives(n);
        for (auto& t : negatives) t = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(k - 1)));
        Tensor ld = loss::tap_gan_discriminator_loss(real_bank_probs(*m.d, b), (*m.d)(b.contexts, ad::detach(pred_prior)),
                                                     negatives, m.targets, cfg.label_alpha);
        Tensor dtotal = ld;
        const double ld_value = ld.item();
        require_finite(ld_value, "discriminator loss", epoch, step);
        sums["gan_disc"] += ld_value;
        if (m.d_post) {
          Tensor ldp = loss::tap_gan_discriminator_loss(real_bank_probs(*m.d_post, b),
                                                        (*m.d_post)(b.contexts, ad::detach(pred)), negatives,
                                                        m.targets, cfg.label_alpha);
          require_finite(ldp.item(), "posterior discriminator loss", epoch, step);
          sums["cvae_gan_disc"] += ldp.item();
          dtotal = ad::add(dtotal, ldp);
        }
        ad::backward(dtotal);
        opt_d.step(m.d_store);
        if (m.d_post) opt_dp.step(m.dp_store);
      }
    }

    EpochRow row;
    row.epoch = epoch;
    for (const auto& [c, v] : sums) row.train[c] = v / static_cast<double>(std::max<std::size_t>(steps, 1));
    const auto tm = evaluate_split(m, d, test_idx);
    row.test_min_l1_err = tm.min_l1_err;
    row.test_mean_match_step = tm.mean_match_step;
    row.d_real = tm.d_real;
    row.d_fake = tm.d_fake;
    result.epochs.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

TrainResult train(const RunConfig& cfg, const std::function<void(const EpochRow&)>& on_epoch) {
  cfg.validate();
  require(!cfg.dataset.empty(), ErrorKind::Config, "train: dataset path is required");
  require(!cfg.out_dir.empty(), ErrorKind::Config, "train: out_dir is required");
  require(std::filesystem::exists(cfg.dataset), ErrorKind::Config, "train: dataset " + cfg.dataset + " does not exist");
  const auto d = worlds::read_dataset(cfg.dataset);
  require(worlds::world_name(d.world) == cfg.world, ErrorKind::Config,
          "config world " + cfg.world + " does not match the dataset's " + worlds::world_name(d.world));
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  require(!ec && std::filesystem::is_directory(cfg.out_dir), ErrorKind::Io, "cannot create " + cfg.out_dir);

  auto m = build_model(cfg, shape_of(d));
  const std::filesystem::path out(cfg.out_dir);
  TrainResult r = train_model(*m, d, on_epoch);
  r.checkpoint_path = (out / "checkpoint.bin").string();
  r.log_path = (out / "train_log.csv").string();
  save_model(*m, r.checkpoint_path);
  write_log(r.log_path, r.epochs);
  std::ofstream((out / "config.json").string(), std::ios::binary) << to_json(cfg).dump(2) << '\n';
  return r;
}

}  // namespace tap::run
