#include "models/networks.hpp"

#include <cmath>

#include "common/error.hpp"

namespace tap::models {

using namespace tap::ad;

namespace {
bool pow2_in_range(std::size_t v) { return v >= 8 && v <= 64 && (v & (v - 1)) == 0; }

void check_frame(const Tensor& t, const PredictorConfig& cfg, std::size_t n, const char* what) {
  require(t.rank() == 4 && t.dim(0) == n && t.dim(1) == cfg.channels && t.dim(2) == cfg.height &&
              t.dim(3) == cfg.width,
          ErrorKind::Shape,
          std::string(what) + ": expected [" + std::to_string(n) + "," + std::to_string(cfg.channels) + "," +
              std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "], got " + shape_str(t.shape()));
}
}  // namespace

void PredictorConfig::validate() const {
  require(pow2_in_range(height) && pow2_in_range(width), ErrorKind::Config,
          "frame height and width must be powers of two in [8, 64]");
  require(channels >= 1, ErrorKind::Config, "channels must be >= 1");
  require(context_count == 1 || context_count == 2, ErrorKind::Config, "context_count must be 1 or 2");
  require(!widths.empty(), ErrorKind::Config, "at least one encoder stage is required");
  require((height >> widths.size()) >= 1 && (width >> widths.size()) >= 1, ErrorKind::Config,
          "too many encoder stages for the frame size");
  require(decoder_kernel % 2 == 1, ErrorKind::Config, "decoder_kernel must be odd");
  require(code_dim >= 1, ErrorKind::Config, "code_dim must be >= 1");
  require(!use_vae || latent_dim >= 1, ErrorKind::Config, "latent_dim must be >= 1 when use_vae");
  require(flow_range > 0, ErrorKind::Config, "flow_range must be positive");
}

std::size_t PredictorConfig::bottleneck_size() const { return (height >> widths.size()) * (width >> widths.size()); }

PredictorOutput compose(const std::vector<Tensor>& contexts, const std::vector<Tensor>& flows, const Tensor& masks,
                        const std::optional<Tensor>& new_pixels) {
  require(!contexts.empty() && contexts.size() == flows.size(), ErrorKind::Shape,
          "compose: one flow per context is required");
  const std::size_t k = contexts.size();
  const std::size_t expected_masks = k + (new_pixels ? 1 : 0);
  require(masks.rank() == 4 && masks.dim(1) == expected_masks, ErrorKind::Shape,
          "compose: mask count does not match contexts/new pixels");
  PredictorOutput out;
  out.flows = flows;
  out.masks = masks;
  Tensor acc;
  for (std::size_t i = 0; i < k; ++i) {
    Tensor w = bilinear_sample(contexts[i], flows[i]);
    out.warped.push_back(w);
    Tensor term = mul(slice(masks, 1, i, 1), w);
    acc = i == 0 ? term : add(acc, term);
  }
  if (new_pixels) {
    out.new_pixels = *new_pixels;
    acc = add(acc, mul(slice(masks, 1, k, 1), *new_pixels));
  } else {
    out.new_pixels = Tensor::zeros(contexts[0].shape());
  }
  out.composited = acc;
  return out;
}

Tensor sample_latent(const LatentPosterior& p, const Tensor& noise) {
  require(noise.shape() == p.mean.shape() && p.log_variance.shape() == p.mean.shape(), ErrorKind::Shape,
          "sample_latent: noise " + shape_str(noise.shape()) + " does not match posterior " +
              shape_str(p.mean.shape()));
  return add(p.mean, mul(exp(mul_scalar(p.log_variance, 0.5)), noise));
}

LatentPosterior standard_normal_prior(std::size_t batch, std::size_t latent_dim) {
  return {Tensor::zeros({batch, latent_dim}), Tensor::zeros({batch, latent_dim})};
}

Tensor gaussian_noise(std::size_t batch, std::size_t latent_dim, Rng& rng) {
  std::vector<double> v(batch * latent_dim);
  for (auto& x : v) x = normal01(rng);
  return Tensor::from({batch, latent_dim}, std::move(v));
}

Encoder::Encoder(ParamStore& store, const std::string& name, std::size_t in_channels,
                 const std::vector<std::size_t>& widths, Rng& rng, bool first_layer_norm) {
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    std::string n = name + ".conv" + std::to_string(i);
    convs_.emplace_back(store, n, in, widths[i], 4, 2, 1, rng);
    if (i > 0 || first_layer_norm)
      norms_.emplace_back(ScaleBias(store, n + ".norm", widths[i]));
    else
      norms_.emplace_back(std::nullopt);
    in = widths[i];
  }
}

Tensor Encoder::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    if (norms_[i]) h = (*norms_[i])(h);
    h = leaky_relu(h, 0.2);
  }
  return h;
}

Decoder::Decoder(ParamStore& store, const std::string& name, std::size_t in_features, std::size_t out_channels,
                 const PredictorConfig& cfg, Rng& rng, double out_gain) {
  const std::size_t stages = cfg.widths.size();
  base_channels_ = cfg.widths.back();
  base_size_ = cfg.bottleneck_size();
  stem_ = Linear(store, name + ".stem", in_features, base_channels_ * base_size_, rng);
  stem_norm_ = ScaleBias(store, name + ".stem.norm", base_channels_);
  for (std::size_t j = 0; j < stages; ++j) {
    std::size_t in = cfg.widths[stages - 1 - j];
    bool last = j + 1 == stages;
    std::size_t out = last ? out_channels : cfg.widths[stages - 2 - j];
    std::string n = name + ".conv" + std::to_string(j);
    convs_.emplace_back(store, n, in, out, cfg.decoder_kernel, 1, cfg.decoder_kernel / 2, rng,
                        last ? out_gain : 1.0);
    if (!last) norms_.emplace_back(store, n + ".norm", out);
  }
  base_h_w_ = {cfg.height >> stages, cfg.width >> stages};
}

Tensor Decoder::operator()(const Tensor& code) const {
  const std::size_t n = code.dim(0);
  Tensor h = reshape(stem_(code), {n, base_channels_, base_h_w_.first, base_h_w_.second});
  h = relu(stem_norm_(h));
  for (std::size_t j = 0; j < convs_.size(); ++j) {
    h = convs_[j](upsample_nearest2x(h));
    if (j < norms_.size()) h = relu(norms_[j](h));
  }
  return h;
}

Predictor::Predictor(ParamStore& store, const PredictorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = Encoder(store, "G.encoder", cfg.channels, cfg.widths, rng, true);
  const std::size_t feat = cfg.widths.back() * cfg.bottleneck_size() * cfg.context_count;
  head1_ = Linear(store, "G.head1", feat, cfg.code_dim, rng);
  head2_ = Linear(store, "G.head2", cfg.code_dim, cfg.code_dim, rng);
  const std::size_t dec_in = cfg.code_dim + (cfg.use_vae ? cfg.latent_dim : 0);
  if (cfg.use_new_pixels) new_pixels_ = Decoder(store, "G.new_pixels", dec_in, cfg.channels, cfg, rng);
  // Small output gain keeps initial flows near the identity warp.
  flow_ = Decoder(store, "G.flow", dec_in, 2 * cfg.context_count, cfg, rng, 0.05);
  mask_ = Decoder(store, "G.mask", dec_in, cfg.mask_count(), cfg, rng, 0.1);
}

PredictorOutput Predictor::operator()(const std::vector<Tensor>& contexts, const std::optional<Tensor>& z) const {
  require(contexts.size() == cfg_.context_count, ErrorKind::Shape,
          "predict: expected " + std::to_string(cfg_.context_count) + " context frames");
  const std::size_t n = contexts[0].dim(0);
  for (const auto& c : contexts) check_frame(c, cfg_, n, "predict context");
  require(z.has_value() == cfg_.use_vae, ErrorKind::Shape,
          cfg_.use_vae ? "predict: latent z is required in VAE mode" : "predict: latent z given to a non-VAE model");
  if (z)
    require(z->rank() == 2 && z->dim(0) == n && z->dim(1) == cfg_.latent_dim, ErrorKind::Shape,
            "predict: latent z must be [N," + std::to_string(cfg_.latent_dim) + "], got " + shape_str(z->shape()));

  const std::size_t k = cfg_.context_count;
  Tensor feats = encoder_(k == 1 ? contexts[0] : concat(contexts, 0));
  const std::size_t feat_dim = feats.numel() / (k * n);
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < k; ++i) parts.push_back(reshape(slice(feats, 0, i * n, n), {n, feat_dim}));
  Tensor h = k == 1 ? parts[0] : concat(parts, 1);
  Tensor code = head2_(relu(head1_(h)));
  if (z) code = concat({code, *z}, 1);

  std::optional<Tensor> fresh;
  if (cfg_.use_new_pixels) fresh = tanh(new_pixels_(code));
  Tensor flow_raw = flow_(code);
  std::vector<Tensor> flows;
  for (std::size_t i = 0; i < k; ++i) flows.push_back(mul_scalar(tanh(slice(flow_raw, 1, 2 * i, 2)), cfg_.flow_range));
  Tensor masks = softmax(mask_(code), 1);
  return compose(contexts, flows, masks, fresh);
}

DiscriminatorBank::DiscriminatorBank(ParamStore& store, const std::string& name, const PredictorConfig& cfg,
                                     std::size_t target_count, Rng& rng)
    : target_count_(target_count), context_count_(cfg.context_count) {
  require(target_count >= 1, ErrorKind::Config, "discriminator bank needs at least one target time");
  trunk_ = Encoder(store, name + ".trunk", (cfg.context_count + 1) * cfg.channels, cfg.widths, rng, false);
  out_ = Linear(store, name + ".out", cfg.widths.back() * cfg.bottleneck_size(), target_count, rng, 0.5);
}

Tensor DiscriminatorBank::operator()(const std::vector<Tensor>& contexts, const Tensor& frame) const {
  require(contexts.size() == context_count_, ErrorKind::Shape, "discriminate: wrong context count");
  for (const auto& c : contexts)
    require(c.shape() == frame.shape(), ErrorKind::Shape, "discriminate: frame and context sizes differ");
  std::vector<Tensor> parts = contexts;
  parts.push_back(frame);
  Tensor h = trunk_(concat(parts, 1));
  const std::size_t n = frame.dim(0);
  return sigmoid(out_(reshape(h, {n, h.numel() / n})));
}

InferenceNet::InferenceNet(ParamStore& store, const PredictorConfig& cfg, std::size_t frame_count, Rng& rng)
    : frame_count_(frame_count), latent_(cfg.latent_dim) {
  trunk_ = Encoder(store, "Q.trunk", frame_count * cfg.channels, cfg.widths, rng, false);
  out_ = Linear(store, "Q.out", cfg.widths.back() * cfg.bottleneck_size(), 2 * cfg.latent_dim, rng, 0.1);
}

LatentPosterior InferenceNet::operator()(const Tensor& video) const {
  require(video.rank() == 5 && video.dim(1) == frame_count_, ErrorKind::Shape,
          "infer_posterior: expected [N," + std::to_string(frame_count_) + ",C,H,W] video, got " +
              shape_str(video.shape()));
  const std::size_t n = video.dim(0);
  Tensor x = reshape(video, {n, video.dim(1) * video.dim(2), video.dim(3), video.dim(4)});
  Tensor h = trunk_(x);
  Tensor o = out_(reshape(h, {n, h.numel() / n}));
  return {slice(o, 1, 0, latent_), slice(o, 1, latent_, latent_)};
}

}  // namespace tap::models
