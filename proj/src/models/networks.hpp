#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "models/layers.hpp"

namespace tap::models {

struct PredictorConfig {
  std::size_t height = 16, width = 16, channels = 3;
  std::size_t context_count = 2;  // 1 forward, 2 bidirectional (start, goal)
  std::size_t code_dim = 64;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t decoder_kernel = 3;
  bool use_vae = false;
  bool use_new_pixels = true;
  double flow_range = 8.0;  // max |flow| in pixels

  void validate() const;
  std::size_t mask_count() const { return context_count + (use_new_pixels ? 1 : 0); }
  std::size_t bottleneck_size() const;  // spatial size after the encoder
};

struct PredictorOutput {
  Tensor new_pixels;           // [N,C,H,W]; zeros when new-pixel synthesis is off
  std::vector<Tensor> flows;   // per context, [N,2,H,W]
  std::vector<Tensor> warped;  // per context, [N,C,H,W]
  Tensor masks;                // [N,K,H,W], softmax over K; last channel is new pixels when enabled
  Tensor composited;           // [N,C,H,W]
};

// composited = sum_k mask_k * warp(context_k, flow_k) (+ mask_new * new_pixels).
PredictorOutput compose(const std::vector<Tensor>& contexts, const std::vector<Tensor>& flows, const Tensor& masks,
                        const std::optional<Tensor>& new_pixels);

struct LatentPosterior {
  Tensor mean;          // [N, latent]
  Tensor log_variance;  // [N, latent]
};

// z = mean + exp(log_variance / 2) * noise.
Tensor sample_latent(const LatentPosterior& p, const Tensor& noise);
LatentPosterior standard_normal_prior(std::size_t batch, std::size_t latent_dim);
Tensor gaussian_noise(std::size_t batch, std::size_t latent_dim, Rng& rng);

class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore& store, const std::string& name, std::size_t in_channels, const std::vector<std::size_t>& widths,
          Rng& rng, bool first_layer_norm);
  Tensor operator()(const Tensor& x) const;  // [N, widths.back(), s, s]

 private:
  std::vector<Conv> convs_;
  std::vector<std::optional<ScaleBias>> norms_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore& store, const std::string& name, std::size_t in_features, std::size_t out_channels,
          const PredictorConfig& cfg, Rng& rng, double out_gain = 1.0);
  Tensor operator()(const Tensor& code) const;  // [N, out_channels, H, W], no output activation

 private:
  Linear stem_;
  ScaleBias stem_norm_;
  std::vector<Conv> convs_;
  std::vector<ScaleBias> norms_;
  std::size_t base_channels_ = 0, base_size_ = 0;
  std::pair<std::size_t, std::size_t> base_h_w_{0, 0};
};

class Predictor {
 public:
  Predictor() = default;
  Predictor(ParamStore& store, const PredictorConfig& cfg, Rng& rng);

  // contexts: context_count tensors of [N,C,H,W]; z: [N,latent] iff cfg.use_vae.
  PredictorOutput operator()(const std::vector<Tensor>& contexts, const std::optional<Tensor>& z) const;
  const PredictorConfig& config() const { return cfg_; }

 private:
  PredictorConfig cfg_;
  Encoder encoder_;
  Linear head1_, head2_;
  Decoder new_pixels_, flow_, mask_;
};

// Single network with one sigmoid output per target time (the bank D_t, t in T).
class DiscriminatorBank {
 public:
  DiscriminatorBank() = default;
  DiscriminatorBank(ParamStore& store, const std::string& name, const PredictorConfig& cfg, std::size_t target_count,
                    Rng& rng);
  // Returns [N, |T|] probabilities D_t(c, frame).
  Tensor operator()(const std::vector<Tensor>& contexts, const Tensor& frame) const;
  std::size_t target_count() const { return target_count_; }

 private:
  std::size_t target_count_ = 0, context_count_ = 0;
  Encoder trunk_;
  Linear out_;
};

// q(z | X): sees every frame of the video (contexts then targets) channel-concatenated.
class InferenceNet {
 public:
  InferenceNet() = default;
  InferenceNet(ParamStore& store, const PredictorConfig& cfg, std::size_t frame_count, Rng& rng);
  LatentPosterior operator()(const Tensor& video) const;  // video: [N, frames, C, H, W]
  std::size_t frame_count() const { return frame_count_; }

 private:
  std::size_t frame_count_ = 0, latent_ = 0;
  Encoder trunk_;
  Linear out_;
};

}  // namespace tap::models
