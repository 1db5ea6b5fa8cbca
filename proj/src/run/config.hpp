#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "models/networks.hpp"
#include "taploss/losses.hpp"

namespace tap::run {

enum class Mode { Forward, Bidirectional, Recursive };
enum class LossKind { Fix, Min, GenMin, GenMinVae, GenMinNoGan };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);
std::string loss_name(LossKind k);
LossKind parse_loss(const std::string& s);

struct RunConfig {
  std::string world = "gridpick";
  std::string dataset;  // input path
  std::string out_dir;  // created if missing
  Mode mode = Mode::Bidirectional;
  Mode recursive_base = Mode::Bidirectional;  // training layout used when mode == Recursive
  LossKind loss = LossKind::GenMin;
  std::string preference = "auto";  // auto, uniform, linear, bell
  double beta = 1.0;
  double sigma = 0.0;  // bell width; <= 0 means |T|/4
  double fix_fraction = 0.5;
  double lambda_kl = 1e-2;
  double lambda_gan = 1e-2;
  double label_alpha = 0.25;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  std::size_t max_train_episodes = 0;  // 0 = the whole training split
  std::size_t pretrain_epochs = 0;     // decoder pretraining as a frame autoencoder

  bool use_new_pixels = true;
  std::size_t code_dim = 64;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> widths{16, 32, 64};
  std::vector<std::size_t> disc_widths{8, 16, 32};  // discriminator and inference-net trunks
  std::size_t decoder_kernel = 3;
  double flow_range = 8.0;

  void validate() const;
  Mode layout() const { return mode == Mode::Recursive ? recursive_base : mode; }
  bool use_vae() const { return loss == LossKind::GenMinVae; }
  bool use_gan() const { return loss == LossKind::Min || loss == LossKind::GenMin || loss == LossKind::GenMinVae; }

  std::size_t context_count() const { return layout() == Mode::Forward ? 1 : 2; }
  std::vector<std::size_t> context_indices(std::size_t frames) const;
  loss::TargetSet targets(std::size_t frames) const;
  std::size_t fix_target(std::size_t frames) const;  // frame index used by loss=fix
  loss::TimePreference preference_for(std::size_t target_count) const;
  models::PredictorConfig predictor(std::size_t height, std::size_t width, std::size_t channels) const;
};

nlohmann::json to_json(const RunConfig& c);
// Unknown keys and wrongly typed values are config errors; missing keys keep their defaults.
RunConfig from_json(const nlohmann::json& j);
// Applies `overrides` on top of `base` key by key (flags win over the config file).
RunConfig merge_config(const nlohmann::json& base, const nlohmann::json& overrides);

}  // namespace tap::run
