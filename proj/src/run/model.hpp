#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "models/networks.hpp"
#include "run/config.hpp"
#include "synthworlds/worlds.hpp"

namespace tap::run {

struct DataShape {
  std::string world;
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  bool operator==(const DataShape&) const = default;
};
DataShape shape_of(const worlds::Dataset& d);

// Generator plus the optional discriminator banks (D on prior samples, D' on posterior samples)
// and inference network, each in its own parameter store.
struct Model {
  RunConfig cfg;
  DataShape data;
  std::vector<std::size_t> contexts;
  loss::TargetSet targets;

  models::ParamStore g_store, d_store, dp_store, q_store;
  models::Predictor g;
  std::optional<models::DiscriminatorBank> d, d_post;
  std::optional<models::InferenceNet> q;

  std::size_t target_count() const { return targets.size(); }
  std::vector<const models::ParamStore*> stores() const;
};

std::unique_ptr<Model> build_model(const RunConfig& cfg, const DataShape& data);
void save_model(const Model& m, const std::string& path);
std::unique_ptr<Model> load_model(const std::string& path);
// Data error when the dataset's world, episode length or frame size differ from the model's.
void check_compatible(const Model& m, const worlds::Dataset& d);

struct Batch {
  std::size_t n = 0;
  std::vector<ad::Tensor> contexts;  // context_count x [N,C,H,W]
  ad::Tensor targets;                // [N,K,C,H,W]
  ad::Tensor video;                  // [N, contexts + K, C, H, W]; only with the VAE
};
Batch make_batch(const Model& m, const worlds::Dataset& d, const std::vector<std::size_t>& episodes);

// Frame [C,H,W] pulled out of sample n of a [N,C,H,W] tensor.
ad::Tensor sample_frame(const ad::Tensor& batch, std::size_t n);

// Deterministic forward pass used by evaluation; `z` is required iff the model has a VAE.
models::PredictorOutput predict(const Model& m, const std::vector<ad::Tensor>& contexts,
                                const std::optional<ad::Tensor>& z);

}  // namespace tap::run
