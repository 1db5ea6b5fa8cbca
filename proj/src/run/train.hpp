#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "run/model.hpp"

namespace tap::run {

struct EpochRow {
  std::size_t epoch = 0;
  std::map<std::string, double> train;  // mean loss components over the epoch's steps
  double test_min_l1_err = 0.0;
  double test_mean_match_step = 0.0;
  double d_real = -1.0, d_fake = -1.0;  // mean bank outputs on test data; -1 without a GAN
};

struct TrainResult {
  std::vector<EpochRow> epochs;
  std::vector<double> step_totals;  // generator objective per optimisation step
  std::string checkpoint_path, log_path;
};

struct TestMetrics {
  double min_l1_err = 0.0, mean_match_step = 0.0, d_real = -1.0, d_fake = -1.0;
};
// Deterministic predictions (prior mean z = 0 for VAE models) on the given episodes.
TestMetrics evaluate_split(const Model& m, const worlds::Dataset& d, const std::vector<std::size_t>& episodes);

// Trains a fresh model on `d` in memory. `on_epoch` is called after every epoch.
TrainResult train_model(Model& m, const worlds::Dataset& d,
                        const std::function<void(const EpochRow&)>& on_epoch = nullptr);

// Reads cfg.dataset, trains, and writes checkpoint.bin, train_log.csv and config.json into cfg.out_dir.
TrainResult train(const RunConfig& cfg, const std::function<void(const EpochRow&)>& on_epoch = nullptr);

}  // namespace tap::run
