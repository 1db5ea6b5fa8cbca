#pragma once

#include <functional>
#include <string>
#include <vector>

#include "models/networks.hpp"
#include "synthworlds/pushworld.hpp"
#include "taploss/losses.hpp"

namespace tap::metrics {

using ad::Tensor;
using worlds::Cell;

struct EvalRecord {
  std::size_t episode = 0;
  std::string method;
  double min_l1_err = 0.0;
  std::size_t match_step = 0;  // frame index of the closest target
};

// Mean-l1 distance from pred [C,H,W] to the closest of targets [K,C,H,W]; ties go to the earlier frame.
EvalRecord min_l1_and_match(const Tensor& pred, const Tensor& targets, const loss::TargetSet& set);
// Batched form: pred [N,C,H,W], targets [N,K,C,H,W].
std::vector<EvalRecord> min_l1_and_match_batch(const Tensor& pred, const Tensor& targets, const loss::TargetSet& set);

struct LocationMap {
  std::size_t height = 0, width = 0;
  std::vector<double> p;  // row-major, sums to 1
  Cell argmax() const;    // first maximum in row-major order
};

// Pushes one-hot maps at each entity's position in every context frame through the predictor's
// flows and masks (sample `n` of the batch), then renormalises. positions[k][e] is entity e in
// context k. Refuses outputs that synthesise new pixels.
std::vector<LocationMap> subgoal_locations(const models::PredictorOutput& out, std::size_t n,
                                           const std::vector<std::vector<Cell>>& positions);

// Expected Euclidean distance of two entity maps to the two "one object moved" states; the lower
// of the two candidate sums.
double bottleneck_score(const std::vector<LocationMap>& maps, const std::vector<Cell>& starts,
                        const std::vector<Cell>& goals);

struct CurvePoint {
  double threshold = 0.0;
  double frequency = 0.0;
};
std::vector<double> default_thresholds();  // 0.5, 1.0, ..., 8.0
std::vector<CurvePoint> bottleneck_frequency_curve(const std::vector<double>& scores,
                                                   const std::vector<double>& thresholds);

struct BestOfN {
  double min_l1_err = 0.0;
  std::size_t match_step = 0;
  std::vector<double> prefix_best;  // best error among the first i+1 samples
};
// sample(i) returns the i-th stochastic prediction [C,H,W].
BestOfN best_of_n_eval(const std::function<Tensor(std::size_t)>& sample, const Tensor& targets,
                       const loss::TargetSet& set, std::size_t n);

void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& rows);
struct CurveRow {
  double threshold, frequency;
  std::string method;
};
void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows);
std::string format_double(double v);  // shortest round-trip decimal

}  // namespace tap::metrics
