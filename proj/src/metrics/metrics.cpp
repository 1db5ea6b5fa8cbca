#include "metrics/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "common/error.hpp"
#include "io/binary.hpp"

namespace tap::metrics {

using namespace tap::ad;

std::vector<EvalRecord> min_l1_and_match_batch(const Tensor& pred, const Tensor& targets, const loss::TargetSet& set) {
  require(!set.empty(), ErrorKind::Argument, "min_l1_and_match: empty target set");
  NoGrad ng;
  auto r = loss::min_over_time_loss(pred, targets, set);
  Tensor e = loss::l1_errors(pred, targets);
  std::vector<EvalRecord> out(pred.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].match_step = r.match_index[i];
    out[i].min_l1_err = e.data()[i * set.size() + r.match_position[i]];
  }
  return out;
}

EvalRecord min_l1_and_match(const Tensor& pred, const Tensor& targets, const loss::TargetSet& set) {
  require(pred.rank() == 3 && targets.rank() == 4, ErrorKind::Shape, "min_l1_and_match: expected [C,H,W] and [K,C,H,W]");
  Shape ps{1}, ts{1};
  ps.insert(ps.end(), pred.shape().begin(), pred.shape().end());
  ts.insert(ts.end(), targets.shape().begin(), targets.shape().end());
  return min_l1_and_match_batch(reshape(pred, ps), reshape(targets, ts), set).front();
}

Cell LocationMap::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return {static_cast<int>(best % width), static_cast<int>(best / width)};
}

std::vector<LocationMap> subgoal_locations(const models::PredictorOutput& out, std::size_t n,
                                           const std::vector<std::vector<Cell>>& positions) {
  const std::size_t k = out.flows.size();
  require(out.masks.dim(1) == k, ErrorKind::Config,
          "subgoal_locations: requires a warp-only model (new-pixel synthesis must be disabled)");
  require(positions.size() == k, ErrorKind::Argument, "subgoal_locations: one position list per context");
  const std::size_t h = out.masks.dim(2), w = out.masks.dim(3), entities = positions.front().size();
  require(n < out.masks.dim(0), ErrorKind::Argument, "subgoal_locations: sample index out of range");
  NoGrad ng;
  std::vector<LocationMap> maps;
  for (std::size_t e = 0; e < entities; ++e) {
    Tensor acc = Tensor::zeros({1, 1, h, w});
    for (std::size_t c = 0; c < k; ++c) {
      require(positions[c].size() == entities, ErrorKind::Argument, "subgoal_locations: entity count differs");
      const Cell q = positions[c][e];
      require(q.x >= 0 && q.y >= 0 && static_cast<std::size_t>(q.x) < w && static_cast<std::size_t>(q.y) < h,
              ErrorKind::Argument, "subgoal_locations: position outside the frame");
      std::vector<double> onehot(h * w, 0.0);
      onehot[static_cast<std::size_t>(q.y) * w + static_cast<std::size_t>(q.x)] = 1.0;
      Tensor warped = bilinear_sample(Tensor::from({1, 1, h, w}, std::move(onehot)), slice(out.flows[c], 0, n, 1));
      acc = add(acc, mul(slice(slice(out.masks, 0, n, 1), 1, c, 1), warped));
    }
    LocationMap m{h, w, std::vector<double>(acc.data().begin(), acc.data().end())};
    double total = 0;
    for (double v : m.p) total += v;
    if (total > 0) {
      for (auto& v : m.p) v /= total;
    } else {
      std::fill(m.p.begin(), m.p.end(), 1.0 / static_cast<double>(h * w));
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

namespace {
double expected_distance(const LocationMap& m, Cell c) {
  double s = 0;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      const double pv = m.p[y * m.width + x];
      if (pv != 0) s += pv * std::hypot(static_cast<double>(x) - c.x, static_cast<double>(y) - c.y);
    }
  return s;
}
}  // namespace

double bottleneck_score(const std::vector<LocationMap>& maps, const std::vector<Cell>& starts,
                        const std::vector<Cell>& goals) {
  require(maps.size() == 2 && starts.size() == 2 && goals.size() == 2, ErrorKind::Argument,
          "bottleneck_score: defined for exactly two entities");
  const double a_first = expected_distance(maps[0], goals[0]) + expected_distance(maps[1], starts[1]);
  const double b_first = expected_distance(maps[0], starts[0]) + expected_distance(maps[1], goals[1]);
  return std::min(a_first, b_first);
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 16; ++i) t.push_back(0.5 * i);
  return t;
}

std::vector<CurvePoint> bottleneck_frequency_curve(const std::vector<double>& scores,
                                                   const std::vector<double>& thresholds) {
  require(!scores.empty(), ErrorKind::Argument, "bottleneck_frequency_curve: no scores");
  std::vector<CurvePoint> out;
  for (double th : thresholds) {
    std::size_t hit = 0;
    for (double s : scores) hit += s <= th;
    out.push_back({th, static_cast<double>(hit) / static_cast<double>(scores.size())});
  }
  return out;
}

BestOfN best_of_n_eval(const std::function<Tensor(std::size_t)>& sample, const Tensor& targets,
                       const loss::TargetSet& set, std::size_t n) {
  require(n >= 1, ErrorKind::Argument, "best_of_n_eval: n must be >= 1");
  BestOfN r;
  for (std::size_t i = 0; i < n; ++i) {
    auto rec = min_l1_and_match(sample(i), targets, set);
    if (i == 0 || rec.min_l1_err < r.min_l1_err) {
      r.min_l1_err = rec.min_l1_err;
      r.match_step = rec.match_step;
    }
    r.prefix_best.push_back(r.min_l1_err);
  }
  return r;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_eval_csv(const std::string& path, const std::vector<EvalRecord>& rows) {
  std::string s = "episode,method,min_l1_err,match_step\n";
  for (const auto& r : rows)
    s += std::to_string(r.episode) + "," + r.method + "," + format_double(r.min_l1_err) + "," +
         std::to_string(r.match_step) + "\n";
  io::write_file(path, std::vector<char>(s.begin(), s.end()));
}

void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::string s = "threshold,frequency,method\n";
  for (const auto& r : rows) s += format_double(r.threshold) + "," + format_double(r.frequency) + "," + r.method + "\n";
  io::write_file(path, std::vector<char>(s.begin(), s.end()));
}

}  // namespace tap::metrics
