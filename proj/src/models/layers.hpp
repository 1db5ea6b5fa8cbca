#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "autodiff/ops.hpp"
#include "common/rng.hpp"

namespace tap::models {

using ad::Tensor;

// Ordered collection of named trainable leaves. Order is registration order, which fixes the
// checkpoint layout and the optimizer state layout.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor t);
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t count() const;  // total scalar parameters
  void zero_grad();
  const Tensor* find(const std::string& name) const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

struct Conv {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1, pad = 0;
  Conv() = default;
  Conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
       std::size_t stride, std::size_t pad, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

// Per-channel learnable scale and shift with no running statistics (stands in for batch-norm).
struct ScaleBias {
  Tensor scale;  // [1, C, 1, 1]
  Tensor shift;  // [1, C, 1, 1]
  ScaleBias() = default;
  ScaleBias(ParamStore& store, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x) const;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamStore& store, AdamConfig cfg);
  // Applies one update from the accumulated grads, then zeroes them.
  void step(ParamStore& store);
  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace tap::models
