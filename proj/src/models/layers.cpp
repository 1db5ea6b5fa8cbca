#include "models/layers.hpp"

#include <cmath>

#include "common/error.hpp"

namespace tap::models {

namespace {
Tensor he_normal(ad::Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  std::vector<double> v(ad::numel_of(shape));
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = sd * normal01(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}
}  // namespace

Tensor& ParamStore::add(std::string name, Tensor t) {
  for (const auto& [n, _] : items_) require(n != name, ErrorKind::Argument, "duplicate parameter name " + name);
  items_.emplace_back(std::move(name), std::move(t));
  return items_.back().second;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain) {
  weight = store.add(name + ".weight", he_normal({in, out}, in, rng, gain));
  bias = store.add(name + ".bias", Tensor::zeros({1, out}, true));
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

Conv::Conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
           std::size_t stride_, std::size_t pad_, Rng& rng, double gain)
    : stride(stride_), pad(pad_) {
  weight = store.add(name + ".weight", he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng, gain));
  bias = store.add(name + ".bias", Tensor::zeros({out}, true));
}

Tensor Conv::operator()(const Tensor& x) const { return ad::conv2d(x, weight, bias, stride, pad); }

ScaleBias::ScaleBias(ParamStore& store, const std::string& name, std::size_t channels) {
  scale = store.add(name + ".scale", Tensor::full({1, channels, 1, 1}, 1.0, true));
  shift = store.add(name + ".shift", Tensor::zeros({1, channels, 1, 1}, true));
}

Tensor ScaleBias::operator()(const Tensor& x) const { return ad::add(ad::mul(x, scale), shift); }

Adam::Adam(const ParamStore& store, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& [_, t] : store.items()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step(ParamStore& store) {
  require(store.items().size() == m_.size(), ErrorKind::Argument, "optimizer/parameter count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < m_.size(); ++k) {
    auto& t = store.items()[k].second;
    auto g = t.grad();
    auto p = t.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i])) fail(ErrorKind::Numeric, "non-finite gradient for " + store.items()[k].first);
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * g[i];
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.lr * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + cfg_.eps);
    }
    t.zero_grad();
  }
}

}  // namespace tap::models
