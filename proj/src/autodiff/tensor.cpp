#include "autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "common/error.hpp"

namespace tap::ad {

namespace {
thread_local bool g_grad_enabled = true;

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string("non-finite value in ") + where);
}
}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(numel_of(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  check_finite(impl->data, "tensor constructor");
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  require(numel_of(shape) == values.size(), ErrorKind::Shape,
          "tensor data length " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  check_finite(values, "tensor constructor");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < rank(), ErrorKind::Shape, "axis out of range for shape " + shape_str(shape()));
  return impl_->shape[axis];
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::Shape, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  require(index.size() == rank(), ErrorKind::Shape, "index rank mismatch");
  std::size_t off = 0, k = 0;
  for (auto i : index) {
    require(i < impl_->shape[k], ErrorKind::Shape, "index out of range");
    off = off * impl_->shape[k] + i;
    ++k;
  }
  return impl_->data[off];
}

void Tensor::zero_grad() {
  if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  impl_->grad_touched = false;
}

Tensor Tensor::clone(bool requires_grad) const { return from(impl_->shape, impl_->data, requires_grad); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::shared_ptr<TensorImpl> output, BackwardFn fn) {
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

void Tape::run_backward() {
  // Move entries out first so closures that throw still leave the tape cleared.
  std::vector<Entry> entries;
  entries.swap(entries_);
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (!it->output->grad_touched) continue;
    check_finite(it->output->grad, "backward pass");
    it->fn();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGrad::NoGrad() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  require(loss.numel() == 1, ErrorKind::Shape, "backward() requires a scalar loss, got " + shape_str(loss.shape()));
  auto& tape = Tape::current();
  require(!tape.empty(), ErrorKind::Argument, "backward() on an empty tape (double backward is not supported)");
  require(loss.requires_grad(), ErrorKind::Argument, "backward() on a loss that does not require grad");
  auto& impl = *loss.impl();
  impl.grad.assign(1, 1.0);
  impl.grad_touched = true;
  tape.run_backward();
}

void accumulate(TensorImpl& impl, std::span<const double> values) {
  if (!impl.requires_grad) return;
  check_finite(values, "backward pass");
  for (std::size_t i = 0; i < values.size(); ++i) impl.grad[i] += values[i];
  impl.grad_touched = true;
}

std::span<double> grad_sink(TensorImpl& impl) {
  if (!impl.requires_grad) return {};
  impl.grad_touched = true;
  return impl.grad;
}

namespace {
template <class Inputs>
Tensor make_result_impl(Shape shape, std::vector<double> values, const Inputs& inputs,
                        std::function<void(const TensorImpl& out)> backward_fn) {
  check_finite(values, "forward pass");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    impl->requires_grad = true;
    impl->grad.assign(impl->data.size(), 0.0);
    TensorImpl* raw = impl.get();
    Tape::current().record(impl, [fn = std::move(backward_fn), raw] { fn(*raw); });
  }
  return Tensor(std::move(impl));
}
}  // namespace

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn) {
  return make_result_impl(std::move(shape), std::move(values), inputs, std::move(backward_fn));
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(const TensorImpl& out)> backward_fn) {
  return make_result_impl(std::move(shape), std::move(values), inputs, std::move(backward_fn));
}

}  // namespace tap::ad
