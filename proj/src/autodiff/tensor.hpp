#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tap::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  bool grad_touched = false;  // set when backward has deposited a gradient here
};

// Dense row-major f64 array. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  void zero_grad();
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Thread-local record of executed operations. Each thread owns exactly one tape.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& current();

  void record(std::shared_ptr<TensorImpl> output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  // Runs recorded closures in reverse execution order, then clears the tape.
  void run_backward();

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

bool grad_enabled();

// Disables recording on this thread for the guard's lifetime.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

// Builds an op result. `backward_fn` receives the output gradient and must accumulate into the
// inputs' grad buffers; it only runs when at least one input requires grad.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(const TensorImpl& out)> backward_fn);

// Adds `values` into impl.grad and marks it touched (no-op if impl does not require grad).
void accumulate(TensorImpl& impl, std::span<const double> values);

// Gradient buffer to accumulate into directly; empty when impl does not require grad.
std::span<double> grad_sink(TensorImpl& impl);

}  // namespace tap::ad
