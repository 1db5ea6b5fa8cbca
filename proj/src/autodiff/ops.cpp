#include "autodiff/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "common/error.hpp"

namespace tap::ad {

namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // per output dim; 0 where the operand is broadcast
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  bc.sa.assign(r, 0);
  bc.sb.assign(r, 0);
  auto sta = row_major_strides(a), stb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ai = i + a.size() >= r ? i + a.size() - r : SIZE_MAX;
    std::size_t bi = i + b.size() >= r ? i + b.size() - r : SIZE_MAX;
    std::size_t da = ai == SIZE_MAX ? 1 : a[ai];
    std::size_t db = bi == SIZE_MAX ? 1 : b[bi];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    bc.out[i] = std::max(da, db);
    if (da == bc.out[i] && ai != SIZE_MAX) bc.sa[i] = sta[ai];
    if (db == bc.out[i] && bi != SIZE_MAX) bc.sb[i] = stb[bi];
    if (da == 1) bc.sa[i] = 0;
    if (db == 1) bc.sb[i] = 0;
  }
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t r = bc.out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t total = numel_of(bc.out);
  if (total == 0) return;
  const std::size_t inner = bc.out[r - 1], sai = bc.sa[r - 1], sbi = bc.sb[r - 1];
  const std::size_t outer = total / inner;
  std::vector<std::size_t> idx(r - 1, 0);
  std::size_t oa = 0, ob = 0, o = 0;
  for (std::size_t k = 0; k < outer; ++k) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * sai, ob + j * sbi);
    o += inner;
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += bc.sa[d];
      ob += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      oa -= bc.sa[d] * bc.out[d];
      ob -= bc.sb[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

// fwd(a, b) -> y; da(a, b, y) = dy/da; db(a, b, y) = dy/db.
template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db, const char* name) {
  auto ad = a.data(), bd = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
    return make_result(a.shape(), std::move(out), {a, b}, [a, b, da, db](const TensorImpl& o) {
      auto ga = grad_sink(*a.impl()), gb = grad_sink(*b.impl());
      auto av = a.data(), bv = b.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (!ga.empty()) ga[i] += o.grad[i] * da(av[i], bv[i], o.data[i]);
        if (!gb.empty()) gb[i] += o.grad[i] * db(av[i], bv[i], o.data[i]);
      }
    });
  }
  auto bc = std::make_shared<Broadcast>(broadcast_shapes(a.shape(), b.shape(), name));
  std::vector<double> out(numel_of(bc->out));
  for_each_broadcast(*bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(ad[ia], bd[ib]); });
  return make_result(bc->out, std::move(out), {a, b}, [a, b, bc, da, db](const TensorImpl& o) {
    auto ga = grad_sink(*a.impl()), gb = grad_sink(*b.impl());
    auto av = a.data(), bv = b.data();
    for_each_broadcast(*bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (!ga.empty()) ga[ia] += o.grad[i] * da(av[ia], bv[ib], o.data[i]);
      if (!gb.empty()) gb[ib] += o.grad[i] * db(av[ia], bv[ib], o.data[i]);
    });
  });
}

// fwd(x) -> y; deriv(x, y) = dy/dx.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, deriv](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * deriv(xv[i], o.data[i]);
  });
}

// Splits shape around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis, const char* op) {
  require(axis < s.size(), ErrorKind::Shape, std::string(op) + ": axis out of range for " + shape_str(s));
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); }, "div");
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0)) fail(ErrorKind::Numeric, "log of non-positive value");
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  auto sp = split_at(x.shape(), axis, "softmax");
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      std::size_t base = o * sp.n * sp.inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, xd[base + k * sp.inner]);
      double s = 0;
      for (std::size_t k = 0; k < sp.n; ++k) s += out[base + k * sp.inner] = std::exp(xd[base + k * sp.inner] - mx);
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= s;
    }
  return make_result(x.shape(), std::move(out), {x}, [x, sp](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    for (std::size_t a = 0; a < sp.outer; ++a)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        std::size_t base = a * sp.n * sp.inner + j;
        double dot = 0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += o.grad[base + k * sp.inner] * o.data[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          std::size_t i = base + k * sp.inner;
          gx[i] += o.data[i] * (o.grad[i] - dot);
        }
      }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [x](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    for (auto& g : gx) g += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, ErrorKind::Shape, "mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  std::vector<bool> reduced(s.size(), false);
  for (auto a : axes) {
    require(a < s.size(), ErrorKind::Shape, "sum: axis out of range for " + shape_str(s));
    reduced[a] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!reduced[i]) out_shape.push_back(s[i]);
  auto out_strides = row_major_strides(out_shape);
  // Map every input dim to its stride in the output (0 for reduced dims).
  auto map = std::make_shared<std::vector<std::size_t>>(s.size(), 0);
  for (std::size_t i = 0, k = 0; i < s.size(); ++i)
    if (!reduced[i]) (*map)[i] = out_strides[k++];
  auto visit = [s, map](auto&& f) {
    const std::size_t total = numel_of(s);
    if (total == 0) return;
    if (s.empty()) {
      f(std::size_t{0}, std::size_t{0});
      return;
    }
    const std::size_t r = s.size(), inner = s[r - 1], st = (*map)[r - 1];
    std::vector<std::size_t> idx(r - 1, 0);
    std::size_t o = 0, i = 0;
    for (std::size_t k = 0; k < total / inner; ++k) {
      for (std::size_t j = 0; j < inner; ++j) f(i + j, o + j * st);
      i += inner;
      for (std::size_t d = r - 1; d-- > 0;) {
        ++idx[d];
        o += (*map)[d];
        if (idx[d] < s[d]) break;
        o -= (*map)[d] * s[d];
        idx[d] = 0;
      }
    }
  };
  auto xd = x.data();
  std::vector<double> out(numel_of(out_shape), 0.0);
  visit([&](std::size_t i, std::size_t o) { out[o] += xd[i]; });
  return make_result(out_shape, std::move(out), {x}, [x, visit](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    visit([&](std::size_t i, std::size_t oi) { gx[i] += o.grad[oi]; });
  });
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes) {
  std::size_t count = 1;
  for (auto a : axes) count *= x.dim(a);
  require(count > 0, ErrorKind::Shape, "mean over empty axes");
  return mul_scalar(sum(x, axes), 1.0 / static_cast<double>(count));
}

std::vector<std::size_t> argmin(const Tensor& x, std::size_t axis) {
  auto sp = split_at(x.shape(), axis, "argmin");
  require(sp.n > 0, ErrorKind::Shape, "argmin over empty axis");
  auto xd = x.data();
  std::vector<std::size_t> idx(sp.outer * sp.inner, 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      std::size_t base = o * sp.n * sp.inner + j, best = 0;
      for (std::size_t k = 1; k < sp.n; ++k)
        if (xd[base + k * sp.inner] < xd[base + best * sp.inner]) best = k;
      idx[o * sp.inner + j] = best;
    }
  return idx;
}

Tensor min(const Tensor& x, std::size_t axis) {
  auto sp = split_at(x.shape(), axis, "min");
  auto idx = std::make_shared<std::vector<std::size_t>>(argmin(x, axis));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto xd = x.data();
  std::vector<double> out(idx->size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j)
      out[o * sp.inner + j] = xd[(o * sp.n + (*idx)[o * sp.inner + j]) * sp.inner + j];
  return make_result(out_shape, std::move(out), {x}, [x, sp, idx](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    for (std::size_t a = 0; a < sp.outer; ++a)
      for (std::size_t j = 0; j < sp.inner; ++j)
        gx[(a * sp.n + (*idx)[a * sp.inner + j]) * sp.inner + j] += o.grad[a * sp.inner + j];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorKind::Shape,
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)), n = static_cast<int>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  if (m && n && k) gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0, out.data(), n);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [a, b, m, n, k](const TensorImpl& o) {
    if (!m || !n || !k) return;
    if (a.requires_grad()) {
      auto ga = grad_sink(*a.impl());
      gemm(false, true, m, k, n, 1.0, o.grad.data(), n, b.data().data(), n, 1.0, ga.data(), k);
    }
    if (b.requires_grad()) {
      auto gb = grad_sink(*b.impl());
      gemm(true, false, k, n, m, 1.0, a.data().data(), k, o.grad.data(), n, 1.0, gb.data(), n);
    }
  });
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, co, k, stride, pad, ho, wo;
  std::size_t patch() const { return c * k * k; }
  std::size_t cols() const { return n * ho * wo; }
};

void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::size_t ncol = g.cols(), p = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((ci * g.k + ky) * g.k + kx) * ncol;
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* img = x + (b * g.c + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            double* dst = row + b * p + oy * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill(dst, dst + g.wo, 0.0);
              continue;
            }
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : img[iy * g.w + ix];
            }
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* cols, double* gx) {
  const std::size_t ncol = g.cols(), p = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * ncol;
        for (std::size_t b = 0; b < g.n; ++b) {
          double* img = gx + (b * g.c + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const double* src = row + b * p + oy * g.wo;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) img[iy * g.w + ix] += src[ox];
            }
          }
        }
      }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& weight, const Tensor* bias, std::size_t stride, std::size_t pad) {
  require(x.rank() == 4 && weight.rank() == 4, ErrorKind::Shape,
          "conv2d: expected x [N,C,H,W] and weight [Co,Ci,K,K], got " + shape_str(x.shape()) + " and " +
              shape_str(weight.shape()));
  require(weight.dim(1) == x.dim(1) && weight.dim(2) == weight.dim(3), ErrorKind::Shape,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(stride >= 1, ErrorKind::Argument, "conv2d: stride must be >= 1");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, pad, 0, 0};
  require(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k, ErrorKind::Shape, "conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (bias) require(bias->rank() == 1 && bias->dim(0) == g.co, ErrorKind::Shape, "conv2d: bias must be [Cout]");

  // Per-sample im2col and gemm: each sample's [Co, Ho*Wo] product lands directly in NCHW order
  // and the patch matrix stays cache-sized. Scratch buffers are fully overwritten.
  ConvGeom g1 = g;
  g1.n = 1;
  const std::size_t p = g.ho * g.wo, patch = g.patch(), in_sz = g.c * g.h * g.w;
  std::shared_ptr<double[]> cols(new double[patch * p * g.n]);
  std::vector<double> out(g.n * g.co * p);
  for (std::size_t b = 0; b < g.n; ++b) {
    double* cb = cols.get() + b * patch * p;
    im2col(g1, x.data().data() + b * in_sz, cb);
    double* ob = out.data() + b * g.co * p;
    if (bias)
      for (std::size_t co = 0; co < g.co; ++co) std::fill(ob + co * p, ob + (co + 1) * p, bias->data()[co]);
    gemm(false, false, static_cast<int>(g.co), static_cast<int>(p), static_cast<int>(patch), 1.0,
         weight.data().data(), static_cast<int>(patch), cb, static_cast<int>(p), bias ? 1.0 : 0.0, ob,
         static_cast<int>(p));
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  Tensor bias_t = bias ? *bias : Tensor();
  bool has_bias = bias != nullptr;
  return make_result({g.n, g.co, g.ho, g.wo}, std::move(out), inputs,
                     [x, weight, bias_t, has_bias, g1, n = g.n, cols](const TensorImpl& o) {
                       const std::size_t p = g1.ho * g1.wo, patch = g1.patch(), in_sz = g1.c * g1.h * g1.w;
                       const int co = static_cast<int>(g1.co), ip = static_cast<int>(p), ipatch = static_cast<int>(patch);
                       auto gb = has_bias ? grad_sink(*bias_t.impl()) : std::span<double>{};
                       auto gw = grad_sink(*weight.impl());
                       auto gx = grad_sink(*x.impl());
                       std::unique_ptr<double[]> gcols(gx.empty() ? nullptr : new double[patch * p]);
                       for (std::size_t b = 0; b < n; ++b) {
                         const double* go = o.grad.data() + b * g1.co * p;
                         const double* cb = cols.get() + b * patch * p;
                         for (std::size_t c = 0; c < gb.size(); ++c) {
                           double s = 0;
                           for (std::size_t i = 0; i < p; ++i) s += go[c * p + i];
                           gb[c] += s;
                         }
                         if (!gw.empty())
                           gemm(false, true, co, ipatch, ip, 1.0, go, ip, cb, ip, 1.0, gw.data(), ipatch);
                         if (!gx.empty()) {
                           gemm(true, false, ipatch, ip, co, 1.0, weight.data().data(), ipatch, go, ip, 0.0,
                                gcols.get(), ip);
                           col2im(g1, gcols.get(), gx.data() + b * in_sz);
                         }
                       }
                     });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  return conv2d_impl(x, weight, &bias, stride, pad);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t pad) {
  return conv2d_impl(x, weight, nullptr, stride, pad);
}

Tensor upsample_nearest2x(const Tensor& x) {
  require(x.rank() == 4, ErrorKind::Shape, "upsample_nearest2x: expected [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto xd = x.data();
  std::vector<double> out(nc * 4 * h * w);
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) out[(i * 2 * h + y) * 2 * w + xx] = xd[(i * h + y / 2) * w + xx / 2];
  return make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x}, [x, nc, h, w](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) gx[(i * h + y / 2) * w + xx / 2] += o.grad[(i * 2 * h + y) * 2 * w + xx];
  });
}

Tensor bilinear_sample(const Tensor& image, const Tensor& flow) {
  const bool batched = image.rank() == 4;
  require(image.rank() == 3 || batched, ErrorKind::Shape,
          "bilinear_sample: image must be [C,H,W] or [N,C,H,W], got " + shape_str(image.shape()));
  require(flow.rank() == image.rank(), ErrorKind::Shape, "bilinear_sample: flow rank must match image rank");
  const std::size_t off = batched ? 1 : 0;
  const std::size_t n = batched ? image.dim(0) : 1, c = image.dim(off), h = image.dim(off + 1), w = image.dim(off + 2);
  require((!batched || flow.dim(0) == n) && flow.dim(off) == 2 && flow.dim(off + 1) == h && flow.dim(off + 2) == w,
          ErrorKind::Shape,
          "bilinear_sample: flow " + shape_str(flow.shape()) + " does not match image " + shape_str(image.shape()));

  struct Tap {
    std::size_t x0, x1, y0, y1;
    double ax, ay;
    bool in_x, in_y;
  };
  auto taps = std::make_shared<std::vector<Tap>>(n * h * w);
  auto fd = flow.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double sx = static_cast<double>(x) + fd[((b * 2 + 0) * h + y) * w + x];
        double sy = static_cast<double>(y) + fd[((b * 2 + 1) * h + y) * w + x];
        const double maxx = static_cast<double>(w - 1), maxy = static_cast<double>(h - 1);
        Tap t{};
        t.in_x = sx >= 0.0 && sx <= maxx;
        t.in_y = sy >= 0.0 && sy <= maxy;
        sx = std::clamp(sx, 0.0, maxx);
        sy = std::clamp(sy, 0.0, maxy);
        t.x0 = static_cast<std::size_t>(std::floor(sx));
        t.y0 = static_cast<std::size_t>(std::floor(sy));
        t.x1 = std::min(t.x0 + 1, w - 1);
        t.y1 = std::min(t.y0 + 1, h - 1);
        t.ax = sx - static_cast<double>(t.x0);
        t.ay = sy - static_cast<double>(t.y0);
        (*taps)[(b * h + y) * w + x] = t;
      }
  auto id = image.data();
  std::vector<double> out(n * c * h * w);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* img = id.data() + (b * c + ch) * h * w;
      double* dst = out.data() + (b * c + ch) * h * w;
      for (std::size_t i = 0; i < h * w; ++i) {
        const Tap& t = (*taps)[b * h * w + i];
        dst[i] = (1 - t.ax) * (1 - t.ay) * img[t.y0 * w + t.x0] + t.ax * (1 - t.ay) * img[t.y0 * w + t.x1] +
                 (1 - t.ax) * t.ay * img[t.y1 * w + t.x0] + t.ax * t.ay * img[t.y1 * w + t.x1];
      }
    }
  return make_result(image.shape(), std::move(out), {image, flow}, [image, flow, taps, n, c, h, w](const TensorImpl& o) {
    auto gi = grad_sink(*image.impl());
    auto gf = grad_sink(*flow.impl());
    auto id = image.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* img = id.data() + (b * c + ch) * h * w;
        const double* g = o.grad.data() + (b * c + ch) * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
          const Tap& t = (*taps)[b * h * w + i];
          if (!gi.empty()) {
            double* gimg = gi.data() + (b * c + ch) * h * w;
            gimg[t.y0 * w + t.x0] += g[i] * (1 - t.ax) * (1 - t.ay);
            gimg[t.y0 * w + t.x1] += g[i] * t.ax * (1 - t.ay);
            gimg[t.y1 * w + t.x0] += g[i] * (1 - t.ax) * t.ay;
            gimg[t.y1 * w + t.x1] += g[i] * t.ax * t.ay;
          }
          if (!gf.empty()) {
            double i00 = img[t.y0 * w + t.x0], i01 = img[t.y0 * w + t.x1];
            double i10 = img[t.y1 * w + t.x0], i11 = img[t.y1 * w + t.x1];
            if (t.in_x) gf[(b * 2 + 0) * h * w + i] += g[i] * ((1 - t.ay) * (i01 - i00) + t.ay * (i11 - i10));
            if (t.in_y) gf[(b * 2 + 1) * h * w + i] += g[i] * ((1 - t.ax) * (i10 - i00) + t.ax * (i11 - i01));
          }
        }
      }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::Shape, "concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), ErrorKind::Shape, "concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == s0.size(), ErrorKind::Shape, "concat: rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis)
        require(p.shape()[i] == s0[i], ErrorKind::Shape,
                "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    out_shape[axis] += p.shape()[axis];
  }
  auto sp = split_at(out_shape, axis, "concat");
  std::vector<double> out(numel_of(out_shape));
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::size_t len = p.shape()[axis] * sp.inner;
    auto pd = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pd.data() + o * len, len, out.data() + o * sp.n * sp.inner + at);
    at += len;
  }
  return make_result(out_shape, std::move(out), parts, [parts, sp, axis](const TensorImpl& o) {
    std::size_t at = 0;
    for (const auto& p : parts) {
      std::size_t len = p.shape()[axis] * sp.inner;
      auto gp = grad_sink(*p.impl());
      if (!gp.empty())
        for (std::size_t a = 0; a < sp.outer; ++a)
          for (std::size_t i = 0; i < len; ++i) gp[a * len + i] += o.grad[a * sp.n * sp.inner + at + i];
      at += len;
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel_of(shape) == x.numel(), ErrorKind::Shape,
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  auto sp = split_at(x.shape(), axis, "slice");
  require(start + length <= sp.n, ErrorKind::Shape, "slice: range out of bounds for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  auto xd = x.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xd.data() + (o * sp.n + start) * sp.inner, length * sp.inner, out.data() + o * length * sp.inner);
  return make_result(out_shape, std::move(out), {x}, [x, sp, start, length](const TensorImpl& o) {
    auto gx = grad_sink(*x.impl());
    for (std::size_t a = 0; a < sp.outer; ++a)
      for (std::size_t i = 0; i < length * sp.inner; ++i)
        gx[(a * sp.n + start) * sp.inner + i] += o.grad[a * length * sp.inner + i];
  });
}

Tensor detach(const Tensor& x) { return x.clone(false); }

}  // namespace tap::ad
