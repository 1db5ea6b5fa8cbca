#include "autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "common/error.hpp"

namespace tap::ad {

namespace {
double eval_scalar(const ScalarFn& f, const Tensor& x) {
  NoGrad guard;
  Tensor y = f(x);
  require(y.numel() == 1, ErrorKind::Shape, "grad_check: function must be scalar-valued");
  return y.item();
}
}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double eps, double tol) {
  Tensor base = x.clone(false);
  double f0 = eval_scalar(f, base);
  double f1 = eval_scalar(f, base);
  if (std::memcmp(&f0, &f1, sizeof(double)) != 0)
    fail(ErrorKind::Argument, "grad_check: function is not deterministic");

  Tape::current().clear();
  Tensor leaf = x.clone(true);
  Tensor y = f(leaf);
  require(y.numel() == 1, ErrorKind::Shape, "grad_check: function must be scalar-valued");
  backward(y);
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  GradCheckReport report;
  Tensor probe = x.clone(false);
  auto pd = probe.mutable_data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + eps;
    double fp = eval_scalar(f, probe);
    pd[i] = orig - eps;
    double fm = eval_scalar(f, probe);
    pd[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-7});
    double rel = std::fabs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic = analytic[i];
      report.numeric = numeric;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace tap::ad
