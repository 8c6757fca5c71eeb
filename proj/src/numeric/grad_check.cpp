#include "mf/numeric/grad_check.hpp"

#include <cmath>
#include <string>

#include "mf/common/error.hpp"

MF_NUMERIC_BEGIN

namespace {

double evaluate(const std::function<Tensor()>& fn, std::size_t coordinate) {
  NoGradGuard guard;
  const double v = fn().item();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite function value at coordinate " + std::to_string(coordinate));
  }
  return v;
}

}  // namespace

GradCheckReport grad_check_leaves(const std::function<Tensor()>& fn, std::vector<Tensor> leaves,
                                  GradCheckOptions options) {
  if (!(options.eps > 0)) throw ContractError("grad_check: eps must be positive");
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  const Tensor out = fn();
  if (out.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
  backward(out);

  GradCheckReport report;
  std::size_t flat = 0;
  for (auto& leaf : leaves) {
    auto values = leaf.values();
    const std::size_t n = values.size();
    const bool sampled = options.max_per_leaf > 0 && n > options.max_per_leaf;
    for (std::size_t k = 0; k < (sampled ? options.max_per_leaf : n); ++k) {
      const std::size_t i = !sampled ? k : options.max_per_leaf > 1 ? k * (n - 1) / (options.max_per_leaf - 1) : 0;
      const std::size_t coordinate = flat + i;
      const double analytic = leaf.has_grad() ? static_cast<double>(leaf.grad()[i]) : 0.0;
      if (!std::isfinite(analytic)) {
        throw NumericError("grad_check: non-finite analytic gradient at coordinate " + std::to_string(coordinate));
      }
      const Scalar original = values[i];
      values[i] = static_cast<Scalar>(original + options.eps);
      const double up = evaluate(fn, coordinate);
      values[i] = static_cast<Scalar>(original - options.eps);
      const double down = evaluate(fn, coordinate);
      values[i] = original;
      const double center = evaluate(fn, coordinate);
      // The realized step can differ from eps after rounding to Scalar.
      const double h_up = static_cast<double>(static_cast<Scalar>(original + options.eps)) - original;
      const double h_down = original - static_cast<double>(static_cast<Scalar>(original - options.eps));
      const double numeric = (up - down) / (h_up + h_down);
      const double right = (up - center) / h_up;
      const double left = (center - down) / h_down;
      const double denom = std::max(1.0, std::abs(numeric));
      if (std::abs(right - left) / denom > options.kink_threshold) {
        ++report.exempted;
        continue;
      }
      const double err = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_index = coordinate;
      }
    }
    flat += n;
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                           GradCheckOptions options) {
  Tensor x = point.detach();
  return grad_check_leaves([&] { return fn(x); }, {x}, options);
}

MF_NUMERIC_END
