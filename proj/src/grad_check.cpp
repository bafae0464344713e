// SPDX-License-Identifier: Apache-2.0

#include "grapher/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace grapher {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " at input "
     << worst_input << "[" << worst_index << "] analytic=" << worst_analytic
     << " numeric=" << worst_numeric << " (" << checked << " coords)";
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& x : inputs) x.zero_grad();
  backward(f());

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& x : inputs) {
    analytic.emplace_back(x.grad().begin(), x.grad().end());
    x.zero_grad();
  }

  auto evaluate = [&] {
    NoGradGuard guard;
    return f().item();
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    const std::size_t n = data.size();
    const std::size_t stride =
        options.max_coords == 0 || n <= options.max_coords ? 1 : n / options.max_coords;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = data[i];
      data[i] = orig + options.eps;
      const double up = evaluate();
      data[i] = orig - options.eps;
      const double down = evaluate();
      data[i] = orig;

      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= options.rtol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps,
                           double rtol) {
  Tensor inputs[] = {x};
  GradCheckOptions options;
  options.eps = eps;
  options.rtol = rtol;
  return grad_check([&] { return f(x); }, inputs, options);
}

}  // namespace grapher
