// SPDX-License-Identifier: Apache-2.0

#ifndef GRAPHER_GRAD_CHECK_HPP
#define GRAPHER_GRAD_CHECK_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "grapher/tensor.hpp"

namespace grapher {

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  std::string summary() const;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double rtol = 1e-5;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor). Keeps coordinates
  /// whose true gradient is ~0 from reporting pure round-off as failure.
  double floor = 1e-4;
  /// Check at most this many coordinates per input (0 = all), spread evenly.
  std::size_t max_coords = 0;
};

/// Compares the tape gradient of a scalar function against central differences
/// (f(x + eps) - f(x - eps)) / 2 eps, coordinate by coordinate. Each input must be
/// a gradient-accumulating leaf; its values are perturbed in place and restored.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           const GradCheckOptions& options = {});

/// Single-input convenience form.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double eps = 1e-5, double rtol = 1e-5);

}  // namespace grapher

#endif  // GRAPHER_GRAD_CHECK_HPP
