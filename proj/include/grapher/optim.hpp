// SPDX-License-Identifier: Apache-2.0

#ifndef GRAPHER_OPTIM_HPP
#define GRAPHER_OPTIM_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "grapher/tensor.hpp"

namespace grapher {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Decoupled weight decay Adam. Moment buffers are keyed by position in the
/// parameter list handed to the constructor.
class AdamW {
 public:
  AdamW(std::vector<NamedParameter> params, AdamWOptions options);

  /// w <- w (1 - lr wd); w <- w - lr mhat / (sqrt(vhat) + eps). Zeroes grads afterwards.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  AdamWOptions& options() { return options_; }
  const std::vector<NamedParameter>& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<NamedParameter> params_;
  AdamWOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedParameter>& params, double max_norm);

}  // namespace grapher

#endif  // GRAPHER_OPTIM_HPP
