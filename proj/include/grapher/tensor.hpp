// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices over double with a define-by-run reverse-mode tape.
//
// Every tensor is rank 2 (scalars are 1x1, vectors are 1xn or nx1). Operators
// record a backward closure and their inputs when gradient recording is on and
// at least one input requires a gradient; the graph is owned through
// shared_ptr links and dies with the last Tensor handle that reaches it.

#ifndef GRAPHER_TENSOR_HPP
#define GRAPHER_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grapher {

/// NaN/Inf reached a value, gradient or loss.
class NumericalFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t numel() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  /// Leaf that accumulates gradients (model parameters, grad-check inputs).
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// True when any value or gradient entry is NaN or infinite.
  bool has_fault() const;

  /// Detached copy of the values (no tape link).
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
};

/// Builds an operator output; records the backward rule only when needed.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward);

/// Whether operators record tape links on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

// ---- operators ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (r x c) plus a 1 x c row broadcast over every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// Elementwise x^p for x >= 0.
Tensor pow(const Tensor& a, double p);

Tensor softmax(const Tensor& a);       // along the last axis (per row)
Tensor log_softmax(const Tensor& a);   // along the last axis (per row)
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Rows of `table` selected by `ids`.
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx);
/// One entry per row: out(r, 0) = a(r, idx[r]).
Tensor pick(const Tensor& a, std::span<const int> idx);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over the row axis: (r x c) -> (1 x c).
Tensor mean_rows(const Tensor& a);
/// Sum along each row: (r x c) -> (r x 1).
Tensor row_sum(const Tensor& a);

/// Inverted dropout; identity when `training` is false or p == 0.
Tensor dropout(const Tensor& a, double p, bool training, std::mt19937_64& rng);

struct AttentionResult {
  Tensor output;   // (Lq x dv)
  Tensor weights;  // (Lq x Lk), post-softmax
};

/// softmax(q k^T / sqrt(dk) + mask) v. `mask` is an optional additive
/// (Lq x Lk) constant; large negative entries exclude positions.
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Tensor* mask = nullptr);

/// Additive causal mask for self-attention over `n` positions.
Tensor causal_mask(std::size_t n);

inline constexpr double kMaskedOut = -1e9;

/// Weights of a single-layer GRU cell. Gate blocks are ordered reset, update, candidate.
struct GruWeights {
  Tensor input_weight;   // (in x 3h)
  Tensor hidden_weight;  // (h x 3h)
  Tensor input_bias;     // (1 x 3h)
  Tensor hidden_bias;    // (1 x 3h)
};

/// One GRU step over a batch of rows:
///   r = sigmoid(x Wir + bir + h Whr + bhr)
///   z = sigmoid(x Wiz + biz + h Whz + bhz)
///   n = tanh(x Win + bin + r * (h Whn + bhn))
///   h' = (1 - z) * n + z * h
Tensor gru_cell(const Tensor& state, const Tensor& input, const GruWeights& w);

}  // namespace grapher

#endif  // GRAPHER_TENSOR_HPP
