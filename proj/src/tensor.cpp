// SPDX-License-Identifier: Apache-2.0

#include "grapher/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>

namespace grapher {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMajor>;
using ConstMapMat = Eigen::Map<const RowMajor>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw std::invalid_argument(std::string(op) + ": " + why + " for shape " + a.str());
}

ConstMapMat as_mat(const detail::Node& n) {
  return ConstMapMat(n.value.data(), static_cast<Eigen::Index>(n.shape.rows),
                     static_cast<Eigen::Index>(n.shape.cols));
}

MapMat grad_mat(detail::Node& n) {
  return MapMat(n.grad_buffer().data(), static_cast<Eigen::Index>(n.shape.rows),
                static_cast<Eigen::Index>(n.shape.cols));
}

ConstMapMat out_grad(const detail::Node& n) {
  return ConstMapMat(n.grad.data(), static_cast<Eigen::Index>(n.shape.rows),
                     static_cast<Eigen::Index>(n.shape.cols));
}

bool wants(const detail::Node& out, std::size_t i) { return out.inputs[i]->requires_grad; }

template <class F>
Tensor unary(const Tensor& a, F&& forward, std::function<void(detail::Node&)> back) {
  std::vector<double> v(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = forward(in[i]);
  return make_result(a.shape(), std::move(v), {a}, std::move(back));
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value.assign(shape.numel(), 0.0);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.numel()) {
    shape_error("constant", shape, "value count " + std::to_string(values.size()) + " mismatches");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return constant({1, 1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) shape_error("item", shape(), "expected a single element");
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_fault() const {
  auto bad = [](double x) { return !std::isfinite(x); };
  return std::any_of(node_->value.begin(), node_->value.end(), bad) ||
         std::any_of(node_->grad.begin(), node_->grad.end(), bad);
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->leaf = false;
      n->inputs.reserve(inputs.size());
      for (auto& t : inputs) n->inputs.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1) shape_error("backward", loss.shape(), "loss must be a scalar");
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversed it is a valid topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->leaf) n->grad.clear();
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  Shape s{a.rows(), b.cols()};
  std::vector<double> v(s.numel());
  MapMat(v.data(), s.rows, s.cols).noalias() = as_mat(*a.node()) * as_mat(*b.node());
  return make_result(s, std::move(v), {a, b}, [](detail::Node& out) {
    auto& A = *out.inputs[0];
    auto& B = *out.inputs[1];
    auto g = out_grad(out);
    if (A.requires_grad) grad_mat(A).noalias() += g * as_mat(B).transpose();
    if (B.requires_grad) grad_mat(B).noalias() += as_mat(A).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  Shape s{a.cols(), a.rows()};
  std::vector<double> v(s.numel());
  MapMat(v.data(), s.rows, s.cols) = as_mat(*a.node()).transpose();
  return make_result(s, std::move(v), {a}, [](detail::Node& out) {
    grad_mat(*out.inputs[0]) += out_grad(out).transpose();
  });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> v(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](detail::Node& out) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(out, k)) continue;
      auto& g = out.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> v(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](detail::Node& out) {
    if (wants(out, 0)) {
      auto& g = out.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (wants(out, 1)) {
      auto& g = out.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> v(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(v), {a, b}, [](detail::Node& out) {
    auto& A = *out.inputs[0];
    auto& B = *out.inputs[1];
    if (A.requires_grad) {
      auto& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * A.value[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.shape(), row.shape());
  std::vector<double> v(a.numel());
  auto x = a.data(), r = row.data();
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + r[i % c];
  return make_result(a.shape(), std::move(v), {a, row}, [c](detail::Node& out) {
    if (wants(out, 0)) {
      auto& g = out.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (wants(out, 1)) {
      auto& g = out.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i % c] += out.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = out.value[i];
      g[i] += out.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = out.value[i];
      g[i] += out.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (out.value[i] > 0.0) g[i] += out.grad[i];
    }
  });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * out.value[i];
  });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](detail::Node& out) {
    auto& in = *out.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] / in.value[i];
  });
}

Tensor pow(const Tensor& a, double p) {
  for (double x : a.data()) {
    if (x < 0.0) shape_error("pow", a.shape(), "negative base");
  }
  return unary(a, [p](double x) { return std::pow(x, p); }, [p](detail::Node& out) {
    auto& in = *out.inputs[0];
    auto& g = in.grad_buffer();
    if (p == 0.0) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in.value[i];
      // d/dx x^p at x == 0 is 0 for p > 1; p <= 1 is taken as its one-sided limit clipped to 0.
      if (x == 0.0) continue;
      g[i] += out.grad[i] * p * std::pow(x, p - 1.0);
    }
  });
}

// ---- row-wise normalisations ----------------------------------------------

Tensor softmax(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double* o = v.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  return make_result(a.shape(), std::move(v), {a}, [r, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = out.value.data() + i * c;
      const double* gy = out.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double* o = v.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) o[j] = row[j] - lz;
  }
  return make_result(a.shape(), std::move(v), {a}, [r, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = out.value.data() + i * c;
      const double* gy = out.grad.data() + i * c;
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += gy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c) shape_error("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != gain.shape()) shape_error("layer_norm", gain.shape(), bias.shape());
  std::vector<double> v(x.numel());
  auto normed = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  auto in = x.data(), gm = gain.data(), bt = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double nh = (row[j] - mu) * is;
      (*normed)[i * c + j] = nh;
      v[i * c + j] = nh * gm[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(v), {x, gain, bias},
                     [r, c, normed, inv_std](detail::Node& out) {
    auto& X = *out.inputs[0];
    auto& G = *out.inputs[1];
    auto& B = *out.inputs[2];
    if (G.requires_grad) {
      auto& gg = G.grad_buffer();
      for (std::size_t i = 0; i < r * c; ++i) gg[i % c] += out.grad[i] * (*normed)[i];
    }
    if (B.requires_grad) {
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < r * c; ++i) gb[i % c] += out.grad[i];
    }
    if (X.requires_grad) {
      auto& gx = X.grad_buffer();
      const double n = static_cast<double>(c);
      std::vector<double> dn(c);
      for (std::size_t i = 0; i < r; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          dn[j] = out.grad[i * c + j] * G.value[j];
          s1 += dn[j];
          s2 += dn[j] * (*normed)[i * c + j];
        }
        const double is = (*inv_std)[i];
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] += is * (dn[j] - s1 / n - (*normed)[i * c + j] * s2 / n);
        }
      }
    }
  });
}

// ---- indexing -------------------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const std::size_t c = table.cols();
  std::vector<double> v(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      shape_error("embedding", table.shape(), "id " + std::to_string(ids[i]) + " out of range");
    }
    std::copy_n(table.data().data() + ids[i] * c, c, v.data() + i * c);
  }
  std::vector<int> keep(ids.begin(), ids.end());
  return make_result({ids.size(), c}, std::move(v), {table}, [keep, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[keep[i] * c + j] += out.grad[i * c + j];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  const std::size_t c = a.cols();
  std::vector<double> v(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) {
      shape_error("gather_rows", a.shape(), "row " + std::to_string(idx[i]) + " out of range");
    }
    std::copy_n(a.data().data() + idx[i] * c, c, v.data() + i * c);
  }
  std::vector<std::size_t> keep(idx.begin(), idx.end());
  return make_result({idx.size(), c}, std::move(v), {a}, [keep, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[keep[i] * c + j] += out.grad[i * c + j];
    }
  });
}

Tensor pick(const Tensor& a, std::span<const int> idx) {
  if (idx.size() != a.rows()) {
    shape_error("pick", a.shape(), "index count " + std::to_string(idx.size()) + " mismatches");
  }
  const std::size_t c = a.cols();
  std::vector<double> v(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= c) {
      shape_error("pick", a.shape(), "column " + std::to_string(idx[i]) + " out of range");
    }
    v[i] = a.data()[i * c + idx[i]];
  }
  std::vector<int> keep(idx.begin(), idx.end());
  return make_result({idx.size(), 1}, std::move(v), {a}, [keep, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < keep.size(); ++i) g[i * c + keep[i]] += out.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0].shape(), p.shape());
    r += p.rows();
  }
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  return make_result({r, c}, std::move(v), {parts.begin(), parts.end()}, [](detail::Node& out) {
    std::size_t offset = 0;
    for (auto& in : out.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += out.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts[0].shape(), p.shape());
    c += p.cols();
  }
  std::vector<double> v(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(p.data().data() + i * pc, pc, v.data() + i * c + offset);
    }
    offset += pc;
  }
  return make_result({r, c}, std::move(v), {parts.begin(), parts.end()}, [r, c](detail::Node& out) {
    std::size_t off = 0;
    for (auto& in : out.inputs) {
      const std::size_t pc = in->shape.cols;
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += out.grad[i * c + off + j];
        }
      }
      off += pc;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) {
    shape_error("slice_rows", a.shape(),
                "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid");
  }
  const std::size_t c = a.cols();
  std::vector<double> v(a.data().begin() + begin * c, a.data().begin() + end * c);
  return make_result({end - begin, c}, std::move(v), {a}, [begin, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < out.grad.size(); ++i) g[begin * c + i] += out.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    shape_error("slice_cols", a.shape(),
                "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid");
  }
  const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
  std::vector<double> v(r * w);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(a.data().data() + i * c + begin, w, v.data() + i * w);
  return make_result({r, w}, std::move(v), {a}, [r, c, w, begin](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += out.grad[i * w + j];
    }
  });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1, 1}, {s}, {a}, [](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (double& x : g) x += out.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) shape_error("mean", a.shape(), "empty input");
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1, 1}, {s / n}, {a}, [n](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (double& x : g) x += out.grad[0] / n;
  });
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) shape_error("mean_rows", a.shape(), "no rows");
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) v[j] += a.data()[i * c + j];
  }
  for (double& x : v) x /= static_cast<double>(r);
  return make_result({1, c}, std::move(v), {a}, [r, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += out.grad[j] / static_cast<double>(r);
    }
  });
}

Tensor row_sum(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) v[i] += a.data()[i * c + j];
  }
  return make_result({r, 1}, std::move(v), {a}, [r, c](detail::Node& out) {
    auto& g = out.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += out.grad[i];
    }
  });
}

Tensor dropout(const Tensor& a, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) shape_error("dropout", a.shape(), "probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a.numel());
  for (double& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < p ? 0.0 : keep_scale;
  }
  return mul(a, Tensor::constant(a.shape(), std::move(mask)));
}

// ---- attention and recurrence ---------------------------------------------

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Tensor* mask) {
  if (q.cols() != k.cols()) shape_error("attention(q,k)", q.shape(), k.shape());
  if (k.rows() != v.rows()) shape_error("attention(k,v)", k.shape(), v.shape());
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (mask != nullptr) {
    if (mask->shape() != scores.shape()) shape_error("attention(mask)", scores.shape(), mask->shape());
    scores = add(scores, *mask);
  }
  Tensor w = softmax(scores);
  return {matmul(w, v), w};
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = kMaskedOut;
  }
  return Tensor::constant({n, n}, std::move(m));
}

Tensor gru_cell(const Tensor& state, const Tensor& input, const GruWeights& w) {
  const std::size_t h = state.cols();
  if (w.hidden_weight.rows() != h || w.hidden_weight.cols() != 3 * h) {
    shape_error("gru_cell(hidden_weight)", state.shape(), w.hidden_weight.shape());
  }
  if (w.input_weight.rows() != input.cols() || w.input_weight.cols() != 3 * h) {
    shape_error("gru_cell(input_weight)", input.shape(), w.input_weight.shape());
  }
  if (state.rows() != input.rows()) shape_error("gru_cell(batch)", state.shape(), input.shape());

  Tensor gx = add_row(matmul(input, w.input_weight), w.input_bias);
  Tensor gh = add_row(matmul(state, w.hidden_weight), w.hidden_bias);
  Tensor r = sigmoid(add(slice_cols(gx, 0, h), slice_cols(gh, 0, h)));
  Tensor z = sigmoid(add(slice_cols(gx, h, 2 * h), slice_cols(gh, h, 2 * h)));
  Tensor n = tanh(add(slice_cols(gx, 2 * h, 3 * h), mul(r, slice_cols(gh, 2 * h, 3 * h))));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return add(n, mul(z, sub(state, n)));
}

}  // namespace grapher
