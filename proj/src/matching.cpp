// SPDX-License-Identifier: Apache-2.0

#include "grapher/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace grapher {

CostMatrix::CostMatrix(std::size_t r, std::size_t c, std::vector<double> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != r * c) throw std::invalid_argument("CostMatrix: value count mismatch");
}

PermutationMatrix PermutationMatrix::identity(std::size_t n) {
  PermutationMatrix p;
  p.col_of_row.resize(n);
  std::iota(p.col_of_row.begin(), p.col_of_row.end(), std::size_t{0});
  return p;
}

bool PermutationMatrix::valid() const {
  std::vector<bool> hit(size(), false);
  for (std::size_t c : col_of_row) {
    if (c >= size() || hit[c]) return false;
    hit[c] = true;
  }
  return true;
}

std::vector<std::size_t> PermutationMatrix::row_of_col() const {
  std::vector<std::size_t> out(size());
  for (std::size_t r = 0; r < size(); ++r) out[col_of_row[r]] = r;
  return out;
}

PermutationMatrix PermutationMatrix::inverse() const { return {row_of_col()}; }

std::vector<double> PermutationMatrix::dense() const {
  std::vector<double> m(size() * size(), 0.0);
  for (std::size_t r = 0; r < size(); ++r) m[r * size() + col_of_row[r]] = 1.0;
  return m;
}

double PermutationMatrix::total(const CostMatrix& cost) const {
  double t = 0.0;
  for (std::size_t r = 0; r < size(); ++r) t += cost(r, col_of_row[r]);
  return t;
}

namespace {

void check_square_finite(const CostMatrix& cost, const char* who) {
  if (cost.rows != cost.cols) {
    throw std::invalid_argument(std::string(who) + ": cost matrix is " + std::to_string(cost.rows) + "x" +
                                std::to_string(cost.cols) + ", expected square");
  }
  for (double c : cost.values) {
    if (!std::isfinite(c)) throw std::invalid_argument(std::string(who) + ": non-finite cost entry");
  }
}

double tie_tolerance(const CostMatrix& cost) {
  double m = 1.0;
  for (double c : cost.values) m = std::max(m, std::abs(c));
  return 1e-9 * m;
}

// Shortest augmenting path with potentials. Returns col_of_row.
std::vector<std::size_t> kuhn_munkres(const CostMatrix& a) {
  const std::size_t n = a.rows;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

double optimal_value(const CostMatrix& a) {
  if (a.rows == 0) return 0.0;
  const auto assign = kuhn_munkres(a);
  double t = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) t += a(r, assign[r]);
  return t;
}

CostMatrix minor(const CostMatrix& a, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  CostMatrix m(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) m(i, j) = a(rows[i], cols[j]);
  }
  return m;
}

}  // namespace

PermutationMatrix hungarian(const CostMatrix& cost) {
  check_square_finite(cost, "hungarian");
  const std::size_t n = cost.rows;
  const double best = optimal_value(cost);
  const double tol = tie_tolerance(cost);

  // Fix rows in order, each to the smallest column that still admits an
  // optimal completion of the remaining minor.
  PermutationMatrix out;
  out.col_of_row.resize(n);
  std::vector<std::size_t> free_cols(n);
  std::iota(free_cols.begin(), free_cols.end(), std::size_t{0});
  double fixed = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<std::size_t> rest_rows;
    for (std::size_t k = r + 1; k < n; ++k) rest_rows.push_back(k);
    bool placed = false;
    for (std::size_t idx = 0; idx < free_cols.size() && !placed; ++idx) {
      const std::size_t c = free_cols[idx];
      std::vector<std::size_t> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(idx));
      const double completion = fixed + cost(r, c) + optimal_value(minor(cost, rest_rows, rest_cols));
      if (completion <= best + tol) {
        out.col_of_row[r] = c;
        fixed += cost(r, c);
        free_cols = std::move(rest_cols);
        placed = true;
      }
    }
    if (!placed) throw std::logic_error("hungarian: no optimal completion found");
  }
  return out;
}

PermutationMatrix brute_force_match(const CostMatrix& cost) {
  check_square_finite(cost, "brute_force_match");
  if (cost.rows > 8) throw std::invalid_argument("brute_force_match: N > 8 is not enumerated");
  PermutationMatrix p = PermutationMatrix::identity(cost.rows);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, p.total(cost));
  } while (std::next_permutation(p.col_of_row.begin(), p.col_of_row.end()));

  const double tol = tie_tolerance(cost);
  p = PermutationMatrix::identity(cost.rows);
  do {
    if (p.total(cost) <= best + tol) return p;
  } while (std::next_permutation(p.col_of_row.begin(), p.col_of_row.end()));
  throw std::logic_error("brute_force_match: minimum not revisited");
}

CostMatrix matching_cost(const NodeLogits& logits, std::span<const std::vector<int>> targets, int eos_id) {
  const std::size_t n = logits.slots();
  const std::size_t steps = logits.length();
  const std::size_t v = logits.vocab();
  if (targets.size() != n) {
    throw std::invalid_argument("matching_cost: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(n) + " slots");
  }

  // log-softmax per (step, slot), on plain values.
  std::vector<double> logp(steps * n * v);
  for (std::size_t s = 0; s < steps; ++s) {
    auto data = logits.steps[s].data();
    for (std::size_t q = 0; q < n; ++q) {
      const double* row = data.data() + q * v;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v; ++k) {
        if (std::isnan(row[k])) throw NumericalFault("matching_cost: NaN in node logits");
        m = std::max(m, row[k]);
      }
      double z = 0.0;
      for (std::size_t k = 0; k < v; ++k) z += std::exp(row[k] - m);
      const double lz = m + std::log(z);
      for (std::size_t k = 0; k < v; ++k) logp[(s * n + q) * v + k] = row[k] - lz;
    }
  }

  CostMatrix cost(n, n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& tgt = targets[t];
    for (std::size_t q = 0; q < n; ++q) {
      double total = 0.0;
      std::size_t len = 0;
      for (std::size_t s = 0; s < steps; ++s) {
        const int id = s < tgt.size() ? tgt[s] : eos_id;
        total -= logp[(s * n + q) * v + static_cast<std::size_t>(id)];
        ++len;
        if (id == eos_id) break;
      }
      cost(q, t) = total / static_cast<double>(len);
    }
  }
  return cost;
}

std::pair<NodeLogits, NodeFeatures> apply_permutation(const NodeLogits& logits, const NodeFeatures& features,
                                                      const PermutationMatrix& p) {
  if (!p.valid() || p.size() != features.slots()) {
    throw std::invalid_argument("apply_permutation: permutation does not match slot count");
  }
  const std::vector<std::size_t> slot_of_target = p.row_of_col();
  NodeLogits l;
  l.steps.reserve(logits.length());
  for (const auto& step : logits.steps) l.steps.push_back(gather_rows(step, slot_of_target));
  NodeFeatures f;
  f.matrix = gather_rows(features.matrix, slot_of_target);
  f.active.resize(slot_of_target.size());
  for (std::size_t k = 0; k < slot_of_target.size(); ++k) f.active[k] = features.active[slot_of_target[k]];
  return {std::move(l), std::move(f)};
}

}  // namespace grapher
