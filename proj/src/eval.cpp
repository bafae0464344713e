// SPDX-License-Identifier: Apache-2.0

#include "grapher/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "grapher/matching.hpp"

namespace grapher {

namespace {

std::string canonical(std::string_view s) {
  std::string out = normalize_text(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::set<std::string> word_set(const std::string& s) {
  std::set<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.insert(w);
  return out;
}

constexpr std::array<std::array<int, 3>, 6> kRoleMaps = {{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
}};

}  // namespace

ElementMatch element_match(std::string_view candidate, std::string_view reference) {
  const std::string c = canonical(candidate);
  const std::string r = canonical(reference);
  if (c == r) return ElementMatch::kExact;
  const auto cw = word_set(c);
  for (const auto& w : word_set(r)) {
    if (cw.count(w)) return ElementMatch::kPartial;
  }
  return ElementMatch::kNone;
}

PairCounts compare_triples(const Triple& candidate, const Triple& reference) {
  const std::array<const std::string*, 3> c = {&candidate.subject, &candidate.predicate, &candidate.object};
  const std::array<const std::string*, 3> r = {&reference.subject, &reference.predicate, &reference.object};
  ElementMatch m[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = element_match(*c[i], *r[j]);
  }
  PairCounts out;
  for (int i = 0; i < 3; ++i) out.strict += m[i][i] == ElementMatch::kExact;
  for (const auto& role : kRoleMaps) {
    int exact = 0;
    int partial = 0;
    for (int i = 0; i < 3; ++i) {
      exact += m[i][role[i]] == ElementMatch::kExact;
      partial += m[i][role[i]] != ElementMatch::kNone;
    }
    out.exact = std::max(out.exact, exact);
    out.partial = std::max(out.partial, partial);
  }
  return out;
}

Alignment align_triples(const TripleSet& candidates, const TripleSet& references) {
  Alignment out;
  out.ref_of_candidate.assign(candidates.size(), std::nullopt);
  const std::size_t n = std::max(candidates.size(), references.size());
  if (candidates.empty() || references.empty()) return out;

  std::vector<std::vector<int>> exact(candidates.size(), std::vector<int>(references.size()));
  CostMatrix cost(n, n, 0.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t j = 0; j < references.size(); ++j) {
      exact[i][j] = compare_triples(candidates[i], references[j]).exact;
      cost(i, j) = -static_cast<double>(exact[i][j]);
    }
  }
  const PermutationMatrix p = hungarian(cost);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::size_t j = p.col_of_row[i];
    if (j < references.size()) {
      out.ref_of_candidate[i] = j;
      out.exact_total += exact[i][j];
    }
  }
  return out;
}

ScoreTally& ScoreTally::operator+=(const ScoreTally& o) {
  strict_tp += o.strict_tp;
  exact_tp += o.exact_tp;
  partial_tp += o.partial_tp;
  candidate_elements += o.candidate_elements;
  reference_elements += o.reference_elements;
  return *this;
}

ScoreTally tally(const TripleSet& candidates, const TripleSet& references) {
  ScoreTally t;
  t.candidate_elements = 3 * static_cast<std::int64_t>(candidates.size());
  t.reference_elements = 3 * static_cast<std::int64_t>(references.size());
  const Alignment a = align_triples(candidates, references);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!a.ref_of_candidate[i]) continue;
    const PairCounts c = compare_triples(candidates[i], references[*a.ref_of_candidate[i]]);
    t.strict_tp += c.strict;
    t.exact_tp += c.exact;
    t.partial_tp += c.partial;
  }
  return t;
}

namespace {

Prf prf(std::int64_t tp, std::int64_t cand, std::int64_t ref) {
  Prf p;
  p.precision = cand > 0 ? static_cast<double>(tp) / static_cast<double>(cand) : 0.0;
  p.recall = ref > 0 ? static_cast<double>(tp) / static_cast<double>(ref) : 0.0;
  const double s = p.precision + p.recall;
  p.f1 = s > 0.0 ? 2.0 * p.precision * p.recall / s : 0.0;
  return p;
}

}  // namespace

TripleScores scores_from(const ScoreTally& t) {
  TripleScores s;
  s.exact = prf(t.exact_tp, t.candidate_elements, t.reference_elements);
  s.partial = prf(t.partial_tp, t.candidate_elements, t.reference_elements);
  s.strict = prf(t.strict_tp, t.candidate_elements, t.reference_elements);
  return s;
}

TripleScores score(const TripleSet& candidates, const TripleSet& references) {
  return scores_from(tally(candidates, references));
}

TripleScores score(const std::vector<TripleSet>& candidates, const std::vector<TripleSet>& references) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("score: " + std::to_string(candidates.size()) + " candidate sets for " +
                                std::to_string(references.size()) + " references");
  }
  ScoreTally t;
  for (std::size_t i = 0; i < candidates.size(); ++i) t += tally(candidates[i], references[i]);
  return scores_from(t);
}

std::string format_report(const TripleScores& s, const ScoreTally& t) {
  std::string out = "Match\tF1\tPrecision\tRecall\n";
  char buf[160];
  const std::pair<const char*, const Prf*> rows[3] = {{"Exact", &s.exact}, {"Partial", &s.partial}, {"Strict", &s.strict}};
  for (const auto& [name, p] : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\t%.6f\n", name, p->f1, p->precision, p->recall);
    out += buf;
  }
  out += "\n";
  const std::pair<const char*, const Prf*> keyed[3] = {{"exact", &s.exact}, {"partial", &s.partial}, {"strict", &s.strict}};
  for (const auto& [name, p] : keyed) {
    std::snprintf(buf, sizeof buf, "%s_f1 = %.17g\n%s_precision = %.17g\n%s_recall = %.17g\n", name, p->f1, name,
                  p->precision, name, p->recall);
    out += buf;
  }
  out += "exact_tp = " + std::to_string(t.exact_tp) + "\n";
  out += "partial_tp = " + std::to_string(t.partial_tp) + "\n";
  out += "strict_tp = " + std::to_string(t.strict_tp) + "\n";
  out += "candidate_elements = " + std::to_string(t.candidate_elements) + "\n";
  out += "reference_elements = " + std::to_string(t.reference_elements) + "\n";
  return out;
}

}  // namespace grapher
