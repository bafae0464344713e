// SPDX-License-Identifier: Apache-2.0
//
// Triple-set scoring with Exact, Partial and Strict element matching.
//
// Candidate and reference triples are aligned one-to-one so that the summed
// Exact element score is maximal; the same alignment is then scored under all
// three modes. Precision and recall are micro-averaged over elements
// (three per triple); unpaired triples contribute three misses on their side.

#ifndef GRAPHER_EVAL_HPP
#define GRAPHER_EVAL_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grapher/graph.hpp"

namespace grapher {

enum class ElementMatch { kNone = 0, kPartial = 1, kExact = 2 };

/// Elements are compared after normalize_text and lowercasing: exact when the
/// strings are equal, partial when their whitespace-token sets intersect.
ElementMatch element_match(std::string_view candidate, std::string_view reference);

/// Element-level agreement of one candidate/reference triple pair.
struct PairCounts {
  int strict = 0;   // exact matches in the same role
  int exact = 0;    // exact matches under the best role mapping
  int partial = 0;  // at-least-partial matches under the best role mapping
};

PairCounts compare_triples(const Triple& candidate, const Triple& reference);

struct Alignment {
  /// reference index paired with each candidate, nullopt when unpaired.
  std::vector<std::optional<std::size_t>> ref_of_candidate;
  int exact_total = 0;
};

/// Maximises the summed PairCounts::exact by assignment over the padded
/// pairwise score matrix; ties resolve to the lexicographically smallest
/// candidate -> column mapping.
Alignment align_triples(const TripleSet& candidates, const TripleSet& references);

/// Integer tallies; sums over examples are order independent.
struct ScoreTally {
  std::int64_t strict_tp = 0;
  std::int64_t exact_tp = 0;
  std::int64_t partial_tp = 0;
  std::int64_t candidate_elements = 0;
  std::int64_t reference_elements = 0;

  ScoreTally& operator+=(const ScoreTally& o);
};

ScoreTally tally(const TripleSet& candidates, const TripleSet& references);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct TripleScores {
  Prf exact;
  Prf partial;
  Prf strict;
};

TripleScores scores_from(const ScoreTally& t);
TripleScores score(const TripleSet& candidates, const TripleSet& references);
/// Corpus-level micro average over paired examples.
TripleScores score(const std::vector<TripleSet>& candidates, const std::vector<TripleSet>& references);

/// Tab-separated rows Match/F1/Precision/Recall in the order Exact, Partial,
/// Strict, a blank line, then `key = value` lines for every number.
std::string format_report(const TripleScores& s, const ScoreTally& t);

}  // namespace grapher

#endif  // GRAPHER_EVAL_HPP
