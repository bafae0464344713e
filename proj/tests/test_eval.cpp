// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "grapher/eval.hpp"
#include "grapher/rng.hpp"

using namespace grapher;

namespace {

const TripleSet kRefs = {{"Agra Airport", "location", "Uttar Pradesh"},
                         {"Agra Airport", "operator", "Indian Air Force"},
                         {"Uttar Pradesh", "leader", "Ram Naik"}};

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("element matching") {
  CHECK(element_match("Agra Airport", "Agra Airport") == ElementMatch::kExact);
  CHECK(element_match("agra_airport", "Agra Airport") == ElementMatch::kExact);
  CHECK(element_match("Agra Airport", "Airport") == ElementMatch::kPartial);
  CHECK(element_match("India", "Thakur") == ElementMatch::kNone);
}

TEST_CASE("identical sets pair by identity") {
  const Alignment a = align_triples(kRefs, kRefs);
  for (std::size_t i = 0; i < kRefs.size(); ++i) CHECK(a.ref_of_candidate[i] == i);
  CHECK(a.exact_total == 9);
}

TEST_CASE("reversed candidates recover the bijection") {
  TripleSet rev(kRefs.rbegin(), kRefs.rend());
  const Alignment a = align_triples(rev, kRefs);
  for (std::size_t i = 0; i < rev.size(); ++i) CHECK(a.ref_of_candidate[i] == kRefs.size() - 1 - i);
}

TEST_CASE("3x3 alignment matches the best of six pairings") {
  Rng rng(5);
  const std::vector<std::string> words = {"a", "b", "c", "a b", "b c"};
  auto pick = [&] { return words[uniform_index(rng, words.size())]; };
  for (int trial = 0; trial < 100; ++trial) {
    TripleSet c(3), r(3);
    for (auto& t : c) t = {pick(), pick(), pick()};
    for (auto& t : r) t = {pick(), pick(), pick()};
    std::vector<std::size_t> perm = {0, 1, 2};
    int best = 0;
    do {
      int s = 0;
      for (std::size_t i = 0; i < 3; ++i) s += compare_triples(c[i], r[perm[i]]).exact;
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(align_triples(c, r).exact_total == best);
  }
}

TEST_CASE("perfect candidates score 1.0 under all nine measures") {
  const TripleScores s = score(kRefs, kRefs);
  for (const Prf* p : {&s.exact, &s.partial, &s.strict}) {
    CHECK(p->precision == 1.0);
    CHECK(p->recall == 1.0);
    CHECK(p->f1 == 1.0);
  }
}

TEST_CASE("swapped subject and object") {
  const TripleSet cand = {{"Uttar Pradesh", "location", "Agra Airport"}};
  const TripleSet ref = {{"Agra Airport", "location", "Uttar Pradesh"}};
  const PairCounts c = compare_triples(cand[0], ref[0]);
  CHECK(c.strict == 1);
  CHECK(c.exact == 3);
  const TripleScores s = score(cand, ref);
  CHECK(s.strict.f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.exact.f1 == 1.0);
}

TEST_CASE("empty candidate set scores zero") {
  const TripleScores s = score(TripleSet{}, kRefs);
  CHECK(s.exact.precision == 0.0);
  CHECK(s.exact.recall == 0.0);
  CHECK(s.exact.f1 == 0.0);
  const TripleScores both_empty = score(TripleSet{}, TripleSet{});
  CHECK(both_empty.exact.f1 == 0.0);
}

TEST_CASE("unpaired triples count as misses") {
  const TripleSet cand = {kRefs[0]};
  const ScoreTally t = tally(cand, kRefs);
  CHECK(t.exact_tp == 3);
  CHECK(t.candidate_elements == 3);
  CHECK(t.reference_elements == 9);
  const TripleScores s = scores_from(t);
  CHECK(s.exact.precision == 1.0);
  CHECK(s.exact.recall == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("corpus score is the micro average of tallies") {
  const std::vector<TripleSet> cands = {kRefs, TripleSet{{"x", "y", "z"}}};
  const std::vector<TripleSet> refs = {kRefs, TripleSet{{"x", "y", "w"}}};
  const TripleScores s = score(cands, refs);
  CHECK(s.exact.precision == doctest::Approx(11.0 / 12.0).epsilon(1e-15));
  CHECK_THROWS_AS(score(cands, std::vector<TripleSet>{kRefs}), std::invalid_argument);
}

TEST_CASE("report layout") {
  const ScoreTally t = tally(kRefs, kRefs);
  const std::string r = format_report(scores_from(t), t);
  CHECK(r.rfind("Match\tF1\tPrecision\tRecall\nExact\t1.000000\t1.000000\t1.000000\nPartial\t", 0) == 0);
  CHECK(r.find("\nStrict\t") < r.find("\n\n"));
  CHECK(r.find("exact_f1 = 1\n") != std::string::npos);
  CHECK(r.find("reference_elements = 9\n") != std::string::npos);
}

}  // TEST_SUITE
