// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit and acceptance tests.

#ifndef GRAPHER_TESTS_SUPPORT_HPP
#define GRAPHER_TESTS_SUPPORT_HPP

#include <string>
#include <vector>

#include "grapher/corpus.hpp"
#include "grapher/model.hpp"

namespace grapher::testing {

inline std::vector<Example> tiny_corpus() {
  return {
      {"Ada was born in London.", triples_to_graph({{"Ada", "birth place", "London"}})},
      {"Alan works for Acme Corp and lives in Paris.",
       triples_to_graph({{"Alan", "employer", "Acme Corp"}, {"Alan", "home city", "Paris"}})},
      {"Grace knows Ada. Ada was born in Lima. Grace lives in Oslo.",
       triples_to_graph({{"Grace", "knows", "Ada"}, {"Ada", "birth place", "Lima"}, {"Grace", "home city", "Oslo"}})},
      {"Acme Corp is based in Paris.", triples_to_graph({{"Acme Corp", "headquarters", "Paris"}})},
  };
}

/// A model small enough for exhaustive finite differences.
inline ModelConfig tiny_config(NodeMode nodes, EdgeMode edges, Imbalance imbalance = Imbalance::kFocal) {
  ModelConfig c;
  c.node_mode = nodes;
  c.edge_mode = edges;
  c.imbalance = imbalance;
  c.d = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff = 12;
  c.max_nodes = 4;
  c.node_tokens = 4;
  c.edge_tokens = 3;
  c.max_input = 24;
  c.edge_hidden = 8;
  c.k_noedge = 1;
  c.init_seed = 3;
  return c;
}

inline GrapherModel make_model(const ModelConfig& c, const std::vector<Example>& corpus) {
  return GrapherModel(c, build_vocab(corpus), collect_edge_classes(corpus));
}

}  // namespace grapher::testing

#endif  // GRAPHER_TESTS_SUPPORT_HPP
