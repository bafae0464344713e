// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>

#include "grapher/corpus.hpp"
#include "grapher/graph.hpp"

using namespace grapher;

TEST_SUITE("graph") {

TEST_CASE("normalize_text removes underscores and folds accents") {
  CHECK(normalize_text("Agra_Airport") == "Agra Airport");
  CHECK(normalize_text("São_Paulo") == "Sao Paulo");
  CHECK(normalize_text("plain text") == "plain text");
  CHECK(normalize_text(normalize_text("São_Paulo")) == "Sao Paulo");
}

TEST_CASE("normalize_text counts dropped characters") {
  std::size_t dropped = 0;
  CHECK(normalize_text("a\xe2\x98\x83" "b", &dropped) == "ab");  // U+2603 has no mapping
  CHECK(dropped == 1);
}

TEST_CASE("triples_to_graph orders nodes by first appearance") {
  const auto g = triples_to_graph({{"A", "likes", "B"}});
  CHECK(g.nodes == std::vector<std::string>{"A", "B"});
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0] == Edge{0, "likes", 1});
}

TEST_CASE("reciprocal triples keep both directions") {
  const auto g = triples_to_graph({{"A", "likes", "B"}, {"B", "likes", "A"}});
  CHECK(g.nodes.size() == 2);
  REQUIRE(g.edges.size() == 2);
  CHECK(g.edges[0] == Edge{0, "likes", 1});
  CHECK(g.edges[1] == Edge{1, "likes", 0});
}

TEST_CASE("three triples sharing a subject give four nodes") {
  const auto g = triples_to_graph({{"Agra Airport", "location", "Uttar Pradesh"},
                                   {"Agra Airport", "operator", "Indian Air Force"},
                                   {"Agra Airport", "elevation", "167.94"}});
  CHECK(g.nodes == std::vector<std::string>{"Agra Airport", "Uttar Pradesh", "Indian Air Force", "167.94"});
  CHECK(g.edges.size() == 3);
  CHECK(graph_to_triples(g).size() == 3);
}

TEST_CASE("triples_to_graph rejects self-loops and conflicting labels") {
  CHECK_THROWS_AS(triples_to_graph({{"A", "r", "A"}}), DataError);
  CHECK_THROWS_AS(triples_to_graph({{"A", "r", "B"}, {"A", "s", "B"}}), DataError);
  CHECK(triples_to_graph({{"A", "r", "B"}, {"A", "r", "B"}}).edges.size() == 1);
}

TEST_CASE("serialize_nodes pads to n_max") {
  KnowledgeGraph g{{"A", "B"}, {}};
  CHECK(serialize_nodes(g, 2) == "<pad> A <node_sep> B </s>");
  KnowledgeGraph one{{"A"}, {}};
  CHECK(serialize_nodes(one, 3) == "<pad> A <node_sep> <no_node> <node_sep> <no_node> </s>");
  CHECK_THROWS_AS(serialize_nodes(g, 1), CapacityError);
}

TEST_CASE("deserialize inverts serialize") {
  KnowledgeGraph g{{"Agra Airport", "India", "Uttar Pradesh"}, {}};
  const auto s = deserialize_nodes(serialize_nodes(g, 8), 8);
  CHECK(s.slots.size() == 8);
  CHECK(s.active_nodes() == g.nodes);
}

TEST_CASE("deserialize_nodes parses and tolerates malformed input") {
  CHECK(deserialize_nodes("<pad> A <node_sep> B </s>", 2).active_nodes() == std::vector<std::string>{"A", "B"});
  CHECK(deserialize_nodes("<pad> A <node_sep> B", 2).active_nodes() == std::vector<std::string>{"A", "B"});

  std::string ten = "<pad>";
  for (int i = 0; i < 10; ++i) ten += (i ? " <node_sep> n" : " n") + std::to_string(i);
  ten += " </s>";
  const auto s = deserialize_nodes(ten, 8);
  CHECK(s.slots.size() == 8);
  CHECK(s.active_nodes().size() == 8);
  CHECK(s.active_nodes().back() == "n7");
}

TEST_CASE("build_adjacency labels directed cells and masks the diagonal") {
  KnowledgeGraph g{{"A", "B"}, {{0, "rel", 1}}};
  const auto a = build_adjacency(g, 2);
  CHECK(a.label(0, 1) == "rel");
  CHECK(a.label(1, 0) == "<no_edge>");
  CHECK(a.masked(0, 1));
  CHECK(a.masked(1, 0));
  CHECK_FALSE(a.masked(0, 0));
  CHECK_FALSE(a.masked(1, 1));
}

TEST_CASE("empty edge set leaves only no_edge cells") {
  KnowledgeGraph g{{"A", "B", "C"}, {}};
  const auto a = build_adjacency(g, 8);
  for (const auto& [i, j] : a.masked_cells()) CHECK(a.label(i, j) == "<no_edge>");
  CHECK(a.edge_count() == 0);
}

TEST_CASE("three active nodes of eight give six cells") {
  KnowledgeGraph g{{"A", "B", "C"}, {{0, "r", 1}}};
  CHECK(build_adjacency(g, 8).masked_count() == 6);
}

TEST_CASE("sparsify_adjacency keeps real edges and k sampled no_edge cells") {
  KnowledgeGraph g{{"A", "B", "C", "D"}, {{0, "r", 1}, {2, "s", 3}}};
  const auto full = build_adjacency(g, 4);
  Rng rng(7);

  const auto none = sparsify_adjacency(full, 0, rng);
  CHECK(none.masked_count() == 2);
  for (const auto& [i, j] : none.masked_cells()) CHECK(none.is_edge(i, j));

  const auto all = sparsify_adjacency(full, 100, rng);
  CHECK(all.mask == full.mask);
}

TEST_CASE("sparsify: 3 real edges, 20 no_edge cells, k=5 gives 8 cells") {
  AdjacencyTargets a;
  a.n = 6;
  a.labels.assign(36, "<no_edge>");
  a.mask.assign(36, false);
  a.active.assign(6, true);
  std::size_t masked = 0;
  for (std::size_t i = 0; i < 6 && masked < 23; ++i) {
    for (std::size_t j = 0; j < 6 && masked < 23; ++j) {
      if (i == j) continue;
      a.mask[i * 6 + j] = true;
      ++masked;
    }
  }
  a.labels[0 * 6 + 1] = "r";
  a.labels[1 * 6 + 2] = "r";
  a.labels[2 * 6 + 3] = "s";
  REQUIRE(a.edge_count() == 3);
  REQUIRE(a.masked_no_edge_count() == 20);
  Rng rng(3);
  const auto s = sparsify_adjacency(a, 5, rng);
  CHECK(s.masked_count() == 8);
  CHECK(s.edge_count() == 3);
}

TEST_CASE("permute_nodes renames edges consistently") {
  KnowledgeGraph g{{"A", "B", "C"}, {{0, "r", 2}}};
  const auto p = permute_nodes(g, {2, 0, 1});
  CHECK(p.nodes == std::vector<std::string>{"C", "A", "B"});
  CHECK(p.edges[0] == Edge{1, "r", 0});
}

}  // TEST_SUITE

TEST_SUITE("corpus") {

const char* kSmallSpec = R"(
pool.person = Ada, Alan, Grace, Edsger, Barbara, Donald, Niklaus, Frances, John, Ken, Radia, Tony
pool.city = London, Paris, Lima, Oslo, Rome, Cairo, Quito, Seoul, Delhi, Perth, Accra, Hanoi
relation.birth_place = person -> city | {s} was born in {o}.
relation.home_city = person -> city | {s} lives in {o}.
relation.knows = person -> person | {s} knows {o}.
relation.mentor = person -> person | {s} mentors {o}.
relation.rival = person -> person | {s} competes with {o}.
relation.visited = person -> city | {s} visited {o}.
relation.studied_in = person -> city | {s} studied in {o}.
relation.works_in = person -> city | {s} works in {o}.
relation.died_in = person -> city | {s} died in {o}.
relation.twin_city = city -> city | {s} is twinned with {o}.
train = 30
dev = 5
test = 5
min_nodes = 2
max_nodes = 5
min_edges = 1
max_edges = 3
seed = 4
)";

TEST_CASE("fill_template and a one-triple graph") {
  CHECK(fill_template("{s} was born in {o}.", "Ada", "London") == "Ada was born in London.");
  const auto g = triples_to_graph({{"Ada", "birth place", "London"}});
  CHECK(g.nodes.size() == 2);
  CHECK(g.edges.size() == 1);
}

TEST_CASE("same seed gives byte-identical corpora") {
  const auto spec = parse_corpus_spec(kSmallSpec);
  const auto a = generate_corpus(spec, 4);
  const auto b = generate_corpus(spec, 4);
  std::string ja, jb;
  for (const auto& ex : a.train) ja += example_to_json(ex);
  for (const auto& ex : b.train) jb += example_to_json(ex);
  CHECK(ja == jb);
  const auto c = generate_corpus(spec, 5);
  std::string jc;
  for (const auto& ex : c.train) jc += example_to_json(ex);
  CHECK(ja != jc);
}

TEST_CASE("generated graphs respect the spec limits") {
  const auto spec = parse_corpus_spec(kSmallSpec);
  const auto c = generate_corpus(spec, 4);
  CHECK(c.train.size() == 30);
  CHECK(c.dev.size() == 5);
  CHECK(c.test.size() == 5);
  for (const auto& ex : c.train) {
    ex.graph.validate();
    CHECK(ex.graph.nodes.size() <= 5);
    CHECK(ex.graph.edges.size() >= 1);
    CHECK(ex.graph.edges.size() <= 3);
  }
}

TEST_CASE("oversized graph request is a capacity error") {
  auto spec = parse_corpus_spec(kSmallSpec);
  spec.max_nodes = 9;
  CHECK_THROWS_AS(spec.validate(), CapacityError);
}

TEST_CASE("JSONL round trip") {
  Example ex{"Ada was born in London.", triples_to_graph({{"Ada", "birth place", "London"}})};
  const auto back = example_from_json(example_to_json(ex));
  CHECK(back.text == ex.text);
  CHECK(back.graph == ex.graph);
  CHECK_THROWS_AS(example_from_json("{\"triples\": []}"), DataError);
  CHECK_THROWS_AS(example_from_json("not json"), DataError);
}

}  // TEST_SUITE
