// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "grapher/grad_check.hpp"
#include "grapher/model.hpp"
#include "grapher/optim.hpp"
#include "support.hpp"

using namespace grapher;
using grapher::testing::make_model;
using grapher::testing::tiny_config;
using grapher::testing::tiny_corpus;

namespace {

Tensor& param(GrapherModel& m, const std::string& name) {
  for (const auto& p : m.parameters()) {
    if (p.name == name) return const_cast<Tensor&>(p.tensor);
  }
  throw std::out_of_range("no parameter " + name);
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

/// Overfits `model` on `data` with per-example AdamW steps.
void overfit(GrapherModel& model, const std::vector<Example>& data, int steps, double lr) {
  AdamW opt(model.parameters(), {lr, 0.9, 0.999, 1e-8, 0.0});
  std::vector<PreparedExample> prepared;
  for (const auto& ex : data) prepared.push_back(model.prepare(ex));
  for (int s = 0; s < steps; ++s) {
    opt.zero_grad();
    Rng rng = derive_rng({static_cast<std::uint64_t>(s)});
    for (const auto& p : prepared) backward(scale(model.forward(p, rng, true).loss.total, 1.0 / prepared.size()));
    clip_grad_norm(opt.params(), 1.0);
    opt.step();
  }
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("encoder output has one row per input position") {
  const auto m = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  const auto ids = m.input_ids("Ada was born in London.");
  CHECK(ids.size() == 7);  // six tokens and </s>
  const Tensor h = m.encode(ids);
  CHECK(h.rows() == ids.size());
  CHECK(h.cols() == 8);
}

TEST_CASE("inputs are encoded independently of call order") {
  const auto m = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  const auto a = m.input_ids("Ada was born in London.");
  const auto b = m.input_ids("Acme Corp is based in Paris.");
  const Tensor a1 = m.encode(a), b1 = m.encode(b);
  const Tensor b2 = m.encode(b), a2 = m.encode(a);
  CHECK(same_values(a1, a2));
  CHECK(same_values(b1, b2));
}

TEST_CASE("identical weights give identical states") {
  const auto m1 = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  const auto m2 = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  const auto ids = m1.input_ids("Grace knows Ada.");
  CHECK(same_values(m1.encode(ids), m2.encode(ids)));
}

TEST_CASE("long inputs are truncated to max_input") {
  const auto m = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  std::string text;
  for (int i = 0; i < 40; ++i) text += "Ada ";
  bool truncated = false;
  const auto ids = m.input_ids(text, &truncated);
  CHECK(truncated);
  CHECK(ids.size() == 24);
  CHECK(ids.back() == Vocab::kEos);
}

}  // TEST_SUITE

TEST_SUITE("text_nodes") {

TEST_CASE("pooling a one-token span returns that token's state") {
  const Tensor states = Tensor::constant({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto f = GrapherModel::pool_spans(states, {{1, 2}, {2, 4}, {0, 1}}, {true, true, false});
  REQUIRE(f.slots() == 3);
  CHECK(f.matrix.at(0, 0) == 3.0);
  CHECK(f.matrix.at(0, 1) == 4.0);
  CHECK(f.matrix.at(1, 0) == (5.0 + 7.0) / 2.0);
  CHECK(f.matrix.at(1, 1) == (6.0 + 8.0) / 2.0);
  CHECK_FALSE(f.active[2]);
}

TEST_CASE("text-mode features always have N slots") {
  const auto corpus = tiny_corpus();
  const auto m = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), corpus);
  for (const auto& ex : corpus) {
    Rng rng(1);
    const auto out = m.forward(m.prepare(ex), rng, false);
    CHECK(out.features.slots() == 4);
    CHECK(out.features.width() == 8);
    for (std::size_t k = 0; k < 4; ++k) CHECK(out.features.active[k] == (k < ex.graph.nodes.size()));
  }
}

TEST_CASE("node target longer than N*S is a capacity error") {
  auto c = tiny_config(NodeMode::kText, EdgeMode::kClassify);
  c.node_tokens = 2;  // limit 8 tokens
  const Example ex{"x", triples_to_graph({{"Acme Corp", "employer", "Grace Brewster Hopper"}})};
  const auto m = make_model(c, {ex});
  CHECK_THROWS_AS(m.prepare(ex), CapacityError);
}

}  // TEST_SUITE

TEST_SUITE("query_nodes") {

TEST_CASE("query node shapes") {
  const auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), tiny_corpus());
  const auto [f, l] = m.generate_query_nodes(m.encode(m.input_ids("Ada was born in London.")));
  CHECK(f.slots() == 4);       // F is d x N, stored slot-major
  CHECK(f.width() == 8);
  CHECK(l.length() == 4);      // S
  CHECK(l.slots() == 4);       // N
  CHECK(l.vocab() == m.vocab().size());
}

TEST_CASE("empty text still yields shaped outputs") {
  const auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), tiny_corpus());
  const auto ids = m.input_ids("");
  CHECK(ids.size() == 1);
  const auto [f, l] = m.generate_query_nodes(m.encode(ids));
  CHECK(f.slots() == 4);
  CHECK(l.length() == 4);
}

TEST_CASE("queries attend to each other: perturbing query j moves every other slot") {
  auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), tiny_corpus());
  const Tensor enc = m.encode(m.input_ids("Grace knows Ada."));
  const auto before = m.generate_query_nodes(enc).first.matrix.detach();
  for (std::size_t j = 0; j < 4; ++j) {
    Tensor& q = param(m, "queries");
    const double saved = q.mutable_data()[j * 8];
    q.mutable_data()[j * 8] += 0.5;
    const auto after = m.generate_query_nodes(enc).first.matrix.detach();
    q.mutable_data()[j * 8] = saved;
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == j) continue;
      double diff = 0.0;
      for (std::size_t c = 0; c < 8; ++c) diff += std::abs(after.at(i, c) - before.at(i, c));
      CHECK_MESSAGE(diff > 1e-9, "slot " << i << " ignores query " << j);
    }
  }
}

TEST_CASE("cross-attention maps") {
  const auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), tiny_corpus());
  const std::string text = "Alan works for Acme Corp and lives in Paris.";
  const auto maps = m.dump_cross_attention(text);
  CHECK(maps.size() == 2);  // layers x heads
  for (const auto& map : maps) {
    CHECK(map.weights.rows() == 4);
    CHECK(map.weights.cols() == m.input_ids(text).size());
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < map.weights.cols(); ++c) s += map.weights.at(r, c);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  const auto text_model = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  CHECK_THROWS_AS(text_model.dump_cross_attention(text), std::logic_error);
}

}  // TEST_SUITE

TEST_SUITE("edges") {

TEST_CASE("pair features") {
  Rng rng(4);
  std::vector<double> v(5 * 3);
  for (double& x : v) x = uniform01(rng);
  v[4 * 3 + 0] = v[3 * 3 + 0];
  v[4 * 3 + 1] = v[3 * 3 + 1];
  v[4 * 3 + 2] = v[3 * 3 + 2];
  const NodeFeatures f{Tensor::constant({5, 3}, v), std::vector<bool>(5, true)};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (i == j) continue;
      const Tensor a = GrapherModel::pair_features(f, i, j);
      const Tensor b = GrapherModel::pair_features(f, j, i);
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(a.at(0, c) == -b.at(0, c));
        CHECK(a.at(0, c) == v[i * 3 + c] - v[j * 3 + c]);
      }
    }
  }
  const Tensor same = GrapherModel::pair_features(f, 3, 4);
  for (double x : same.data()) CHECK(x == 0.0);
  CHECK_THROWS_AS(GrapherModel::pair_features(f, 2, 2), std::invalid_argument);
  const Tensor stacked = GrapherModel::pair_matrix(f, {{0, 1}, {1, 0}, {2, 4}});
  CHECK(stacked.rows() == 3);
  CHECK(stacked.at(2, 1) == v[2 * 3 + 1] - v[4 * 3 + 1]);
}

TEST_CASE("edge head output shapes") {
  const Tensor pairs = Tensor::constant({3, 8}, std::vector<double>(24, 0.1));
  const auto gen = make_model(tiny_config(NodeMode::kText, EdgeMode::kGenerate), tiny_corpus());
  const auto steps = gen.edge_head_generate(pairs, nullptr);
  CHECK(steps.size() == 3);  // E
  for (const auto& s : steps) {
    CHECK(s.rows() == 3);
    CHECK(s.cols() == gen.vocab().size());
  }
  const auto cls = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify), tiny_corpus());
  const Tensor logits = cls.edge_head_classify(pairs, nullptr);
  CHECK(logits.rows() == 3);
  CHECK(logits.cols() == cls.edge_classes().size());
}

TEST_CASE("edge capacity and label length are enforced") {
  TripleSet many;
  for (int i = 0; i < 8; ++i) many.push_back({"hub", "r", "n" + std::to_string(i)});
  const Example too_many{"x", triples_to_graph(many)};
  auto c = tiny_config(NodeMode::kText, EdgeMode::kGenerate);
  c.max_nodes = 8;
  c.node_tokens = 2;
  const auto m = make_model(c, {too_many});
  CHECK_THROWS_AS(m.prepare(too_many), CapacityError);

  const Example long_label{"x", triples_to_graph({{"a", "was once born in", "b"}})};
  const auto g = make_model(tiny_config(NodeMode::kText, EdgeMode::kGenerate), {long_label});
  CHECK_THROWS_AS(g.prepare(long_label), CapacityError);  // 4 words + </s> > E = 3
}

TEST_CASE("class inventory is no_edge plus the sorted relations") {
  const auto classes = collect_edge_classes(tiny_corpus());
  CHECK(classes == std::vector<std::string>{"<no_edge>", "birth place", "employer", "headquarters", "home city", "knows"});
}

TEST_CASE("the synthetic corpus has one class per relation plus no_edge") {
  const auto spec = load_corpus_spec(std::string(GRAPHER_SOURCE_DIR) + "/data/synthetic.spec");
  const auto corpus = generate_corpus(spec, spec.seed);
  CHECK(collect_edge_classes(corpus.train).size() == spec.relations.size() + 1);
}

TEST_CASE("edge evaluations cover every ordered pair of active nodes") {
  const auto corpus = tiny_corpus();
  const auto m = make_model(tiny_config(NodeMode::kText, EdgeMode::kClassify, Imbalance::kNone), corpus);
  const Example three{"x", triples_to_graph({{"Ada", "knows", "Alan"}, {"Alan", "knows", "Grace"}})};
  Rng rng(1);
  const auto out = m.forward(m.prepare(three), rng, false);
  CHECK(out.edges.cells.size() == 6);
  CHECK(out.loss.edge_terms() == 6);
  for (const auto& ex : corpus) {
    const auto r = m.infer(ex.text);
    const std::size_t a = r.slots.active_nodes().size();
    CHECK(r.edge_evaluations == a * (a > 0 ? a - 1 : 0));
  }
}

TEST_CASE("zero or one active node gives no edge evaluations") {
  auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), tiny_corpus());
  Tensor& bias = param(m, "node_out.b");
  SUBCASE("no nodes") {
    bias.mutable_data()[Vocab::kNoNode] = 1e3;
    const auto r = m.infer("Ada was born in London.");
    CHECK(r.slots.active_nodes().empty());
    CHECK(r.edge_evaluations == 0);
    CHECK(r.graph.edges.empty());
  }
  SUBCASE("one node") {
    bias.mutable_data()[static_cast<std::size_t>(m.vocab().id_of("Ada"))] = 1e3;  // every slot says "Ada ..."
    const auto r = m.infer("Ada was born in London.");
    CHECK(r.slots.active_nodes().size() == 1);
    CHECK(r.edge_evaluations == 0);
    CHECK(r.graph.edges.empty());
  }
}

TEST_CASE("inference is deterministic and dropout-free") {
  const auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), tiny_corpus());
  const auto pairs = Tensor::constant({2, 8}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.2, 0.1, 0, 0, 0.3, 0.3, -1, 1});
  CHECK(same_values(m.edge_head_classify(pairs, nullptr), m.edge_head_classify(pairs, nullptr)));
  const auto a = m.infer("Grace knows Ada. Ada was born in Lima.");
  const auto b = m.infer("Grace knows Ada. Ada was born in Lima.");
  CHECK(a.graph == b.graph);
  Rng r1(1), r2(2);
  CHECK_FALSE(same_values(m.edge_head_classify(pairs, &r1), m.edge_head_classify(pairs, &r2)));
}

TEST_CASE("overfit models reproduce their training graphs") {
  const auto corpus = tiny_corpus();
  auto c = tiny_config(NodeMode::kText, EdgeMode::kGenerate, Imbalance::kNone);
  c.d = 16;
  c.ff = 32;
  c.edge_dropout = 0.0;
  c.max_input = 32;
  auto gen = make_model(c, corpus);
  overfit(gen, {corpus[0]}, 150, 1e-2);
  const auto r = gen.infer(corpus[0].text);
  CHECK(r.graph == corpus[0].graph);
  REQUIRE(r.graph.edges.size() == 1);
  CHECK(r.graph.edges[0].label == "birth place");

  SUBCASE("forcing no_edge everywhere keeps nodes and drops edges") {
    auto cc = c;
    cc.edge_mode = EdgeMode::kClassify;
    auto cls = make_model(cc, corpus);
    overfit(cls, {corpus[0]}, 150, 1e-2);
    REQUIRE(cls.infer(corpus[0].text).graph == corpus[0].graph);
    param(cls, "edge_mlp.3.b").mutable_data()[0] = 1e3;
    const auto g = cls.infer_graph(corpus[0].text);
    CHECK(g.nodes == corpus[0].graph.nodes);
    CHECK(g.edges.empty());
  }
}

}  // TEST_SUITE

TEST_SUITE("model_losses") {

TEST_CASE("sparse mode trains on real edges plus k sampled no_edge cells") {
  const Example three{"x", triples_to_graph({{"Ada", "knows", "Alan"}, {"Alan", "knows", "Grace"}})};
  auto c = tiny_config(NodeMode::kText, EdgeMode::kClassify, Imbalance::kNone);
  const auto full = make_model(c, {three});
  Rng rng(1);
  CHECK(full.forward(full.prepare(three), rng, true).loss.edge_terms() == 6);

  c.imbalance = Imbalance::kSparse;
  c.k_noedge = 1;
  const auto sparse = make_model(c, {three});
  const auto out = sparse.forward(sparse.prepare(three), rng, true);
  CHECK(out.loss.edge_terms() == 3);
  CHECK(out.loss.real_edge_terms == 2);
  CHECK(sparse.forward(sparse.prepare(three), rng, false).loss.edge_terms() == 6);  // evaluation uses every cell

  c.k_noedge = 0;
  const auto only_real = make_model(c, {three});
  CHECK(only_real.forward(only_real.prepare(three), rng, true).loss.edge_terms() == 2);
}

TEST_CASE("total loss is node plus edge loss") {
  const auto corpus = tiny_corpus();
  for (auto nodes : {NodeMode::kText, NodeMode::kQuery}) {
    for (auto edges : {EdgeMode::kGenerate, EdgeMode::kClassify}) {
      const auto m = make_model(tiny_config(nodes, edges), corpus);
      Rng rng(2);
      const auto l = m.forward(m.prepare(corpus[2]), rng, true).loss;
      CHECK(l.total.item() == l.node_loss.item() + l.edge_loss.item());
    }
  }
}

TEST_CASE("query-mode loss is invariant to the order of target nodes") {
  const auto corpus = tiny_corpus();
  const auto m = make_model(tiny_config(NodeMode::kQuery, EdgeMode::kClassify), corpus);
  const Example& ex = corpus[2];
  Rng rng(0);
  const double base = m.forward(m.prepare(ex), rng, false).loss.total.item();
  std::vector<std::size_t> order(ex.graph.nodes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  while (std::next_permutation(order.begin(), order.end())) {
    const Example permuted{ex.text, permute_nodes(ex.graph, order)};
    const double l = m.forward(m.prepare(permuted), rng, false).loss.total.item();
    CHECK(std::abs(l - base) < 1e-9);
  }
}

TEST_CASE("full-model gradients match finite differences on a two-example batch") {
  const auto corpus = tiny_corpus();
  for (auto nodes : {NodeMode::kText, NodeMode::kQuery}) {
    for (auto edges : {EdgeMode::kGenerate, EdgeMode::kClassify}) {
      auto m = make_model(tiny_config(nodes, edges), corpus);
      // Zero-initialised biases put ReLU inputs exactly on the kink once
      // dropout clears a row; check at a generic point instead.
      Rng jitter(17);
      for (const auto& p : m.parameters()) {
        for (double& x : const_cast<Tensor&>(p.tensor).mutable_data()) x += 0.1 * (2.0 * uniform01(jitter) - 1.0);
      }
      const auto a = m.prepare(corpus[1]);
      const auto b = m.prepare(corpus[2]);
      std::vector<Tensor> inputs;
      for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
      GradCheckOptions opt;
      opt.max_coords = 6;
      const auto report = grad_check(
          [&] {
            Rng rng(7);
            return scale(add(m.forward(a, rng, true).loss.total, m.forward(b, rng, true).loss.total), 0.5);
          },
          inputs, opt);
      CHECK_MESSAGE(report.passed, to_string(nodes) << "/" << to_string(edges) << ": " << report.summary());
    }
  }
}

}  // TEST_SUITE
