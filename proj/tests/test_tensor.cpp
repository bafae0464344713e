// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "grapher/grad_check.hpp"
#include "grapher/optim.hpp"
#include "grapher/rng.hpp"
#include "grapher/tensor.hpp"
#include "grapher/vocab.hpp"
#include "op_cases.hpp"

using namespace grapher;

using grapher::testing::random_param;

TEST_SUITE("vocab") {

TEST_CASE("one text 'a b a' gives six specials plus two tokens") {
  const Vocab v = build_vocab({Example{"a b a", {}}});
  CHECK(v.size() == 8);
  CHECK(v.id_of("a") == Vocab::kSpecialCount);  // more frequent first
  CHECK(v.id_of("b") == Vocab::kSpecialCount + 1);
}

TEST_CASE("vocabulary construction is deterministic") {
  const std::vector<Example> corpus = {Example{"x y z y", {}}, Example{"z q", {}}};
  CHECK(build_vocab(corpus) == build_vocab(corpus));
}

TEST_CASE("unknown tokens map to unk and are counted") {
  const Vocab v = build_vocab({Example{"Ada was born in London.", {}}});
  std::size_t oov = 0;
  const auto ids = v.encode("Grace was born in Paris near Ada", &oov);
  CHECK(oov == 3);
  CHECK(ids[0] == Vocab::kUnk);
  CHECK(ids[1] == v.id_of("was"));
}

TEST_CASE("encode then decode is the identity on in-vocabulary text") {
  const Vocab v = build_vocab({Example{"Ada was born in London.", {}}});
  CHECK(v.decode(v.encode("Ada was born in London.")) == "Ada was born in London.");
  CHECK(v.encode("").empty());
}

}  // TEST_SUITE

TEST_SUITE("tensor") {

TEST_CASE("softmax of equal logits is uniform") {
  for (std::size_t k : {1u, 3u, 17u}) {
    const Tensor s = softmax(Tensor::constant({1, k}, std::vector<double>(k, 0.25)));
    for (double p : s.data()) CHECK(p == doctest::Approx(1.0 / static_cast<double>(k)).epsilon(1e-15));
  }
}

TEST_CASE("identity matmul") {
  Rng rng(1);
  const Tensor x = random_param(3, 4, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const Tensor y = matmul(Tensor::constant({3, 3}, eye), x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("d(xy)/dx is y") {
  Tensor x = Tensor::parameter({1, 1}, {3.0});
  Tensor y = Tensor::parameter({1, 1}, {-2.5});
  backward(mul(x, y));
  CHECK(x.grad()[0] == -2.5);
  CHECK(y.grad()[0] == 3.0);
}

TEST_CASE("sum of softmax has zero gradient") {
  Rng rng(2);
  Tensor x = random_param(2, 5, rng, 3.0);
  backward(sum(softmax(x)));
  for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("gradients accumulate through shared inputs") {
  Tensor x = Tensor::parameter({1, 1}, {2.0});
  backward(add(mul(x, x), x));  // 2x + 1
  CHECK(x.grad()[0] == 5.0);
}

TEST_CASE("no tape under NoGradGuard") {
  Tensor x = Tensor::parameter({1, 1}, {2.0});
  NoGradGuard guard;
  const Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gru_cell matches central differences on 8-dim inputs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor h = random_param(2, 8, rng);
    Tensor x = random_param(2, 8, rng);
    GruWeights w{random_param(8, 24, rng, 0.5), random_param(8, 24, rng, 0.5), random_param(1, 24, rng, 0.1),
                 random_param(1, 24, rng, 0.1)};
    const Tensor probe = Tensor::constant({2, 8}, [&] {
      std::vector<double> v(16);
      for (double& p : v) p = 2.0 * uniform01(rng) - 1.0;
      return v;
    }());
    std::vector<Tensor> inputs = {h, x, w.input_weight, w.hidden_weight, w.input_bias, w.hidden_bias};
    GradCheckOptions opt;
    opt.rtol = 1e-6;
    const auto r = grad_check([&] { return sum(mul(gru_cell(h, x, w), probe)); }, inputs, opt);
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("every operator passes grad_check") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (auto& c : grapher::testing::operator_cases(seed)) {
      const auto r = grad_check(c.f, c.inputs);
      CHECK_MESSAGE(r.passed, c.name << " seed " << seed << ": " << r.summary());
    }
  }
}

TEST_CASE("causal mask hides the future") {
  const Tensor m = causal_mask(3);
  CHECK(m.at(0, 1) == kMaskedOut);
  CHECK(m.at(1, 0) == 0.0);
  CHECK(m.at(2, 2) == 0.0);
}

TEST_CASE("dropout is the identity at inference") {
  Rng rng(1);
  Tensor x = random_param(4, 4, rng);
  const Tensor y = dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("NaN values are reported as faults") {
  const Tensor x = Tensor::constant({1, 2}, {1.0, std::nan("")});
  CHECK(x.has_fault());
}

}  // TEST_SUITE

TEST_SUITE("optim") {

TEST_CASE("one step on w^2 decreases |w|") {
  Tensor w = Tensor::parameter({1, 1}, {1.0});
  AdamW opt({{"w", w}}, {0.1, 0.9, 0.999, 1e-8, 0.0});
  backward(mul(w, w));
  opt.step();
  CHECK(std::abs(w.item()) < 1.0);
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
  Tensor w = Tensor::parameter({1, 3}, {1.0, -2.0, 0.5});
  AdamW opt({{"w", w}}, {0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);
  CHECK(w.data()[2] == 0.5);
}

TEST_CASE("200 steps on a 2-d quadratic reach loss below 1e-4") {
  Tensor w = Tensor::parameter({1, 2}, {1.5, -0.8});
  const Tensor a = Tensor::constant({1, 2}, {1.0, 3.0});
  AdamW opt({{"w", w}}, {0.05, 0.9, 0.999, 1e-8, 0.0});
  double loss = 0.0;
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    const Tensor l = sum(mul(a, mul(w, w)));
    loss = l.item();
    backward(l);
    opt.step();
  }
  loss = sum(mul(a, mul(w, w))).item();
  CHECK(loss < 1e-4);
}

TEST_CASE("clip_grad_norm rescales to the bound") {
  Tensor w = Tensor::parameter({1, 2}, {0.0, 0.0});
  w.mutable_grad()[0] = 3.0;
  w.mutable_grad()[1] = 4.0;
  const double before = clip_grad_norm({{"w", w}}, 1.0);
  CHECK(before == doctest::Approx(5.0));
  CHECK(w.grad()[0] == doctest::Approx(0.6));
  CHECK(w.grad()[1] == doctest::Approx(0.8));
}

TEST_CASE("non-finite gradient raises NumericalFault") {
  Tensor w = Tensor::parameter({1, 1}, {1.0});
  AdamW opt({{"w", w}}, {});
  w.mutable_grad()[0] = std::nan("");
  CHECK_THROWS_AS(opt.step(), NumericalFault);
}

}  // TEST_SUITE

TEST_SUITE("grad_check") {

TEST_CASE("sum has an all-ones gradient") {
  Rng rng(3);
  const auto r = grad_check([](const Tensor& x) { return sum(x); }, random_param(3, 3, rng));
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("softmax cross-entropy on random logits") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::vector<int> targets = {1, 4};
    const auto r = grad_check([&](const Tensor& x) { return mean(neg(pick(log_softmax(x), targets))); },
                              random_param(2, 6, rng, 2.0), 1e-5, 1e-6);
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("a corrupted backward rule is flagged") {
  // square with a backward rule off by a factor of two
  auto bad_square = [](const Tensor& x) {
    std::vector<double> v(x.data().begin(), x.data().end());
    for (double& e : v) e *= e;
    const std::shared_ptr<detail::Node> in = x.node_ptr();
    return make_result(x.shape(), std::move(v), {x}, [in](detail::Node& self) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * in->value[i];
    });
  };
  Rng rng(4);
  const auto r = grad_check([&](const Tensor& x) { return sum(bad_square(x)); }, random_param(2, 2, rng));
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.4);
}

}  // TEST_SUITE
