// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "grapher/checkpoint.hpp"
#include "grapher/trainer.hpp"
#include "support.hpp"

using namespace grapher;
using grapher::testing::tiny_config;
using grapher::testing::tiny_corpus;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("grapher_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainOptions small_options(const fs::path& out) {
  TrainOptions o;
  o.batch_size = 2;
  o.max_steps = 6;
  o.eval_every = 3;
  o.log_every = 0;
  o.seed = 5;
  o.out_dir = out;
  return o;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip preserves parameters, config and inference") {
  const auto corpus = tiny_corpus();
  const auto dir = scratch("roundtrip");
  auto c = tiny_config(NodeMode::kQuery, EdgeMode::kGenerate, Imbalance::kSparse);
  c.gamma = 1.5;
  c.k_noedge = 3;
  GrapherModel m(c, build_vocab(corpus), collect_edge_classes(corpus));
  save_checkpoint(dir / "m.ckpt", m);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  const GrapherModel& l = *loaded.model;
  CHECK_FALSE(loaded.has_optimizer);
  CHECK(l.config().node_mode == NodeMode::kQuery);
  CHECK(l.config().imbalance == Imbalance::kSparse);
  CHECK(l.config().gamma == 1.5);
  CHECK(l.config().k_noedge == 3);
  CHECK(l.vocab() == m.vocab());
  CHECK(l.edge_classes() == m.edge_classes());
  REQUIRE(l.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& a = m.parameters()[i].tensor;
    const auto& b = l.parameters()[i].tensor;
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));
  }
  for (const auto& ex : corpus) CHECK(l.infer_graph(ex.text) == m.infer_graph(ex.text));
  save_checkpoint(dir / "again.ckpt", l);
  CHECK(slurp(dir / "m.ckpt") == slurp(dir / "again.ckpt"));
}

TEST_CASE("corrupt checkpoints raise DataError") {
  const auto corpus = tiny_corpus();
  const auto dir = scratch("corrupt");
  GrapherModel m(tiny_config(NodeMode::kText, EdgeMode::kClassify), build_vocab(corpus), collect_edge_classes(corpus));
  save_checkpoint(dir / "m.ckpt", m);
  const std::string bytes = slurp(dir / "m.ckpt");

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  CHECK_THROWS_AS(load_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() - 8))), DataError);
  CHECK_THROWS_AS(load_checkpoint(write("long.ckpt", bytes + "xx")), DataError);
  CHECK_THROWS_AS(load_checkpoint(write("magic.ckpt", "GRPH9" + bytes.substr(5))), DataError);
  std::string renamed = bytes;
  renamed.replace(renamed.find("param embed "), 12, "param embex ");
  CHECK_THROWS_AS(load_checkpoint(write("renamed.ckpt", renamed)), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}

}  // TEST_SUITE

TEST_SUITE("trainer") {

TEST_CASE("run config keys reach the model and optimizer") {
  KeyValueConfig kv = KeyValueConfig::parse(
      "seed = 9\nlr = 0.003\ngamma = 1\nk_noedge = 7\nimbalance = sparse\nnode_mode = query\nbatch_size = 4\n");
  ModelConfig mc;
  TrainOptions opts;
  apply_run_config(kv, mc, opts);
  CHECK(mc.gamma == 1.0);
  CHECK(mc.k_noedge == 7);
  CHECK(mc.imbalance == Imbalance::kSparse);
  CHECK(mc.node_mode == NodeMode::kQuery);
  CHECK(mc.init_seed == 9);
  CHECK(opts.seed == 9);
  CHECK(opts.adam.lr == 0.003);
  CHECK(opts.batch_size == 4);
  CHECK_THROWS_AS(apply_run_config(KeyValueConfig::parse("gama = 2\n"), mc, opts), DataError);
  CHECK_THROWS_AS(apply_run_config(KeyValueConfig::parse("imbalance = lots\n"), mc, opts), DataError);
}

TEST_CASE("edge gamma follows the imbalance mode") {
  ModelConfig c;
  c.gamma = 2.0;
  c.imbalance = Imbalance::kFocal;
  CHECK(c.edge_gamma() == 2.0);
  c.imbalance = Imbalance::kSparse;
  CHECK(c.edge_gamma() == 0.0);
  c.imbalance = Imbalance::kNone;
  CHECK(c.edge_gamma() == 0.0);
}

TEST_CASE("a resumed run continues with identical losses") {
  const auto corpus = tiny_corpus();
  const auto cfg = tiny_config(NodeMode::kQuery, EdgeMode::kClassify, Imbalance::kSparse);

  const auto full_dir = scratch("resume_full");
  GrapherModel full(cfg, build_vocab(corpus), collect_edge_classes(corpus));
  std::vector<double> full_losses;
  Trainer t1(full, corpus, corpus, small_options(full_dir));
  t1.run([&](const StepReport& r) { full_losses.push_back(r.total); });

  const auto part_dir = scratch("resume_part");
  auto opts = small_options(part_dir);
  opts.max_steps = 3;
  {
    GrapherModel first(cfg, build_vocab(corpus), collect_edge_classes(corpus));
    Trainer t(first, corpus, corpus, opts);
    t.run();
  }
  auto ckpt = load_checkpoint(part_dir / "latest.ckpt");
  REQUIRE(ckpt.has_optimizer);
  CHECK(ckpt.state.step == 3);
  auto resumed_model = std::move(ckpt.model);
  opts.max_steps = 6;
  Trainer t2(*resumed_model, corpus, corpus, opts);
  t2.restore(ckpt);
  std::vector<double> resumed_losses;
  t2.run([&](const StepReport& r) { resumed_losses.push_back(r.total); });

  REQUIRE(full_losses.size() == 6);
  REQUIRE(resumed_losses.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(resumed_losses[i] == full_losses[3 + i]);
  CHECK(slurp(full_dir / "latest.ckpt") == slurp(part_dir / "latest.ckpt"));
}

TEST_CASE("best checkpoint tracks the dev score") {
  const auto corpus = tiny_corpus();
  const auto dir = scratch("best");
  GrapherModel m(tiny_config(NodeMode::kText, EdgeMode::kClassify), build_vocab(corpus), collect_edge_classes(corpus));
  Trainer t(m, corpus, corpus, small_options(dir));
  int evals = 0;
  t.run({}, [&](std::int64_t, const TripleScores&) { ++evals; });
  CHECK(evals == 2);
  CHECK(fs::exists(dir / "best.ckpt"));
  CHECK(fs::exists(dir / "latest.ckpt"));
  CHECK(t.state().best_step >= 3);
  CHECK(t.state().best_dev_f1 >= 0.0);
}

TEST_CASE("a non-finite loss stops training with NumericalFault") {
  const auto corpus = tiny_corpus();
  GrapherModel m(tiny_config(NodeMode::kText, EdgeMode::kClassify), build_vocab(corpus), collect_edge_classes(corpus));
  const_cast<Tensor&>(m.parameters()[0].tensor).mutable_data()[0] = std::nan("");
  auto opts = small_options({});
  opts.out_dir.clear();
  Trainer t(m, corpus, {}, opts);
  CHECK_THROWS_AS(t.step(), NumericalFault);
}

}  // TEST_SUITE
