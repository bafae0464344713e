// SPDX-License-Identifier: Apache-2.0
//
// grapher: corpus generation, training, inference, scoring and attention dumps.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical fault.
// GRAPHER_LOG sets the log level (trace, debug, info, warn, error, off).

#include <CLI11.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "grapher/checkpoint.hpp"
#include "grapher/config.hpp"
#include "grapher/corpus.hpp"
#include "grapher/eval.hpp"
#include "grapher/model.hpp"
#include "grapher/trainer.hpp"
#include "grapher/vocab.hpp"

namespace fs = std::filesystem;
using namespace grapher;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("grapher");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("GRAPHER_LOG")) spdlog::cfg::helpers::load_levels(env);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write on " + path.string());
}

// ---- gen-corpus -----------------------------------------------------------

struct GenCorpusArgs {
  std::string spec;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int gen_corpus(const GenCorpusArgs& a) {
  const CorpusSpec spec = load_corpus_spec(a.spec);
  const std::uint64_t seed = a.seed_given ? a.seed : spec.seed;
  const Corpus c = generate_corpus(spec, seed);
  fs::create_directories(a.out);
  save_dataset(fs::path(a.out) / "train.jsonl", c.train);
  save_dataset(fs::path(a.out) / "dev.jsonl", c.dev);
  save_dataset(fs::path(a.out) / "test.jsonl", c.test);
  spdlog::info("wrote {} train, {} dev, {} test examples to {} (seed {})", c.train.size(), c.dev.size(),
               c.test.size(), a.out, seed);
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  bool resume = false;
  std::vector<std::string> overrides;
};

int train(const TrainArgs& a) {
  KeyValueConfig kv;
  if (!a.config.empty()) kv = KeyValueConfig::load(a.config);
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(' ');
      const auto e = s.find_last_not_of(' ');
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  if (!kv.has("seed")) throw UsageError("a seed is mandatory: put 'seed = N' in the config or pass --set seed=N");

  ModelConfig mc;
  TrainOptions opts;
  apply_run_config(kv, mc, opts);
  opts.out_dir = a.out;

  const auto train_set = load_dataset(fs::path(a.data) / "train.jsonl");
  std::vector<Example> dev_set;
  if (fs::exists(fs::path(a.data) / "dev.jsonl")) dev_set = load_dataset(fs::path(a.data) / "dev.jsonl");

  const fs::path latest = fs::path(a.out) / "latest.ckpt";
  std::unique_ptr<GrapherModel> model;
  LoadedCheckpoint resumed;
  if (a.resume && fs::exists(latest)) {
    resumed = load_checkpoint(latest);
    model = std::move(resumed.model);
    spdlog::info("resuming from {} at step {}", latest.string(), resumed.state.step);
  } else {
    model = std::make_unique<GrapherModel>(mc, build_vocab(train_set), collect_edge_classes(train_set));
  }
  spdlog::info("model: nodes={} edges={} imbalance={} d={} layers={} vocab={} classes={} parameters={}",
               to_string(model->config().node_mode), to_string(model->config().edge_mode),
               to_string(model->config().imbalance), model->config().d, model->config().layers,
               model->config().vocab, model->config().classes, model->parameter_count());

  Trainer trainer(*model, train_set, dev_set, opts);
  if (resumed.has_optimizer) trainer.restore(resumed);
  trainer.run();
  spdlog::info("done at step {}; best dev exact F1 {:.4f} at step {}", trainer.state().step,
               trainer.state().best_dev_f1, trainer.state().best_step);
  return kExitOk;
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
  std::string ckpt;
  std::string in;
  std::string out;
};

int infer(const InferArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const auto inputs = load_dataset(a.in);
  std::string text;
  for (const auto& ex : inputs) {
    Example pred{ex.text, ck.model->infer_graph(ex.text)};
    text += example_to_json(pred);
    text += '\n';
  }
  write_file(a.out, text);
  spdlog::info("wrote {} graphs to {}", inputs.size(), a.out);
  return kExitOk;
}

// ---- score ----------------------------------------------------------------

struct ScoreArgs {
  std::string cand;
  std::string ref;
  std::string out;
};

int score_cmd(const ScoreArgs& a) {
  const auto cand = load_dataset(a.cand);
  const auto ref = load_dataset(a.ref);
  if (cand.size() != ref.size()) {
    throw DataError("candidate file has " + std::to_string(cand.size()) + " records, reference has " +
                    std::to_string(ref.size()));
  }
  ScoreTally t;
  for (std::size_t i = 0; i < cand.size(); ++i) t += tally(graph_to_triples(cand[i].graph), graph_to_triples(ref[i].graph));
  const std::string report = format_report(scores_from(t), t);
  if (a.out.empty()) {
    std::cout << report;
  } else {
    write_file(a.out, report);
  }
  return kExitOk;
}

// ---- inspect-attention ----------------------------------------------------

struct InspectArgs {
  std::string ckpt;
  std::string text;
  std::string out;
  int layer = -1;
  int head = 0;
};

int inspect_attention(const InspectArgs& a) {
  const LoadedCheckpoint ck = load_checkpoint(a.ckpt);
  const GrapherModel& m = *ck.model;
  if (m.config().node_mode != NodeMode::kQuery) {
    throw UsageError("inspect-attention needs a query-node checkpoint; this one uses text nodes");
  }
  const std::string text = normalize_text(a.text);
  const auto maps = m.dump_cross_attention(text);
  const std::size_t layer = a.layer < 0 ? m.config().layers - 1 : static_cast<std::size_t>(a.layer);
  const std::size_t head = static_cast<std::size_t>(a.head);
  if (layer >= m.config().layers || a.head < 0 || head >= m.config().heads) {
    throw UsageError("--layer/--head out of range");
  }
  const CrossAttentionMap* map = nullptr;
  for (const auto& c : maps) {
    if (c.layer == layer && c.head == head) map = &c;
  }
  const auto ids = m.input_ids(text);
  std::string tsv = "slot";
  for (int id : ids) {
    const std::string& tok = m.vocab().token_of(id);
    tsv += '\t';
    tsv += tok;
  }
  tsv += '\n';
  char buf[32];
  for (std::size_t q = 0; q < map->weights.rows(); ++q) {
    tsv += std::to_string(q);
    for (std::size_t c = 0; c < map->weights.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "\t%.6g", map->weights.at(q, c));
      tsv += buf;
    }
    tsv += '\n';
  }
  write_file(a.out, tsv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Two-stage text-to-knowledge-graph generation"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate train/dev/test JSONL from a corpus spec");
  gen_cmd->add_option("--spec", gen.spec, "Corpus spec file")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  auto* seed_opt = gen_cmd->add_option("--seed", gen.seed, "Seed (defaults to the spec's seed)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "Run config file (key = value)");
  train_cmd->add_option("--data", tr.data, "Directory with train.jsonl and dev.jsonl")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint directory (best.ckpt, latest.ckpt)")->required();
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/latest.ckpt when present");
  train_cmd->add_option("--set", tr.overrides, "Override a config key: --set key=value (repeatable)");

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Generate graphs for texts");
  infer_cmd->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
  infer_cmd->add_option("--in", inf.in, "JSONL with a \"text\" field per line")->required();
  infer_cmd->add_option("--out", inf.out, "Output JSONL")->required();

  ScoreArgs sc;
  auto* score_sub = app.add_subcommand("score", "Score candidate graphs against references");
  score_sub->add_option("--cand", sc.cand, "Candidate JSONL")->required();
  score_sub->add_option("--ref", sc.ref, "Reference JSONL")->required();
  score_sub->add_option("--out", sc.out, "Report file (stdout when omitted)");

  InspectArgs ins;
  auto* inspect_cmd = app.add_subcommand("inspect-attention", "Dump query cross-attention as TSV");
  inspect_cmd->add_option("--ckpt", ins.ckpt, "Query-node checkpoint")->required();
  inspect_cmd->add_option("--text", ins.text, "Input text")->required();
  inspect_cmd->add_option("--out", ins.out, "Output TSV")->required();
  inspect_cmd->add_option("--layer", ins.layer, "Decoder layer (default: last)");
  inspect_cmd->add_option("--head", ins.head, "Attention head");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) {
      gen.seed_given = seed_opt->count() > 0;
      return gen_corpus(gen);
    }
    if (*train_cmd) return train(tr);
    if (*infer_cmd) return infer(inf);
    if (*score_sub) return score_cmd(sc);
    if (*inspect_cmd) return inspect_attention(ins);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const NumericalFault& e) {
    spdlog::error("numerical fault: {}", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("file error: {}", e.what());
    return kExitData;
  }
  return kExitUsage;
}
