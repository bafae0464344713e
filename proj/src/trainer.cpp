// SPDX-License-Identifier: Apache-2.0

#include "grapher/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace grapher {

void apply_run_config(const KeyValueConfig& kv, ModelConfig& model, TrainOptions& train) {
  static const std::set<std::string> model_keys = {
      "node_mode", "edge_mode", "imbalance", "d", "layers", "heads", "ff", "max_nodes", "node_tokens",
      "edge_tokens", "max_input", "edge_hidden", "edge_dropout", "gamma", "k_noedge", "init_seed"};
  KeyValueConfig model_kv;
  for (const auto& [key, value] : kv.entries()) {
    if (model_keys.count(key)) {
      model_kv.set(key, value);
    } else if (key == "lr") {
      train.adam.lr = kv.get_double(key);
    } else if (key == "beta1") {
      train.adam.beta1 = kv.get_double(key);
    } else if (key == "beta2") {
      train.adam.beta2 = kv.get_double(key);
    } else if (key == "eps") {
      train.adam.eps = kv.get_double(key);
    } else if (key == "weight_decay") {
      train.adam.weight_decay = kv.get_double(key);
    } else if (key == "batch_size") {
      train.batch_size = kv.get_size(key);
    } else if (key == "max_steps") {
      train.max_steps = kv.get_size(key);
    } else if (key == "eval_every") {
      train.eval_every = kv.get_size(key);
    } else if (key == "log_every") {
      train.log_every = kv.get_size(key);
    } else if (key == "clip_norm") {
      train.clip_norm = kv.get_double(key);
    } else if (key == "seed") {
      train.seed = kv.get_u64(key);
      if (!kv.has("init_seed")) model.init_seed = train.seed;
    } else {
      throw DataError("run config: unknown key '" + key + "'");
    }
  }
  model.load(model_kv);
}

TripleScores evaluate(const GrapherModel& model, const std::vector<Example>& data,
                      std::vector<KnowledgeGraph>* predictions) {
  ScoreTally t;
  for (const auto& ex : data) {
    KnowledgeGraph g = model.infer_graph(ex.text);
    t += tally(graph_to_triples(g), graph_to_triples(ex.graph));
    if (predictions) predictions->push_back(std::move(g));
  }
  return scores_from(t);
}

Trainer::Trainer(GrapherModel& model, const std::vector<Example>& train, std::vector<Example> dev,
                 TrainOptions options)
    : model_(model),
      dev_(std::move(dev)),
      options_(std::move(options)),
      optimizer_(model.parameters(), options_.adam) {
  if (train.empty()) throw DataError("training split is empty");
  if (options_.batch_size == 0) throw DataError("batch_size must be positive");
  train_.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    try {
      train_.push_back(model_.prepare(train[i]));
    } catch (const DataError& e) {
      throw DataError("training example " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!options_.out_dir.empty()) std::filesystem::create_directories(options_.out_dir);
}

void Trainer::restore(const LoadedCheckpoint& ckpt) {
  if (!ckpt.has_optimizer) throw DataError("checkpoint carries no optimizer state; cannot resume");
  if (ckpt.first_moments.size() != optimizer_.first_moments().size()) {
    throw DataError("checkpoint optimizer state does not match the model");
  }
  optimizer_.first_moments() = ckpt.first_moments;
  optimizer_.second_moments() = ckpt.second_moments;
  optimizer_.set_step_count(ckpt.optimizer_steps);
  state_ = ckpt.state;
}

const std::vector<std::size_t>& Trainer::epoch_order(std::int64_t epoch) {
  if (epoch != cached_epoch_) {
    order_.resize(train_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng = derive_rng({options_.seed, static_cast<std::uint64_t>(epoch), 0x0bu});
    shuffle(order_, rng);
    cached_epoch_ = epoch;
  }
  return order_;
}

StepReport Trainer::step() {
  const std::size_t b = options_.batch_size;
  const std::int64_t step = state_.step;
  const double scale_by = 1.0 / static_cast<double>(b);
  StepReport report;
  report.step = step + 1;

  optimizer_.zero_grad();
  for (std::size_t k = 0; k < b; ++k) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step) * b + k;
    const auto& order = epoch_order(static_cast<std::int64_t>(pos / train_.size()));
    const std::size_t idx = order[pos % train_.size()];
    Rng rng = derive_rng({options_.seed, static_cast<std::uint64_t>(step), k, 0x0du});
    const TrainingOutputs out = model_.forward(train_[idx], rng, true);
    const double total = out.loss.total.item();
    if (!std::isfinite(total)) {
      optimizer_.zero_grad();
      throw NumericalFault("non-finite loss at step " + std::to_string(step + 1) + " on training example " +
                           std::to_string(idx) + " (node " + std::to_string(out.loss.node_loss.item()) + ", edge " +
                           std::to_string(out.loss.edge_loss.item()) + ")");
    }
    backward(scale(out.loss.total, scale_by));
    report.node_loss += out.loss.node_loss.item() * scale_by;
    report.edge_loss += out.loss.edge_loss.item() * scale_by;
    report.total += total * scale_by;
    report.edge_terms += out.loss.edge_terms();
    report.real_edge_terms += out.loss.real_edge_terms;
  }
  if (options_.clip_norm > 0.0) clip_grad_norm(optimizer_.params(), options_.clip_norm);
  try {
    optimizer_.step();
  } catch (const NumericalFault&) {
    optimizer_.zero_grad();
    throw;
  }
  state_.step = step + 1;
  return report;
}

TripleScores Trainer::evaluate_and_checkpoint() {
  TripleScores s;
  if (!dev_.empty()) {
    s = evaluate(model_, dev_);
    if (s.exact.f1 > state_.best_dev_f1) {
      state_.best_dev_f1 = s.exact.f1;
      state_.best_step = state_.step;
      if (!options_.out_dir.empty()) save_checkpoint(options_.out_dir / "best.ckpt", model_, &optimizer_, &state_);
    }
  }
  if (!options_.out_dir.empty()) save_checkpoint(options_.out_dir / "latest.ckpt", model_, &optimizer_, &state_);
  return s;
}

void Trainer::run(const std::function<void(const StepReport&)>& on_step,
                  const std::function<void(std::int64_t, const TripleScores&)>& on_eval) {
  const auto max_steps = static_cast<std::int64_t>(options_.max_steps);
  while (state_.step < max_steps) {
    const StepReport r = step();
    if (on_step) on_step(r);
    if (options_.log_every && r.step % static_cast<std::int64_t>(options_.log_every) == 0) {
      spdlog::info("step {} node_loss {:.6f} edge_loss {:.6f} total {:.6f} edge_terms {}", r.step, r.node_loss,
                   r.edge_loss, r.total, r.edge_terms);
    }
    const bool at_interval = options_.eval_every && r.step % static_cast<std::int64_t>(options_.eval_every) == 0;
    if (at_interval || r.step == max_steps) {
      const TripleScores s = evaluate_and_checkpoint();
      if (!dev_.empty()) {
        spdlog::info("step {} dev exact_f1 {:.4f} partial_f1 {:.4f} strict_f1 {:.4f}", r.step, s.exact.f1,
                     s.partial.f1, s.strict.f1);
      }
      if (on_eval) on_eval(r.step, s);
    }
  }
}

}  // namespace grapher
