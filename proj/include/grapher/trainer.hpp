// SPDX-License-Identifier: Apache-2.0

#ifndef GRAPHER_TRAINER_HPP
#define GRAPHER_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "grapher/checkpoint.hpp"
#include "grapher/corpus.hpp"
#include "grapher/eval.hpp"
#include "grapher/model.hpp"
#include "grapher/optim.hpp"

namespace grapher {

struct TrainOptions {
  AdamWOptions adam{2e-3, 0.9, 0.999, 1e-8, 1e-2};
  std::size_t batch_size = 20;
  std::size_t max_steps = 2000;
  std::size_t eval_every = 500;  // 0: evaluate once at the end
  std::size_t log_every = 100;
  double clip_norm = 1.0;        // 0: no clipping
  std::uint64_t seed = 1;
  std::filesystem::path out_dir; // empty: no checkpoints
};

struct StepReport {
  std::int64_t step = 0;
  double node_loss = 0.0;
  double edge_loss = 0.0;
  double total = 0.0;
  std::size_t edge_terms = 0;
  std::size_t real_edge_terms = 0;
};

/// Applies `key = value` settings to a model config and trainer options.
/// Model keys are those of ModelConfig::store; trainer keys are lr, beta1,
/// beta2, eps, weight_decay, batch_size, max_steps, eval_every, log_every,
/// clip_norm and seed. `seed` also seeds parameter initialisation unless
/// init_seed is given. Unknown keys raise DataError.
void apply_run_config(const KeyValueConfig& kv, ModelConfig& model, TrainOptions& train);

/// Greedy inference over `data` and corpus-level scores against its graphs.
TripleScores evaluate(const GrapherModel& model, const std::vector<Example>& data,
                      std::vector<KnowledgeGraph>* predictions = nullptr);

/// Mini-batch AdamW training. Batch order, dropout masks and sparse-edge
/// samples are all derived from (seed, step, example), so a run resumed from
/// a checkpoint continues exactly like an uninterrupted one.
class Trainer {
 public:
  Trainer(GrapherModel& model, const std::vector<Example>& train, std::vector<Example> dev, TrainOptions options);

  /// Restores optimizer moments and counters saved with the model.
  void restore(const LoadedCheckpoint& ckpt);

  /// One optimizer step over one mini-batch. Throws NumericalFault on a
  /// non-finite loss or gradient before any parameter changes.
  StepReport step();

  /// Steps until max_steps, evaluating on dev and writing best/latest
  /// checkpoints every eval_every steps.
  void run(const std::function<void(const StepReport&)>& on_step = {},
           const std::function<void(std::int64_t, const TripleScores&)>& on_eval = {});

  /// Evaluates dev, updates the best score and writes checkpoints.
  TripleScores evaluate_and_checkpoint();

  const TrainerState& state() const { return state_; }
  const AdamW& optimizer() const { return optimizer_; }
  const std::vector<PreparedExample>& prepared() const { return train_; }

 private:
  const std::vector<std::size_t>& epoch_order(std::int64_t epoch);

  GrapherModel& model_;
  std::vector<PreparedExample> train_;
  std::vector<Example> dev_;
  TrainOptions options_;
  AdamW optimizer_;
  TrainerState state_;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::size_t> order_;
};

}  // namespace grapher

#endif  // GRAPHER_TRAINER_HPP
