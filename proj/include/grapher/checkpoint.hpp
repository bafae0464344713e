// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file:
//
//   GRPH1\n
//   config <key> = <value>\n        model configuration
//   state <key> = <value>\n         trainer state (optional)
//   class <label>\n                 edge class inventory, in id order
//   token <token>\n                 ordinary vocabulary tokens, in id order
//   param <name> <rows> <cols>\n    one line per stored tensor
//   end\n
//   raw little-endian float64 values of every tensor, in manifest order
//
// Optimizer moments are stored as tensors named "adam.m.<param>" and
// "adam.v.<param>".

#ifndef GRAPHER_CHECKPOINT_HPP
#define GRAPHER_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "grapher/model.hpp"
#include "grapher/optim.hpp"

namespace grapher {

struct TrainerState {
  std::int64_t step = 0;
  double best_dev_f1 = -1.0;
  std::int64_t best_step = -1;
};

/// Writes to a sibling temporary file and renames it over `path`, so a
/// crash mid-write never leaves a truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const GrapherModel& model, const AdamW* optimizer = nullptr,
                     const TrainerState* state = nullptr);

struct LoadedCheckpoint {
  std::unique_ptr<GrapherModel> model;
  bool has_optimizer = false;
  std::vector<std::vector<double>> first_moments;   // parameter order
  std::vector<std::vector<double>> second_moments;  // parameter order
  std::int64_t optimizer_steps = 0;
  TrainerState state;
};

/// Throws DataError naming the manifest line or the byte count on a corrupt file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace grapher

#endif  // GRAPHER_CHECKPOINT_HPP
