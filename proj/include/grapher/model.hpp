// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder transformer with the two node stages (serialised text
// nodes, learnable query nodes) and the two edge heads (token generation,
// classification).

#ifndef GRAPHER_MODEL_HPP
#define GRAPHER_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "grapher/config.hpp"
#include "grapher/corpus.hpp"
#include "grapher/graph.hpp"
#include "grapher/losses.hpp"
#include "grapher/matching.hpp"
#include "grapher/node_tensors.hpp"
#include "grapher/optim.hpp"
#include "grapher/rng.hpp"
#include "grapher/tensor.hpp"
#include "grapher/vocab.hpp"

namespace grapher {

enum class NodeMode { kText, kQuery };
enum class EdgeMode { kGenerate, kClassify };
enum class Imbalance { kNone, kFocal, kSparse };

std::string to_string(NodeMode m);
std::string to_string(EdgeMode m);
std::string to_string(Imbalance m);
NodeMode parse_node_mode(std::string_view s);
EdgeMode parse_edge_mode(std::string_view s);
Imbalance parse_imbalance(std::string_view s);

struct ModelConfig {
  NodeMode node_mode = NodeMode::kText;
  EdgeMode edge_mode = EdgeMode::kClassify;
  Imbalance imbalance = Imbalance::kFocal;
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff = 128;
  std::size_t max_nodes = kMaxNodes;  // N
  std::size_t node_tokens = 4;        // S, words of one node plus </s>
  std::size_t edge_tokens = 4;        // E, words of one relation label plus </s>
  std::size_t max_input = 64;         // encoder positions including </s>
  std::size_t vocab = 0;              // V, set from the Vocab
  std::size_t classes = 0;            // C, set from the edge class inventory
  std::size_t edge_hidden = 256;
  double edge_dropout = 0.5;
  double gamma = 2.0;
  std::size_t k_noedge = 5;
  std::uint64_t init_seed = 1;

  /// Throws DataError when a field is out of range.
  void validate() const;
  /// Focal exponent the edge loss uses: gamma under focal imbalance, 0 otherwise.
  double edge_gamma() const { return imbalance == Imbalance::kFocal ? gamma : 0.0; }
  /// Longest serialised node target the text decoder emits.
  std::size_t text_target_limit() const { return max_nodes * node_tokens; }

  /// Writes every field as `key = value`.
  void store(KeyValueConfig& out) const;
  /// Overrides the fields whose keys are present in `in`.
  void load(const KeyValueConfig& in);
};

/// Class inventory: "<no_edge>" followed by the sorted distinct relation labels.
std::vector<std::string> collect_edge_classes(const std::vector<Example>& corpus);

/// An example converted to ids and targets for one model.
struct PreparedExample {
  std::vector<int> input_ids;  // text tokens then </s>
  KnowledgeGraph graph;
  std::vector<int> text_target;                               // text mode
  std::vector<std::pair<std::size_t, std::size_t>> spans;     // text mode, [begin, end) per slot
  std::vector<std::vector<int>> node_targets;                 // query mode, N rows of S ids
  std::vector<std::vector<int>> edge_sequences;               // per graph edge, E ids
  std::vector<int> edge_classes;                              // per graph edge
};

struct TrainingOutputs {
  NodeFeatures features;         // target-aligned
  NodeLogits node_logits;        // query mode, target-aligned
  Tensor text_logits;            // text mode, (T x V)
  PermutationMatrix assignment;  // query mode
  AdjacencyTargets adjacency;
  EdgePredictions edges;
  EdgeTargets edge_targets;
  LossBreakdown loss;
};

struct InferenceResult {
  KnowledgeGraph graph;
  SlotNodes slots;
  std::vector<std::string> decoded_tokens;  // text mode: the raw greedy output
  std::size_t edge_evaluations = 0;
};

struct CrossAttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  Tensor weights;  // (N x input length)
};

class GrapherModel {
 public:
  /// Parameters are drawn from `config.init_seed`. `config.vocab` and
  /// `config.classes` are taken from the arguments.
  GrapherModel(ModelConfig config, Vocab vocab, std::vector<std::string> edge_classes);

  GrapherModel(const GrapherModel&) = delete;
  GrapherModel& operator=(const GrapherModel&) = delete;
  GrapherModel(GrapherModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const std::vector<std::string>& edge_classes() const { return classes_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Throws DataError/CapacityError when the graph does not fit N, S or E,
  /// or uses a relation outside the class inventory (classify mode).
  PreparedExample prepare(const Example& ex) const;
  /// Text ids followed by </s>, truncated to max_input positions.
  std::vector<int> input_ids(std::string_view text, bool* truncated = nullptr) const;

  /// (len x d) encoder states.
  Tensor encode(std::span<const int> ids) const;

  /// Teacher-forced text decoder over `target`: last-layer states (T x d).
  Tensor decode_text(const Tensor& encoder_states, std::span<const int> target) const;
  Tensor text_logits(const Tensor& decoder_states) const;
  /// Mean of the decoder states over each slot's span.
  static NodeFeatures pool_spans(const Tensor& decoder_states,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                                 std::vector<bool> active);

  /// One unmasked decoder pass over the N queries, then the self-feeding GRU
  /// node head for S steps. `capture` receives the cross-attention weights.
  std::pair<NodeFeatures, NodeLogits> generate_query_nodes(const Tensor& encoder_states,
                                                           std::vector<CrossAttentionMap>* capture = nullptr) const;

  /// F(i) - F(j) as a (1 x d) row. Throws std::invalid_argument when i == j.
  static Tensor pair_features(const NodeFeatures& f, std::size_t i, std::size_t j);
  /// Stacked pair features for `cells`: (M x d).
  static Tensor pair_matrix(const NodeFeatures& f, const std::vector<std::pair<std::size_t, std::size_t>>& cells);

  /// GRU edge decoder, E steps of (M x V). With `teacher` each step is fed the
  /// previous target token, otherwise its own argmax.
  std::vector<Tensor> edge_head_generate(const Tensor& pairs, const std::vector<std::vector<int>>* teacher) const;
  /// Four-layer MLP, (M x C). Dropout only when `rng` is given.
  Tensor edge_head_classify(const Tensor& pairs, Rng* rng) const;

  /// Full training forward pass and loss. `training` enables dropout and
  /// sparse sampling, both drawn from `rng`.
  TrainingOutputs forward(const PreparedExample& ex, Rng& rng, bool training) const;

  InferenceResult infer(std::string_view text) const;
  KnowledgeGraph infer_graph(std::string_view text) const { return infer(text).graph; }

  /// Post-softmax cross-attention of the query decoder, one map per layer and
  /// head. Throws std::logic_error in text mode.
  std::vector<CrossAttentionMap> dump_cross_attention(std::string_view text) const;

 private:
  struct Linear {
    Tensor w;
    Tensor b;
  };
  struct Norm {
    Tensor gain;
    Tensor bias;
  };
  struct Attention {
    Tensor wq, wk, wv, wo;
  };
  struct EncoderLayer {
    Norm ln_self, ln_ff;
    Attention self;
    Linear ff_in, ff_out;
  };
  struct DecoderLayer {
    Norm ln_self, ln_cross, ln_ff;
    Attention self, cross;
    Linear ff_in, ff_out;
  };
  struct LayerCache {
    Tensor k, v;              // self-attention keys/values so far
    Tensor cross_k, cross_v;  // projected encoder states
  };

  Tensor& add_param(const std::string& name, std::size_t rows, std::size_t cols, double fill);
  Tensor& add_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
  Linear add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Norm add_norm(const std::string& name, std::size_t width);
  Attention add_attention(const std::string& name, Rng& rng);
  GruWeights add_gru(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);

  static Tensor apply(const Linear& l, const Tensor& x);
  static Tensor apply(const Norm& n, const Tensor& x);
  Tensor attend(const Attention& a, const Tensor& q_in, const Tensor& k, const Tensor& v, const Tensor* mask,
                std::vector<Tensor>* weights) const;
  Tensor feed_forward(const Linear& in, const Linear& out, const Tensor& x) const;
  Tensor positions(std::size_t begin, std::size_t count) const;
  Tensor decoder_stack(Tensor x, const Tensor& encoder_states, const Tensor* self_mask,
                       std::vector<CrossAttentionMap>* capture) const;
  Tensor decoder_step(int token, std::size_t position, std::vector<LayerCache>& cache) const;
  std::vector<Tensor> gru_decode(const GruWeights& gru, const Linear& out, Tensor state, std::size_t steps,
                                 const std::vector<std::vector<int>>* teacher) const;

  InferenceResult infer_text_nodes(const Tensor& encoder_states, NodeFeatures& features) const;
  InferenceResult infer_query_nodes(const Tensor& encoder_states, NodeFeatures& features) const;

  ModelConfig config_;
  Vocab vocab_;
  std::vector<std::string> classes_;
  std::vector<NamedParameter> params_;
  std::vector<double> sinusoid_;  // (positions x d)
  std::size_t sinusoid_rows_ = 0;

  Tensor embed_;
  std::vector<EncoderLayer> encoder_;
  Norm encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  Norm decoder_norm_;
  Linear text_out_;    // text mode
  Tensor queries_;     // query mode, (N x d)
  GruWeights node_gru_;
  Linear node_out_;
  GruWeights edge_gru_;  // generate mode
  Linear edge_out_;
  std::vector<Linear> edge_mlp_;  // classify mode
};

}  // namespace grapher

#endif  // GRAPHER_MODEL_HPP
