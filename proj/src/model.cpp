// SPDX-License-Identifier: Apache-2.0

#include "grapher/model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

namespace grapher {

// ---- enums and config -----------------------------------------------------

std::string to_string(NodeMode m) { return m == NodeMode::kText ? "text" : "query"; }
std::string to_string(EdgeMode m) { return m == EdgeMode::kGenerate ? "generate" : "classify"; }
std::string to_string(Imbalance m) {
  switch (m) {
    case Imbalance::kNone: return "none";
    case Imbalance::kFocal: return "focal";
    case Imbalance::kSparse: return "sparse";
  }
  return "none";
}

NodeMode parse_node_mode(std::string_view s) {
  if (s == "text") return NodeMode::kText;
  if (s == "query") return NodeMode::kQuery;
  throw DataError("node_mode must be text or query, got '" + std::string(s) + "'");
}

EdgeMode parse_edge_mode(std::string_view s) {
  if (s == "generate") return EdgeMode::kGenerate;
  if (s == "classify") return EdgeMode::kClassify;
  throw DataError("edge_mode must be generate or classify, got '" + std::string(s) + "'");
}

Imbalance parse_imbalance(std::string_view s) {
  if (s == "none") return Imbalance::kNone;
  if (s == "focal") return Imbalance::kFocal;
  if (s == "sparse") return Imbalance::kSparse;
  throw DataError("imbalance must be none, focal or sparse, got '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("model config: " + m); };
  if (max_nodes < 1) fail("max_nodes must be >= 1");
  if (max_nodes > kMaxNodes) fail("max_nodes exceeds the node capacity " + std::to_string(kMaxNodes));
  if (node_tokens < 2) fail("node_tokens must be >= 2");
  if (edge_tokens < 2) fail("edge_tokens must be >= 2");
  if (d == 0 || heads == 0 || d % heads != 0) fail("d must be a positive multiple of heads");
  if (layers == 0 || ff == 0 || edge_hidden == 0) fail("layers, ff and edge_hidden must be positive");
  if (max_input < 1) fail("max_input must be >= 1");
  if (vocab < static_cast<std::size_t>(Vocab::kSpecialCount)) fail("vocab smaller than the special set");
  if (edge_mode == EdgeMode::kClassify && classes < 2) fail("classify mode needs at least 2 edge classes");
  if (!(gamma >= 0.0)) fail("gamma must be >= 0");
  if (!(edge_dropout >= 0.0 && edge_dropout < 1.0)) fail("edge_dropout must lie in [0, 1)");
}

namespace {

std::string exact_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void ModelConfig::store(KeyValueConfig& out) const {
  out.set("node_mode", to_string(node_mode));
  out.set("edge_mode", to_string(edge_mode));
  out.set("imbalance", to_string(imbalance));
  out.set("d", std::to_string(d));
  out.set("layers", std::to_string(layers));
  out.set("heads", std::to_string(heads));
  out.set("ff", std::to_string(ff));
  out.set("max_nodes", std::to_string(max_nodes));
  out.set("node_tokens", std::to_string(node_tokens));
  out.set("edge_tokens", std::to_string(edge_tokens));
  out.set("max_input", std::to_string(max_input));
  out.set("vocab", std::to_string(vocab));
  out.set("classes", std::to_string(classes));
  out.set("edge_hidden", std::to_string(edge_hidden));
  out.set("edge_dropout", exact_double(edge_dropout));
  out.set("gamma", exact_double(gamma));
  out.set("k_noedge", std::to_string(k_noedge));
  out.set("init_seed", std::to_string(init_seed));
}

void ModelConfig::load(const KeyValueConfig& in) {
  if (in.has("node_mode")) node_mode = parse_node_mode(in.get("node_mode"));
  if (in.has("edge_mode")) edge_mode = parse_edge_mode(in.get("edge_mode"));
  if (in.has("imbalance")) imbalance = parse_imbalance(in.get("imbalance"));
  auto size = [&](const char* key, std::size_t& field) {
    if (in.has(key)) field = in.get_size(key);
  };
  size("d", d);
  size("layers", layers);
  size("heads", heads);
  size("ff", ff);
  size("max_nodes", max_nodes);
  size("node_tokens", node_tokens);
  size("edge_tokens", edge_tokens);
  size("max_input", max_input);
  size("vocab", vocab);
  size("classes", classes);
  size("edge_hidden", edge_hidden);
  size("k_noedge", k_noedge);
  if (in.has("edge_dropout")) edge_dropout = in.get_double("edge_dropout");
  if (in.has("gamma")) gamma = in.get_double("gamma");
  if (in.has("init_seed")) init_seed = in.get_u64("init_seed");
}

std::vector<std::string> collect_edge_classes(const std::vector<Example>& corpus) {
  std::set<std::string> labels;
  for (const auto& ex : corpus) {
    for (const auto& e : ex.graph.edges) labels.insert(e.label);
  }
  std::vector<std::string> out{std::string(tokens::kNoEdge)};
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

// ---- construction ---------------------------------------------------------

GrapherModel::GrapherModel(ModelConfig config, Vocab vocab, std::vector<std::string> edge_classes)
    : config_(config), vocab_(std::move(vocab)), classes_(std::move(edge_classes)) {
  config_.vocab = vocab_.size();
  config_.classes = classes_.size();
  config_.validate();
  if (config_.edge_mode == EdgeMode::kClassify && (classes_.empty() || classes_[0] != tokens::kNoEdge)) {
    throw DataError("edge class inventory must start with " + std::string(tokens::kNoEdge));
  }

  const std::size_t d = config_.d;
  const std::size_t v = config_.vocab;
  Rng rng(config_.init_seed);

  embed_ = add_glorot("embed", v, d, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.ln_self = add_norm(p + "ln_self", d);
    layer.self = add_attention(p + "self", rng);
    layer.ln_ff = add_norm(p + "ln_ff", d);
    layer.ff_in = add_linear(p + "ff_in", d, config_.ff, rng);
    layer.ff_out = add_linear(p + "ff_out", config_.ff, d, rng);
    encoder_.push_back(std::move(layer));
  }
  encoder_norm_ = add_norm("encoder.norm", d);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "decoder." + std::to_string(l) + ".";
    DecoderLayer layer;
    layer.ln_self = add_norm(p + "ln_self", d);
    layer.self = add_attention(p + "self", rng);
    layer.ln_cross = add_norm(p + "ln_cross", d);
    layer.cross = add_attention(p + "cross", rng);
    layer.ln_ff = add_norm(p + "ln_ff", d);
    layer.ff_in = add_linear(p + "ff_in", d, config_.ff, rng);
    layer.ff_out = add_linear(p + "ff_out", config_.ff, d, rng);
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = add_norm("decoder.norm", d);

  if (config_.node_mode == NodeMode::kText) {
    text_out_ = add_linear("text_out", d, v, rng);
  } else {
    queries_ = add_glorot("queries", config_.max_nodes, d, rng);
    node_gru_ = add_gru("node_gru", d, d, rng);
    node_out_ = add_linear("node_out", d, v, rng);
  }

  if (config_.edge_mode == EdgeMode::kGenerate) {
    edge_gru_ = add_gru("edge_gru", d, d, rng);
    edge_out_ = add_linear("edge_out", d, v, rng);
  } else {
    const std::size_t h = config_.edge_hidden;
    edge_mlp_.push_back(add_linear("edge_mlp.0", d, h, rng));
    edge_mlp_.push_back(add_linear("edge_mlp.1", h, h, rng));
    edge_mlp_.push_back(add_linear("edge_mlp.2", h, h, rng));
    edge_mlp_.push_back(add_linear("edge_mlp.3", h, config_.classes, rng));
  }

  sinusoid_rows_ = std::max(config_.max_input, config_.text_target_limit() + 1);
  sinusoid_.assign(sinusoid_rows_ * d, 0.0);
  for (std::size_t t = 0; t < sinusoid_rows_; ++t) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      sinusoid_[t * d + i] = std::sin(angle);
      if (i + 1 < d) sinusoid_[t * d + i + 1] = std::cos(angle);
    }
  }
}

std::size_t GrapherModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Tensor& GrapherModel::add_param(const std::string& name, std::size_t rows, std::size_t cols, double fill) {
  params_.push_back({name, Tensor::parameter({rows, cols}, std::vector<double>(rows * cols, fill))});
  return params_.back().tensor;
}

Tensor& GrapherModel::add_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> values(rows * cols);
  for (double& x : values) x = (2.0 * uniform01(rng) - 1.0) * limit;
  params_.push_back({name, Tensor::parameter({rows, cols}, std::move(values))});
  return params_.back().tensor;
}

GrapherModel::Linear GrapherModel::add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.w = add_glorot(name + ".w", in, out, rng);
  l.b = add_param(name + ".b", 1, out, 0.0);
  return l;
}

GrapherModel::Norm GrapherModel::add_norm(const std::string& name, std::size_t width) {
  Norm n;
  n.gain = add_param(name + ".gain", 1, width, 1.0);
  n.bias = add_param(name + ".bias", 1, width, 0.0);
  return n;
}

GrapherModel::Attention GrapherModel::add_attention(const std::string& name, Rng& rng) {
  const std::size_t d = config_.d;
  Attention a;
  a.wq = add_glorot(name + ".wq", d, d, rng);
  a.wk = add_glorot(name + ".wk", d, d, rng);
  a.wv = add_glorot(name + ".wv", d, d, rng);
  a.wo = add_glorot(name + ".wo", d, d, rng);
  return a;
}

GruWeights GrapherModel::add_gru(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
  GruWeights g;
  g.input_weight = add_glorot(name + ".input_weight", in, 3 * hidden, rng);
  g.hidden_weight = add_glorot(name + ".hidden_weight", hidden, 3 * hidden, rng);
  g.input_bias = add_param(name + ".input_bias", 1, 3 * hidden, 0.0);
  g.hidden_bias = add_param(name + ".hidden_bias", 1, 3 * hidden, 0.0);
  return g;
}

// ---- building blocks ------------------------------------------------------

Tensor GrapherModel::apply(const Linear& l, const Tensor& x) { return add_row(matmul(x, l.w), l.b); }

Tensor GrapherModel::apply(const Norm& n, const Tensor& x) { return layer_norm(x, n.gain, n.bias); }

// Multi-head attention on already projected q, k, v; returns the output
// projection of the concatenated heads.
Tensor GrapherModel::attend(const Attention& a, const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor* mask, std::vector<Tensor>* weights) const {
  const std::size_t dh = config_.d / config_.heads;
  std::vector<Tensor> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    if (config_.heads == 1) {
      auto r = scaled_dot_product_attention(q, k, v, mask);
      if (weights) weights->push_back(r.weights);
      heads.push_back(r.output);
      break;
    }
    auto r = scaled_dot_product_attention(slice_cols(q, h * dh, (h + 1) * dh), slice_cols(k, h * dh, (h + 1) * dh),
                                          slice_cols(v, h * dh, (h + 1) * dh), mask);
    if (weights) weights->push_back(r.weights);
    heads.push_back(r.output);
  }
  const Tensor joined = heads.size() == 1 ? heads[0] : concat_cols(heads);
  return matmul(joined, a.wo);
}

Tensor GrapherModel::feed_forward(const Linear& in, const Linear& out, const Tensor& x) const {
  return apply(out, relu(apply(in, x)));
}

Tensor GrapherModel::positions(std::size_t begin, std::size_t count) const {
  if (begin + count > sinusoid_rows_) {
    throw std::logic_error("positions: " + std::to_string(begin + count) + " exceeds the table size " +
                           std::to_string(sinusoid_rows_));
  }
  const std::size_t d = config_.d;
  return Tensor::constant({count, d}, std::vector<double>(sinusoid_.begin() + static_cast<std::ptrdiff_t>(begin * d),
                                                          sinusoid_.begin() + static_cast<std::ptrdiff_t>((begin + count) * d)));
}

// ---- encoder --------------------------------------------------------------

std::vector<int> GrapherModel::input_ids(std::string_view text, bool* truncated) const {
  std::vector<int> ids = vocab_.encode(text);
  const bool cut = ids.size() + 1 > config_.max_input;
  if (cut) ids.resize(config_.max_input - 1);
  if (truncated) *truncated = cut;
  ids.push_back(Vocab::kEos);
  return ids;
}

Tensor GrapherModel::encode(std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("encode: empty id sequence");
  if (ids.size() > config_.max_input) {
    throw std::invalid_argument("encode: " + std::to_string(ids.size()) + " ids exceed max_input " +
                                std::to_string(config_.max_input));
  }
  Tensor x = add(embedding(embed_, ids), positions(0, ids.size()));
  for (const auto& layer : encoder_) {
    const Tensor h = apply(layer.ln_self, x);
    x = add(x, attend(layer.self, matmul(h, layer.self.wq), matmul(h, layer.self.wk), matmul(h, layer.self.wv),
                      nullptr, nullptr));
    x = add(x, feed_forward(layer.ff_in, layer.ff_out, apply(layer.ln_ff, x)));
  }
  return apply(encoder_norm_, x);
}

// ---- decoder --------------------------------------------------------------

Tensor GrapherModel::decoder_stack(Tensor x, const Tensor& encoder_states, const Tensor* self_mask,
                                   std::vector<CrossAttentionMap>* capture) const {
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& layer = decoder_[l];
    Tensor h = apply(layer.ln_self, x);
    x = add(x, attend(layer.self, matmul(h, layer.self.wq), matmul(h, layer.self.wk), matmul(h, layer.self.wv),
                      self_mask, nullptr));
    h = apply(layer.ln_cross, x);
    std::vector<Tensor> weights;
    x = add(x, attend(layer.cross, matmul(h, layer.cross.wq), matmul(encoder_states, layer.cross.wk),
                      matmul(encoder_states, layer.cross.wv), nullptr, capture ? &weights : nullptr));
    if (capture) {
      for (std::size_t head = 0; head < weights.size(); ++head) capture->push_back({l, head, weights[head]});
    }
    x = add(x, feed_forward(layer.ff_in, layer.ff_out, apply(layer.ln_ff, x)));
  }
  return apply(decoder_norm_, x);
}

Tensor GrapherModel::decoder_step(int token, std::size_t position, std::vector<LayerCache>& cache) const {
  const int ids[1] = {token};
  Tensor x = add(embedding(embed_, ids), positions(position, 1));
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const auto& layer = decoder_[l];
    auto& c = cache[l];
    Tensor h = apply(layer.ln_self, x);
    const Tensor k = matmul(h, layer.self.wk);
    const Tensor v = matmul(h, layer.self.wv);
    if (c.k.defined()) {
      const Tensor ks[2] = {c.k, k};
      const Tensor vs[2] = {c.v, v};
      c.k = concat_rows(ks);
      c.v = concat_rows(vs);
    } else {
      c.k = k;
      c.v = v;
    }
    x = add(x, attend(layer.self, matmul(h, layer.self.wq), c.k, c.v, nullptr, nullptr));
    h = apply(layer.ln_cross, x);
    x = add(x, attend(layer.cross, matmul(h, layer.cross.wq), c.cross_k, c.cross_v, nullptr, nullptr));
    x = add(x, feed_forward(layer.ff_in, layer.ff_out, apply(layer.ln_ff, x)));
  }
  return apply(decoder_norm_, x);
}

Tensor GrapherModel::decode_text(const Tensor& encoder_states, std::span<const int> target) const {
  if (config_.node_mode != NodeMode::kText) throw std::logic_error("decode_text: model is in query mode");
  if (target.empty()) throw std::invalid_argument("decode_text: empty target");
  std::vector<int> inputs;
  inputs.reserve(target.size());
  inputs.push_back(Vocab::kPad);
  inputs.insert(inputs.end(), target.begin(), target.end() - 1);
  const Tensor x = add(embedding(embed_, inputs), positions(0, inputs.size()));
  const Tensor mask = causal_mask(inputs.size());
  return decoder_stack(x, encoder_states, &mask, nullptr);
}

Tensor GrapherModel::text_logits(const Tensor& decoder_states) const { return apply(text_out_, decoder_states); }

NodeFeatures GrapherModel::pool_spans(const Tensor& decoder_states,
                                      const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                                      std::vector<bool> active) {
  const std::size_t t = decoder_states.rows();
  std::vector<double> pool(spans.size() * t, 0.0);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const auto [b, e] = spans[k];
    if (e <= b || e > t) throw std::invalid_argument("pool_spans: bad span for slot " + std::to_string(k));
    for (std::size_t p = b; p < e; ++p) pool[k * t + p] = 1.0 / static_cast<double>(e - b);
  }
  NodeFeatures f;
  f.matrix = matmul(Tensor::constant({spans.size(), t}, std::move(pool)), decoder_states);
  f.active = std::move(active);
  return f;
}

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t c = logits.cols();
  std::vector<int> out(logits.rows());
  auto x = logits.data();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = x.data() + r * c;
    out[r] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

}  // namespace

std::vector<Tensor> GrapherModel::gru_decode(const GruWeights& gru, const Linear& out, Tensor state,
                                             std::size_t steps, const std::vector<std::vector<int>>* teacher) const {
  const std::size_t m = state.rows();
  std::vector<int> prev(m, Vocab::kPad);
  std::vector<Tensor> logits;
  logits.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    state = gru_cell(state, embedding(embed_, prev), gru);
    logits.push_back(apply(out, state));
    if (teacher) {
      for (std::size_t r = 0; r < m; ++r) prev[r] = s < (*teacher)[r].size() ? (*teacher)[r][s] : Vocab::kEos;
    } else {
      prev = argmax_rows(logits.back());
    }
  }
  return logits;
}

std::pair<NodeFeatures, NodeLogits> GrapherModel::generate_query_nodes(const Tensor& encoder_states,
                                                                       std::vector<CrossAttentionMap>* capture) const {
  if (config_.node_mode != NodeMode::kQuery) throw std::logic_error("generate_query_nodes: model is in text mode");
  NodeFeatures f;
  f.matrix = decoder_stack(queries_, encoder_states, nullptr, capture);
  f.active.assign(config_.max_nodes, true);
  NodeLogits l;
  l.steps = gru_decode(node_gru_, node_out_, f.matrix, config_.node_tokens, nullptr);
  return {std::move(f), std::move(l)};
}

// ---- edge heads -----------------------------------------------------------

Tensor GrapherModel::pair_features(const NodeFeatures& f, std::size_t i, std::size_t j) {
  if (i == j) throw std::invalid_argument("pair_features: self pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  if (i >= f.slots() || j >= f.slots()) throw std::invalid_argument("pair_features: slot out of range");
  return sub(slice_rows(f.matrix, i, i + 1), slice_rows(f.matrix, j, j + 1));
}

Tensor GrapherModel::pair_matrix(const NodeFeatures& f, const std::vector<std::pair<std::size_t, std::size_t>>& cells) {
  std::vector<std::size_t> src, dst;
  src.reserve(cells.size());
  dst.reserve(cells.size());
  for (const auto& [i, j] : cells) {
    if (i == j) throw std::invalid_argument("pair_matrix: self pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    src.push_back(i);
    dst.push_back(j);
  }
  return sub(gather_rows(f.matrix, src), gather_rows(f.matrix, dst));
}

std::vector<Tensor> GrapherModel::edge_head_generate(const Tensor& pairs,
                                                     const std::vector<std::vector<int>>* teacher) const {
  if (config_.edge_mode != EdgeMode::kGenerate) throw std::logic_error("edge_head_generate: model classifies edges");
  return gru_decode(edge_gru_, edge_out_, pairs, config_.edge_tokens, teacher);
}

Tensor GrapherModel::edge_head_classify(const Tensor& pairs, Rng* rng) const {
  if (config_.edge_mode != EdgeMode::kClassify) throw std::logic_error("edge_head_classify: model generates edges");
  Tensor h = pairs;
  for (std::size_t l = 0; l < 3; ++l) {
    h = relu(apply(edge_mlp_[l], h));
    if (rng) h = dropout(h, config_.edge_dropout, true, *rng);
  }
  return apply(edge_mlp_[3], h);
}

// ---- training -------------------------------------------------------------

PreparedExample GrapherModel::prepare(const Example& ex) const {
  ex.graph.validate();
  const std::size_t n = config_.max_nodes;
  if (ex.graph.nodes.size() > n) {
    throw CapacityError("graph has " + std::to_string(ex.graph.nodes.size()) + " nodes, capacity is " +
                        std::to_string(n));
  }
  if (ex.graph.edges.size() > kMaxEdges) {
    throw CapacityError("graph has " + std::to_string(ex.graph.edges.size()) + " edges, capacity is " +
                        std::to_string(kMaxEdges));
  }
  PreparedExample p;
  bool truncated = false;
  p.input_ids = input_ids(ex.text, &truncated);
  if (truncated) spdlog::warn("input truncated to {} tokens: {}", config_.max_input, ex.text);
  p.graph = ex.graph;

  if (config_.node_mode == NodeMode::kText) {
    const auto toks = node_target_tokens(ex.graph.nodes, n);
    if (toks.size() > config_.text_target_limit()) {
      throw CapacityError("node target has " + std::to_string(toks.size()) + " tokens, limit is " +
                          std::to_string(config_.text_target_limit()));
    }
    std::size_t begin = 0;
    for (std::size_t t = 0; t < toks.size(); ++t) {
      p.text_target.push_back(vocab_.id_of(toks[t]));
      if (toks[t] == tokens::kNodeSep || toks[t] == tokens::kEos) {
        p.spans.emplace_back(begin, t);
        begin = t + 1;
      }
    }
  } else {
    const std::size_t s = config_.node_tokens;
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<int> ids;
      if (k < ex.graph.nodes.size()) {
        for (const auto& w : tokenize_words(ex.graph.nodes[k])) ids.push_back(vocab_.id_of(w));
        if (ids.size() + 1 > s) {
          throw CapacityError("node '" + ex.graph.nodes[k] + "' needs " + std::to_string(ids.size() + 1) +
                              " tokens, node_tokens is " + std::to_string(s));
        }
      } else {
        ids.push_back(Vocab::kNoNode);
      }
      ids.resize(s, Vocab::kEos);
      p.node_targets.push_back(std::move(ids));
    }
  }

  for (const auto& e : ex.graph.edges) {
    if (config_.edge_mode == EdgeMode::kGenerate) {
      std::vector<int> ids;
      for (const auto& w : tokenize_words(e.label)) ids.push_back(vocab_.id_of(w));
      if (ids.size() + 1 > config_.edge_tokens) {
        throw CapacityError("relation '" + e.label + "' needs " + std::to_string(ids.size() + 1) +
                            " tokens, edge_tokens is " + std::to_string(config_.edge_tokens));
      }
      ids.resize(config_.edge_tokens, Vocab::kEos);
      p.edge_sequences.push_back(std::move(ids));
      p.edge_classes.push_back(-1);
    } else {
      const auto it = std::find(classes_.begin(), classes_.end(), e.label);
      if (it == classes_.end()) throw DataError("relation '" + e.label + "' is not in the edge class inventory");
      p.edge_classes.push_back(static_cast<int>(it - classes_.begin()));
      p.edge_sequences.emplace_back();
    }
  }
  return p;
}

TrainingOutputs GrapherModel::forward(const PreparedExample& ex, Rng& rng, bool training) const {
  TrainingOutputs out;
  const Tensor enc = encode(ex.input_ids);
  const std::size_t n = config_.max_nodes;
  std::vector<bool> active(n, false);
  for (std::size_t k = 0; k < ex.graph.nodes.size(); ++k) active[k] = true;

  Tensor node_loss;
  if (config_.node_mode == NodeMode::kText) {
    const Tensor states = decode_text(enc, ex.text_target);
    out.text_logits = text_logits(states);
    node_loss = mean(neg(pick(log_softmax(out.text_logits), ex.text_target)));
    out.features = pool_spans(states, ex.spans, active);
  } else {
    auto [features, logits] = generate_query_nodes(enc);
    const CostMatrix cost = matching_cost(logits, ex.node_targets, Vocab::kEos);
    out.assignment = hungarian(cost);
    auto [aligned_logits, aligned_features] = apply_permutation(logits, features, out.assignment);
    node_loss = sequence_cross_entropy_rows(aligned_logits.steps, ex.node_targets, Vocab::kEos);
    out.node_logits = std::move(aligned_logits);
    out.features = std::move(aligned_features);
    out.features.active = active;
  }

  out.adjacency = build_adjacency(ex.graph, n);
  if (training && config_.imbalance == Imbalance::kSparse) {
    out.adjacency = sparsify_adjacency(out.adjacency, config_.k_noedge, rng);
  }

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_at;
  for (std::size_t e = 0; e < ex.graph.edges.size(); ++e) {
    edge_at[{ex.graph.edges[e].src, ex.graph.edges[e].dst}] = e;
  }
  out.edges.cells = out.adjacency.masked_cells();
  auto& tg = out.edge_targets;
  for (const auto& cell : out.edges.cells) {
    const auto it = edge_at.find(cell);
    if (it == edge_at.end()) {
      ++tg.no_edges;
      tg.classes.push_back(0);
      std::vector<int> seq(config_.edge_tokens, Vocab::kEos);
      seq[0] = Vocab::kNoEdge;
      tg.sequences.push_back(std::move(seq));
    } else {
      ++tg.real_edges;
      tg.classes.push_back(ex.edge_classes[it->second]);
      tg.sequences.push_back(ex.edge_sequences[it->second]);
    }
  }

  if (!out.edges.cells.empty()) {
    const Tensor pairs = pair_matrix(out.features, out.edges.cells);
    if (config_.edge_mode == EdgeMode::kClassify) {
      out.edges.class_logits = edge_head_classify(pairs, training ? &rng : nullptr);
    } else {
      out.edges.step_logits = edge_head_generate(pairs, &tg.sequences);
    }
  }
  Tensor eloss = edge_loss(out.edges, tg, config_.edge_gamma(), Vocab::kEos);
  out.loss = combine_losses(std::move(node_loss), std::move(eloss), tg);
  return out;
}

// ---- inference ------------------------------------------------------------

namespace {

struct SlotBuilder {
  std::size_t n;
  SlotNodes slots;
  std::set<std::string> seen;

  explicit SlotBuilder(std::size_t n_max) : n(n_max) {
    slots.slots.assign(n_max, std::string(tokens::kNoNode));
    slots.active.assign(n_max, false);
  }

  // Returns true when the slot becomes an active, previously unseen node.
  bool close(std::size_t slot, const std::vector<std::string>& words) {
    if (slot >= n || words.empty()) return false;
    std::string node = join_words(words);
    if (node.empty() || !seen.insert(node).second) return false;
    slots.slots[slot] = std::move(node);
    slots.active[slot] = true;
    return true;
  }
};

}  // namespace

InferenceResult GrapherModel::infer_text_nodes(const Tensor& encoder_states, NodeFeatures& features) const {
  const std::size_t n = config_.max_nodes;
  const std::size_t d = config_.d;
  std::vector<LayerCache> cache(decoder_.size());
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    cache[l].cross_k = matmul(encoder_states, decoder_[l].cross.wk);
    cache[l].cross_v = matmul(encoder_states, decoder_[l].cross.wv);
  }

  InferenceResult res;
  std::vector<std::vector<double>> states;
  std::vector<int> emitted;
  int token = Vocab::kPad;
  for (std::size_t pos = 0; pos < config_.text_target_limit(); ++pos) {
    const Tensor state = decoder_step(token, pos, cache);
    token = argmax_rows(text_logits(state))[0];
    states.emplace_back(state.data().begin(), state.data().end());
    emitted.push_back(token);
    if (token == Vocab::kEos) break;
  }

  SlotBuilder builder(n);
  std::vector<double> feat(n * d, 0.0);
  std::size_t slot = 0;
  std::vector<std::string> words;
  std::vector<std::size_t> where;
  auto close = [&] {
    if (builder.close(slot, words)) {
      for (std::size_t p : where) {
        for (std::size_t c = 0; c < d; ++c) feat[slot * d + c] += states[p][c] / static_cast<double>(where.size());
      }
    }
    words.clear();
    where.clear();
  };
  for (std::size_t p = 0; p < emitted.size() && slot < n; ++p) {
    const std::string& tok = vocab_.token_of(emitted[p]);
    res.decoded_tokens.push_back(tok);
    if (emitted[p] == Vocab::kNodeSep) {
      close();
      ++slot;
    } else if (emitted[p] == Vocab::kEos) {
      break;
    } else if (!tokens::is_special(tok)) {
      words.push_back(tok);
      where.push_back(p);
    }
  }
  close();
  features.matrix = Tensor::constant({n, d}, std::move(feat));
  features.active = builder.slots.active;
  res.slots = std::move(builder.slots);
  return res;
}

InferenceResult GrapherModel::infer_query_nodes(const Tensor& encoder_states, NodeFeatures& features) const {
  auto [f, logits] = generate_query_nodes(encoder_states);
  std::vector<std::vector<int>> tokens_of(config_.max_nodes);
  for (const auto& step : logits.steps) {
    const auto ids = argmax_rows(step);
    for (std::size_t q = 0; q < ids.size(); ++q) tokens_of[q].push_back(ids[q]);
  }
  SlotBuilder builder(config_.max_nodes);
  for (std::size_t q = 0; q < config_.max_nodes; ++q) {
    std::vector<std::string> words;
    for (int id : tokens_of[q]) {
      if (id == Vocab::kEos) break;
      const std::string& tok = vocab_.token_of(id);
      if (!tokens::is_special(tok)) words.push_back(tok);
    }
    builder.close(q, words);
  }
  features = std::move(f);
  features.active = builder.slots.active;
  InferenceResult res;
  res.slots = std::move(builder.slots);
  return res;
}

InferenceResult GrapherModel::infer(std::string_view text) const {
  NoGradGuard no_grad;
  bool truncated = false;
  const auto ids = input_ids(text, &truncated);
  if (truncated) spdlog::warn("input truncated to {} tokens", config_.max_input);
  const Tensor enc = encode(ids);

  NodeFeatures features;
  InferenceResult res = config_.node_mode == NodeMode::kText ? infer_text_nodes(enc, features)
                                                             : infer_query_nodes(enc, features);

  std::vector<std::size_t> node_of_slot(config_.max_nodes, 0);
  for (std::size_t k = 0; k < config_.max_nodes; ++k) {
    if (!res.slots.active[k]) continue;
    node_of_slot[k] = res.graph.nodes.size();
    res.graph.nodes.push_back(res.slots.slots[k]);
  }

  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t i = 0; i < config_.max_nodes; ++i) {
    for (std::size_t j = 0; j < config_.max_nodes; ++j) {
      if (i != j && res.slots.active[i] && res.slots.active[j]) cells.emplace_back(i, j);
    }
  }
  res.edge_evaluations = cells.size();
  if (cells.empty()) return res;

  const Tensor pairs = pair_matrix(features, cells);
  if (config_.edge_mode == EdgeMode::kClassify) {
    const auto cls = argmax_rows(edge_head_classify(pairs, nullptr));
    for (std::size_t m = 0; m < cells.size(); ++m) {
      if (cls[m] == 0) continue;
      res.graph.edges.push_back({node_of_slot[cells[m].first], classes_[static_cast<std::size_t>(cls[m])],
                                 node_of_slot[cells[m].second]});
    }
  } else {
    const auto steps = edge_head_generate(pairs, nullptr);
    std::vector<std::vector<int>> ids(cells.size());
    for (const auto& step : steps) {
      const auto a = argmax_rows(step);
      for (std::size_t m = 0; m < cells.size(); ++m) ids[m].push_back(a[m]);
    }
    for (std::size_t m = 0; m < cells.size(); ++m) {
      if (ids[m][0] == Vocab::kNoEdge) continue;
      std::vector<std::string> words;
      for (int id : ids[m]) {
        if (id == Vocab::kEos) break;
        const std::string& tok = vocab_.token_of(id);
        if (!tokens::is_special(tok)) words.push_back(tok);
      }
      if (words.empty()) continue;
      res.graph.edges.push_back({node_of_slot[cells[m].first], join_words(words), node_of_slot[cells[m].second]});
    }
  }
  return res;
}

std::vector<CrossAttentionMap> GrapherModel::dump_cross_attention(std::string_view text) const {
  if (config_.node_mode != NodeMode::kQuery) {
    throw std::logic_error("dump_cross_attention: cross-attention maps exist only in query node mode");
  }
  NoGradGuard no_grad;
  const Tensor enc = encode(input_ids(text));
  std::vector<CrossAttentionMap> maps;
  generate_query_nodes(enc, &maps);
  return maps;
}

}  // namespace grapher
