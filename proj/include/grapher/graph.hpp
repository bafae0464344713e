// SPDX-License-Identifier: Apache-2.0
//
// Knowledge-graph data model: triples, node serialisation for the node
// decoder, and adjacency targets for the edge heads.

#ifndef GRAPHER_GRAPH_HPP
#define GRAPHER_GRAPH_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "grapher/rng.hpp"

namespace grapher {

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A graph (or corpus request) that exceeds the configured node/edge capacity.
class CapacityError : public DataError {
 public:
  using DataError::DataError;
};

namespace tokens {
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kNodeSep = "<node_sep>";
inline constexpr std::string_view kNoNode = "<no_node>";
inline constexpr std::string_view kNoEdge = "<no_edge>";
inline constexpr std::string_view kUnk = "<unk>";

bool is_special(std::string_view token);
}  // namespace tokens

/// Node and edge capacity of a single graph.
inline constexpr std::size_t kMaxNodes = 8;
inline constexpr std::size_t kMaxEdges = 7;

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  bool operator==(const Triple&) const = default;
  auto operator<=>(const Triple&) const = default;
};

using TripleSet = std::vector<Triple>;

struct Edge {
  std::size_t src = 0;
  std::string label;
  std::size_t dst = 0;

  bool operator==(const Edge&) const = default;
};

struct KnowledgeGraph {
  std::vector<std::string> nodes;
  std::vector<Edge> edges;

  /// Throws DataError when an invariant is broken (duplicate or empty node,
  /// edge index out of range, self-edge, two edges on one ordered pair).
  void validate() const;

  bool operator==(const KnowledgeGraph&) const = default;
};

/// Unicode-to-ASCII cleanup applied to every text, node and relation string:
/// underscores become spaces, whitespace runs collapse, Latin-1 and Latin
/// Extended-A letters fold to their base letters, typographic quotes and
/// dashes map to ASCII, and quotes wrapping the whole string are removed.
/// Characters without a mapping are dropped and added to `*dropped`.
std::string normalize_text(std::string_view raw, std::size_t* dropped = nullptr);

/// Whitespace split; a trailing run of . , ; : ! ? becomes its own token so
/// that "London." yields "London" ".". Special markers pass through. This is
/// the one place to swap in a subword tokenizer.
std::vector<std::string> tokenize_words(std::string_view text);
/// Inverse of tokenize_words on normalised text: single spaces, punctuation
/// tokens attached to the preceding word.
std::string join_words(const std::vector<std::string>& words);

TripleSet graph_to_triples(const KnowledgeGraph& g);
/// Nodes are ordered by first appearance (subject before object). Repeated
/// identical triples collapse; conflicting predicates on one ordered pair and
/// self-loops are rejected with DataError.
KnowledgeGraph triples_to_graph(const TripleSet& triples);

/// "<pad> A <node_sep> B <node_sep> <no_node> ... </s>" with exactly n_max slots.
std::string serialize_nodes(const KnowledgeGraph& g, std::size_t n_max);
/// Token-level variant of serialize_nodes (without the leading <pad>), used as
/// the decoder target sequence.
std::vector<std::string> node_target_tokens(const std::vector<std::string>& nodes, std::size_t n_max);

struct SlotNodes {
  std::vector<std::string> slots;  // always n_max entries; inactive slots hold <no_node>
  std::vector<bool> active;

  std::vector<std::string> active_nodes() const;
};

/// Parses (possibly malformed) decoder output. Never throws.
SlotNodes deserialize_nodes(std::string_view s, std::size_t n_max);

struct AdjacencyTargets {
  std::size_t n = 0;
  std::vector<std::string> labels;  // n*n, row-major (src, dst); <no_edge> where absent
  std::vector<bool> mask;           // n*n, cells that contribute to the loss
  std::vector<bool> active;         // n slots

  const std::string& label(std::size_t i, std::size_t j) const { return labels[i * n + j]; }
  bool masked(std::size_t i, std::size_t j) const { return mask[i * n + j]; }
  bool is_edge(std::size_t i, std::size_t j) const;

  std::size_t masked_count() const;
  std::size_t edge_count() const;
  std::size_t masked_no_edge_count() const;
  /// Masked cells in row-major order.
  std::vector<std::pair<std::size_t, std::size_t>> masked_cells() const;
};

/// slot_of_node[k] is the slot of g.nodes[k]; it must be injective into [0, n_max).
AdjacencyTargets build_adjacency(const KnowledgeGraph& g, std::size_t n_max,
                                 const std::vector<std::size_t>& slot_of_node);
/// Identity slot assignment (node k -> slot k).
AdjacencyTargets build_adjacency(const KnowledgeGraph& g, std::size_t n_max);

/// Keeps every real edge and min(k_noedge, available) uniformly chosen
/// <no_edge> cells in the mask.
AdjacencyTargets sparsify_adjacency(const AdjacencyTargets& a, std::size_t k_noedge, Rng& rng);

/// Renames/reorders nodes: new node k is old node order[k].
KnowledgeGraph permute_nodes(const KnowledgeGraph& g, const std::vector<std::size_t>& order);

}  // namespace grapher

#endif  // GRAPHER_GRAPH_HPP
