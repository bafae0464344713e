// SPDX-License-Identifier: Apache-2.0
//
// Template-based synthetic corpus and the JSONL dataset format.

#ifndef GRAPHER_CORPUS_HPP
#define GRAPHER_CORPUS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "grapher/graph.hpp"

namespace grapher {

struct Example {
  std::string text;
  KnowledgeGraph graph;
};

struct RelationSpec {
  std::string name;  // raw relation id, e.g. "birth_place"
  std::string subject_pool;
  std::string object_pool;
  std::vector<std::string> templates;  // "{s} was born in {o}."
};

struct CorpusSpec {
  std::map<std::string, std::vector<std::string>> pools;
  std::vector<RelationSpec> relations;
  std::size_t train = 200;
  std::size_t dev = 40;
  std::size_t test = 40;
  std::size_t min_nodes = 2;
  std::size_t max_nodes = kMaxNodes;
  std::size_t min_edges = 1;
  std::size_t max_edges = kMaxEdges;
  std::size_t max_text_tokens = 63;
  double reuse_probability = 0.5;
  std::uint64_t seed = 1;

  /// Throws DataError on an inconsistent spec, CapacityError when the graph
  /// size limits exceed kMaxNodes/kMaxEdges.
  void validate() const;
};

/// Parses the `key = value` spec format:
///   pool.<name> = entity, entity, ...
///   relation.<id> = <subject pool> -> <object pool> | template | template ...
///   train/dev/test/min_nodes/max_nodes/min_edges/max_edges/max_text_tokens/
///   reuse_probability/seed = value
CorpusSpec parse_corpus_spec(const std::string& text);
CorpusSpec load_corpus_spec(const std::filesystem::path& path);

/// Replaces {s} and {o} in a template.
std::string fill_template(const std::string& tmpl, const std::string& subject, const std::string& object);

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

/// Pure function of (spec, seed). Graphs within the spec's node/edge limits;
/// no unordered entity pair of a dev/test triple appears in an earlier split.
Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed);

// ---- JSONL: {"text": "...", "triples": [[s, p, o], ...]} --------------------

std::string example_to_json(const Example& ex);
/// Applies normalize_text to the text and to every triple element.
Example example_from_json(const std::string& line);
std::vector<Example> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const std::vector<Example>& examples);

}  // namespace grapher

#endif  // GRAPHER_CORPUS_HPP
