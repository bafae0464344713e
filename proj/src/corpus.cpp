// SPDX-License-Identifier: Apache-2.0

#include "grapher/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "grapher/config.hpp"

namespace grapher {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  if (max_nodes > kMaxNodes) {
    throw CapacityError("corpus spec: max_nodes " + std::to_string(max_nodes) +
                        " exceeds node capacity " + std::to_string(kMaxNodes));
  }
  if (max_edges > kMaxEdges) {
    throw CapacityError("corpus spec: max_edges " + std::to_string(max_edges) +
                        " exceeds edge capacity " + std::to_string(kMaxEdges));
  }
  if (min_nodes < 2 || min_nodes > max_nodes) throw DataError("corpus spec: need 2 <= min_nodes <= max_nodes");
  if (min_edges < 1 || min_edges > max_edges) throw DataError("corpus spec: need 1 <= min_edges <= max_edges");
  if (relations.size() < 10 || relations.size() > 30) {
    throw DataError("corpus spec: relation inventory must hold 10-30 relations, got " +
                    std::to_string(relations.size()));
  }
  if (reuse_probability < 0.0 || reuse_probability > 1.0) throw DataError("corpus spec: reuse_probability outside [0,1]");
  for (const auto& r : relations) {
    if (r.templates.empty()) throw DataError("corpus spec: relation '" + r.name + "' has no template");
    for (const auto* pool : {&r.subject_pool, &r.object_pool}) {
      auto it = pools.find(*pool);
      if (it == pools.end() || it->second.empty()) {
        throw DataError("corpus spec: relation '" + r.name + "' uses unknown pool '" + *pool + "'");
      }
    }
    for (const auto& t : r.templates) {
      if (t.find("{s}") == std::string::npos || t.find("{o}") == std::string::npos) {
        throw DataError("corpus spec: template for '" + r.name + "' lacks {s} or {o}");
      }
    }
  }
}

CorpusSpec parse_corpus_spec(const std::string& text) {
  CorpusSpec spec;
  const KeyValueConfig kv = KeyValueConfig::parse(text);
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("pool.", 0) == 0) {
      auto names = split(value, ',');
      std::erase_if(names, [](const std::string& n) { return n.empty(); });
      spec.pools[key.substr(5)] = std::move(names);
    } else if (key.rfind("relation.", 0) == 0) {
      auto parts = split(value, '|');
      const auto arrow = parts[0].find("->");
      if (arrow == std::string::npos || parts.size() < 2) {
        throw DataError("corpus spec: relation line '" + key + "' must read '<pool> -> <pool> | template ...'");
      }
      RelationSpec r;
      r.name = key.substr(9);
      r.subject_pool = trim(parts[0].substr(0, arrow));
      r.object_pool = trim(parts[0].substr(arrow + 2));
      r.templates.assign(parts.begin() + 1, parts.end());
      spec.relations.push_back(std::move(r));
    } else if (key == "train") {
      spec.train = kv.get_size(key);
    } else if (key == "dev") {
      spec.dev = kv.get_size(key);
    } else if (key == "test") {
      spec.test = kv.get_size(key);
    } else if (key == "min_nodes") {
      spec.min_nodes = kv.get_size(key);
    } else if (key == "max_nodes") {
      spec.max_nodes = kv.get_size(key);
    } else if (key == "min_edges") {
      spec.min_edges = kv.get_size(key);
    } else if (key == "max_edges") {
      spec.max_edges = kv.get_size(key);
    } else if (key == "max_text_tokens") {
      spec.max_text_tokens = kv.get_size(key);
    } else if (key == "reuse_probability") {
      spec.reuse_probability = kv.get_double(key);
    } else if (key == "seed") {
      spec.seed = kv.get_u64(key);
    } else {
      throw DataError("corpus spec: unknown key '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

CorpusSpec load_corpus_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus spec " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus_spec(ss.str());
}

std::string fill_template(const std::string& tmpl, const std::string& subject, const std::string& object) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "{s}") == 0) {
      out += subject;
      i += 3;
    } else if (tmpl.compare(i, 3, "{o}") == 0) {
      out += object;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

namespace {

struct Draft {
  std::vector<std::string> names;
  std::vector<std::string> pools;
  struct Link {
    std::size_t s, r, o;
  };
  std::vector<Link> links;

  bool has_pair(std::size_t s, std::size_t o) const {
    return std::any_of(links.begin(), links.end(), [&](const Link& l) { return l.s == s && l.o == o; });
  }
};

// Picks an endpoint drawn from `pool`: an existing node (index < names.size())
// or a fresh entity (returned as names.size() + offset into `fresh`).
bool pick_endpoint(const CorpusSpec& spec, const Draft& d, const std::string& pool,
                   std::size_t exclude, std::vector<std::pair<std::string, std::string>>& fresh,
                   Rng& rng, std::size_t& out) {
  std::vector<std::size_t> existing;
  for (std::size_t k = 0; k < d.names.size(); ++k) {
    if (d.pools[k] == pool && k != exclude) existing.push_back(k);
  }
  const bool full = d.names.size() + fresh.size() >= spec.max_nodes;
  if (!existing.empty() && (full || uniform01(rng) < spec.reuse_probability)) {
    out = existing[uniform_index(rng, existing.size())];
    return true;
  }
  if (full) return false;
  std::vector<std::string> candidates;
  for (const auto& name : spec.pools.at(pool)) {
    const bool used = std::find(d.names.begin(), d.names.end(), name) != d.names.end() ||
                      std::any_of(fresh.begin(), fresh.end(), [&](const auto& f) { return f.first == name; });
    if (!used) candidates.push_back(name);
  }
  if (candidates.empty()) return false;
  fresh.emplace_back(candidates[uniform_index(rng, candidates.size())], pool);
  out = d.names.size() + fresh.size() - 1;
  return true;
}

bool draft_graph(const CorpusSpec& spec, Rng& rng, Draft& d) {
  const std::size_t target = spec.min_edges + uniform_index(rng, spec.max_edges - spec.min_edges + 1);
  for (int attempt = 0; attempt < 200 && d.links.size() < target; ++attempt) {
    const std::size_t r = uniform_index(rng, spec.relations.size());
    const auto& rel = spec.relations[r];
    std::vector<std::pair<std::string, std::string>> fresh;
    std::size_t s = 0, o = 0;
    if (!pick_endpoint(spec, d, rel.subject_pool, SIZE_MAX, fresh, rng, s)) continue;
    if (!pick_endpoint(spec, d, rel.object_pool, s, fresh, rng, o)) continue;
    if (s == o || d.has_pair(s, o)) continue;
    for (auto& [name, pool] : fresh) {
      d.names.push_back(name);
      d.pools.push_back(pool);
    }
    d.links.push_back({s, r, o});
  }
  return d.links.size() >= spec.min_edges && d.names.size() >= spec.min_nodes &&
         d.names.size() <= spec.max_nodes;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = derive_rng({seed, 0x636f72707573ULL});
  Corpus corpus;
  std::set<std::string> texts;
  // Unordered entity pairs owned by each finished split.
  std::vector<std::set<std::pair<std::string, std::string>>> owned;

  auto make_split = [&](std::size_t count, std::vector<Example>& out) {
    std::set<std::pair<std::string, std::string>> mine;
    std::size_t failures = 0;
    while (out.size() < count) {
      if (++failures > 100000 + 100 * count) {
        throw DataError("corpus generation: cannot find enough distinct examples; enlarge the entity pools");
      }
      Draft d;
      if (!draft_graph(spec, rng, d)) continue;

      std::vector<std::pair<std::string, std::string>> pairs;
      bool clash = false;
      for (const auto& l : d.links) {
        auto p = std::minmax(d.names[l.s], d.names[l.o]);
        pairs.emplace_back(p.first, p.second);
        for (const auto& other : owned) clash = clash || other.count(pairs.back()) > 0;
      }
      if (clash) continue;

      shuffle(d.links, rng);
      std::string text;
      TripleSet triples;
      for (const auto& l : d.links) {
        const auto& rel = spec.relations[l.r];
        const auto& tmpl = rel.templates[uniform_index(rng, rel.templates.size())];
        if (!text.empty()) text += ' ';
        text += fill_template(tmpl, d.names[l.s], d.names[l.o]);
        triples.push_back({normalize_text(d.names[l.s]), normalize_text(rel.name), normalize_text(d.names[l.o])});
      }
      text = normalize_text(text);
      if (tokenize_words(text).size() > spec.max_text_tokens) continue;
      if (!texts.insert(text).second) continue;

      Example ex{text, triples_to_graph(triples)};
      ex.graph.validate();
      out.push_back(std::move(ex));
      mine.insert(pairs.begin(), pairs.end());
    }
    owned.push_back(std::move(mine));
  };

  make_split(spec.train, corpus.train);
  make_split(spec.dev, corpus.dev);
  make_split(spec.test, corpus.test);
  return corpus;
}

// ---- JSONL ----------------------------------------------------------------------

std::string example_to_json(const Example& ex) {
  nlohmann::json j;
  j["text"] = ex.text;
  j["triples"] = nlohmann::json::array();
  for (const auto& t : graph_to_triples(ex.graph)) {
    j["triples"].push_back({t.subject, t.predicate, t.object});
  }
  return j.dump();
}

Example example_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid JSON record: ") + e.what());
  }
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw DataError("record lacks a string field \"text\"");
  }
  Example ex;
  ex.text = normalize_text(j["text"].get<std::string>());
  TripleSet triples;
  if (j.contains("triples")) {
    if (!j["triples"].is_array()) throw DataError("\"triples\" must be an array");
    for (const auto& t : j["triples"]) {
      if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string()) {
        throw DataError("each triple must be [subject, predicate, object] strings");
      }
      triples.push_back({normalize_text(t[0].get<std::string>()), normalize_text(t[1].get<std::string>()),
                         normalize_text(t[2].get<std::string>())});
    }
  }
  ex.graph = triples_to_graph(triples);
  return ex;
}

std::vector<Example> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset " + path.string());
  std::vector<Example> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(example_from_json(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& ex : examples) out << example_to_json(ex) << '\n';
}

}  // namespace grapher
