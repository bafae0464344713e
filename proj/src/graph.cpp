// SPDX-License-Identifier: Apache-2.0

#include "grapher/graph.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace grapher {

namespace tokens {
bool is_special(std::string_view t) {
  return t == kPad || t == kEos || t == kNodeSep || t == kNoNode || t == kNoEdge || t == kUnk;
}
}  // namespace tokens

// ---- normalisation ----------------------------------------------------------

namespace {

// U+00A0 .. U+00FF. nullptr = no mapping (dropped and counted).
constexpr std::array<const char*, 96> kLatin1 = {
    " ",  "!",  "c",  "L",  nullptr, "Y", "|", nullptr, nullptr, "(c)", "a", "\"", nullptr, "",
    "(r)", nullptr, nullptr, nullptr, "2", "3", "'", "u", nullptr, ".", nullptr, "1", "o", "\"",
    nullptr, nullptr, nullptr, "?",
    // C0
    "A", "A", "A", "A", "A", "A", "AE", "C", "E", "E", "E", "E", "I", "I", "I", "I",
    // D0
    "D", "N", "O", "O", "O", "O", "O", "x", "O", "U", "U", "U", "U", "Y", "Th", "ss",
    // E0
    "a", "a", "a", "a", "a", "a", "ae", "c", "e", "e", "e", "e", "i", "i", "i", "i",
    // F0
    "d", "n", "o", "o", "o", "o", "o", "/", "o", "u", "u", "u", "u", "y", "th", "y"};

// U+0100 .. U+017F.
constexpr std::array<const char*, 128> kLatinExtA = {
    "A", "a", "A", "a", "A", "a",                                // 0100
    "C", "c", "C", "c", "C", "c", "C", "c",                      // 0106
    "D", "d", "D", "d",                                          // 010E
    "E", "e", "E", "e", "E", "e", "E", "e", "E", "e",            // 0112
    "G", "g", "G", "g", "G", "g", "G", "g",                      // 011C
    "H", "h", "H", "h",                                          // 0124
    "I", "i", "I", "i", "I", "i", "I", "i", "I", "i",            // 0128
    "IJ", "ij", "J", "j", "K", "k", "k",                         // 0132
    "L", "l", "L", "l", "L", "l", "L", "l", "L", "l",            // 0139
    "N", "n", "N", "n", "N", "n", "'n", "N", "n",                // 0143
    "O", "o", "O", "o", "O", "o", "OE", "oe",                    // 014C
    "R", "r", "R", "r", "R", "r",                                // 0154
    "S", "s", "S", "s", "S", "s", "S", "s",                      // 015A
    "T", "t", "T", "t", "T", "t",                                // 0162
    "U", "u", "U", "u", "U", "u", "U", "u", "U", "u", "U", "u",  // 0168
    "W", "w", "Y", "y", "Y",                                     // 0174
    "Z", "z", "Z", "z", "Z", "z", "s"};                          // 0179

const char* transliterate(char32_t cp) {
  if (cp >= 0xA0 && cp <= 0xFF) return kLatin1[cp - 0xA0];
  if (cp >= 0x100 && cp <= 0x17F) return kLatinExtA[cp - 0x100];
  switch (cp) {
    case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032: return "'";
    case 0x201C: case 0x201D: case 0x201E: case 0x2033: return "\"";
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: case 0x2212: return "-";
    case 0x2026: return "...";
    case 0x2002: case 0x2003: case 0x2009: case 0x202F: return " ";
    default: return nullptr;
  }
}

// Decodes one UTF-8 sequence at s[i]; returns false on malformed input and
// advances i past the offending byte.
bool next_code_point(std::string_view s, std::size_t& i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 0;
  if (b0 < 0x80) {
    cp = b0;
    len = 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    len = 2;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    len = 3;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    len = 4;
  } else {
    ++i;
    return false;
  }
  if (i + len > s.size()) {
    ++i;
    return false;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) {
      ++i;
      return false;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += len;
  return true;
}

bool is_quote(char c) { return c == '"' || c == '\''; }

}  // namespace

std::string normalize_text(std::string_view raw, std::size_t* dropped) {
  std::string ascii;
  ascii.reserve(raw.size());
  std::size_t lost = 0;
  for (std::size_t i = 0; i < raw.size();) {
    char32_t cp = 0;
    if (!next_code_point(raw, i, cp)) {
      ++lost;
      continue;
    }
    if (cp < 0x80) {
      if (cp == '_' || cp == '\t' || cp == '\n' || cp == '\r') {
        ascii.push_back(' ');
      } else if (cp >= 0x20 && cp != 0x7F) {
        ascii.push_back(static_cast<char>(cp));
      }
      continue;
    }
    if (const char* t = transliterate(cp)) {
      ascii += t;
    } else {
      ++lost;
    }
  }

  // Collapse whitespace, then peel quotes that wrap the whole string.
  std::string out;
  out.reserve(ascii.size());
  for (char c : ascii) {
    if (c == ' ') {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  for (;;) {
    while (!out.empty() && out.back() == ' ') out.pop_back();
    std::size_t lead = 0;
    while (lead < out.size() && out[lead] == ' ') ++lead;
    out.erase(0, lead);
    if (out.size() >= 2 && is_quote(out.front()) && is_quote(out.back())) {
      out = out.substr(1, out.size() - 2);
      continue;
    }
    break;
  }
  if (dropped != nullptr) *dropped += lost;
  return out;
}

namespace {

bool is_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

bool is_punct_token(std::string_view t) {
  return !t.empty() && std::all_of(t.begin(), t.end(), is_punct);
}

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) {
    if (tokens::is_special(w) || is_punct_token(w)) {
      out.push_back(w);
      continue;
    }
    std::size_t end = w.size();
    while (end > 0 && is_punct(w[end - 1])) --end;
    out.push_back(w.substr(0, end));
    if (end < w.size()) out.push_back(w.substr(end));
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && !is_punct_token(w)) out += ' ';
    out += w;
  }
  return out;
}

// ---- graph <-> triples ------------------------------------------------------

void KnowledgeGraph::validate() const {
  std::set<std::string_view> seen;
  for (const auto& n : nodes) {
    if (n.empty()) throw DataError("knowledge graph: empty node string");
    if (!seen.insert(n).second) throw DataError("knowledge graph: duplicate node '" + n + "'");
  }
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& e : edges) {
    if (e.src >= nodes.size() || e.dst >= nodes.size()) {
      throw DataError("knowledge graph: edge index out of range");
    }
    if (e.src == e.dst) throw DataError("knowledge graph: self-edge on '" + nodes[e.src] + "'");
    if (!pairs.emplace(e.src, e.dst).second) {
      throw DataError("knowledge graph: two edges between '" + nodes[e.src] + "' and '" +
                      nodes[e.dst] + "'");
    }
  }
}

TripleSet graph_to_triples(const KnowledgeGraph& g) {
  TripleSet out;
  out.reserve(g.edges.size());
  for (const auto& e : g.edges) out.push_back({g.nodes.at(e.src), e.label, g.nodes.at(e.dst)});
  return out;
}

KnowledgeGraph triples_to_graph(const TripleSet& triples) {
  KnowledgeGraph g;
  std::unordered_map<std::string, std::size_t> index;
  auto node_id = [&](const std::string& name) {
    if (name.empty()) throw DataError("triple with empty subject or object");
    auto [it, inserted] = index.emplace(name, g.nodes.size());
    if (inserted) g.nodes.push_back(name);
    return it->second;
  };
  std::map<std::pair<std::size_t, std::size_t>, std::string> seen;
  for (const auto& t : triples) {
    const std::size_t s = node_id(t.subject);
    const std::size_t o = node_id(t.object);
    if (s == o) throw DataError("self-loop triple on '" + t.subject + "'");
    auto [it, inserted] = seen.emplace(std::make_pair(s, o), t.predicate);
    if (!inserted) {
      if (it->second != t.predicate) {
        throw DataError("conflicting predicates '" + it->second + "' and '" + t.predicate +
                        "' for (" + t.subject + ", " + t.object + ")");
      }
      continue;
    }
    g.edges.push_back({s, t.predicate, o});
  }
  return g;
}

// ---- node serialisation -----------------------------------------------------

std::vector<std::string> node_target_tokens(const std::vector<std::string>& nodes, std::size_t n_max) {
  if (nodes.size() > n_max) {
    throw CapacityError("graph has " + std::to_string(nodes.size()) + " nodes, capacity is " +
                        std::to_string(n_max));
  }
  std::vector<std::string> out;
  for (std::size_t k = 0; k < n_max; ++k) {
    if (k > 0) out.emplace_back(tokens::kNodeSep);
    if (k < nodes.size()) {
      for (auto& w : tokenize_words(nodes[k])) out.push_back(std::move(w));
    } else {
      out.emplace_back(tokens::kNoNode);
    }
  }
  out.emplace_back(tokens::kEos);
  return out;
}

std::string serialize_nodes(const KnowledgeGraph& g, std::size_t n_max) {
  std::string out(tokens::kPad);
  for (const auto& t : node_target_tokens(g.nodes, n_max)) {
    out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> SlotNodes::active_nodes() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (active[k]) out.push_back(slots[k]);
  }
  return out;
}

SlotNodes deserialize_nodes(std::string_view s, std::size_t n_max) {
  std::vector<std::vector<std::string>> segments(1);
  std::istringstream in{std::string(s)};
  for (std::string tok; in >> tok;) {
    if (tok == tokens::kEos) break;
    if (tok == tokens::kPad) continue;
    if (tok == tokens::kNodeSep) {
      segments.emplace_back();
      continue;
    }
    segments.back().push_back(tok);
  }

  SlotNodes out;
  out.slots.assign(n_max, std::string(tokens::kNoNode));
  out.active.assign(n_max, false);
  for (std::size_t k = 0; k < std::min(n_max, segments.size()); ++k) {
    std::vector<std::string> words;
    for (const auto& w : segments[k]) {
      if (!tokens::is_special(w)) words.push_back(w);
    }
    if (!words.empty()) {
      out.slots[k] = join_words(words);
      out.active[k] = true;
    }
  }
  return out;
}

// ---- adjacency ----------------------------------------------------------------

bool AdjacencyTargets::is_edge(std::size_t i, std::size_t j) const {
  return label(i, j) != tokens::kNoEdge;
}

std::size_t AdjacencyTargets::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::size_t AdjacencyTargets::edge_count() const {
  std::size_t c = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) c += labels[k] != tokens::kNoEdge;
  return c;
}

std::size_t AdjacencyTargets::masked_no_edge_count() const {
  std::size_t c = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) c += mask[k] && labels[k] == tokens::kNoEdge;
  return c;
}

std::vector<std::pair<std::size_t, std::size_t>> AdjacencyTargets::masked_cells() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (masked(i, j)) out.emplace_back(i, j);
    }
  }
  return out;
}

AdjacencyTargets build_adjacency(const KnowledgeGraph& g, std::size_t n_max,
                                 const std::vector<std::size_t>& slot_of_node) {
  if (slot_of_node.size() != g.nodes.size()) {
    throw DataError("build_adjacency: slot assignment covers " + std::to_string(slot_of_node.size()) +
                    " of " + std::to_string(g.nodes.size()) + " nodes");
  }
  AdjacencyTargets a;
  a.n = n_max;
  a.labels.assign(n_max * n_max, std::string(tokens::kNoEdge));
  a.mask.assign(n_max * n_max, false);
  a.active.assign(n_max, false);
  for (std::size_t slot : slot_of_node) {
    if (slot >= n_max) throw DataError("build_adjacency: slot " + std::to_string(slot) + " out of range");
    if (a.active[slot]) throw DataError("build_adjacency: slot " + std::to_string(slot) + " used twice");
    a.active[slot] = true;
  }
  for (std::size_t i = 0; i < n_max; ++i) {
    for (std::size_t j = 0; j < n_max; ++j) a.mask[i * n_max + j] = i != j && a.active[i] && a.active[j];
  }
  for (const auto& e : g.edges) {
    a.labels[slot_of_node.at(e.src) * n_max + slot_of_node.at(e.dst)] = e.label;
  }
  return a;
}

AdjacencyTargets build_adjacency(const KnowledgeGraph& g, std::size_t n_max) {
  std::vector<std::size_t> identity(g.nodes.size());
  for (std::size_t k = 0; k < identity.size(); ++k) identity[k] = k;
  return build_adjacency(g, n_max, identity);
}

AdjacencyTargets sparsify_adjacency(const AdjacencyTargets& a, std::size_t k_noedge, Rng& rng) {
  AdjacencyTargets out = a;
  std::vector<std::size_t> candidates;
  for (std::size_t c = 0; c < a.labels.size(); ++c) {
    if (a.mask[c] && a.labels[c] == tokens::kNoEdge) candidates.push_back(c);
  }
  const std::size_t keep = std::min(k_noedge, candidates.size());
  // Partial Fisher-Yates: the first `keep` entries become a uniform sample.
  for (std::size_t i = 0; i < keep; ++i) {
    std::swap(candidates[i], candidates[i + uniform_index(rng, candidates.size() - i)]);
  }
  for (std::size_t i = keep; i < candidates.size(); ++i) out.mask[candidates[i]] = false;
  return out;
}

KnowledgeGraph permute_nodes(const KnowledgeGraph& g, const std::vector<std::size_t>& order) {
  if (order.size() != g.nodes.size()) throw DataError("permute_nodes: order size mismatch");
  KnowledgeGraph out;
  std::vector<std::size_t> new_index(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.nodes.push_back(g.nodes.at(order[k]));
    new_index[order[k]] = k;
  }
  for (const auto& e : g.edges) out.edges.push_back({new_index[e.src], e.label, new_index[e.dst]});
  return out;
}

}  // namespace grapher
