// SPDX-License-Identifier: Apache-2.0

#include "grapher/vocab.hpp"

#include <algorithm>
#include <map>

namespace grapher {

Vocab::Vocab() {
  for (auto t : {tokens::kPad, tokens::kEos, tokens::kNodeSep, tokens::kNoNode, tokens::kNoEdge,
                 tokens::kUnk}) {
    add(std::string(t));
  }
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
  for (const auto& t : tokens) {
    if (contains(t)) throw DataError("vocab: duplicate token '" + t + "'");
    add(t);
  }
}

void Vocab::add(const std::string& token) {
  id_of_.emplace(token, static_cast<int>(token_of_.size()));
  token_of_.push_back(token);
}

int Vocab::id_of(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  return it == id_of_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return id_of_.count(std::string(token)) > 0; }

std::vector<std::string> Vocab::ordinary_tokens() const {
  return {token_of_.begin() + kSpecialCount, token_of_.end()};
}

std::vector<int> Vocab::encode(std::string_view text, std::size_t* oov) const {
  std::vector<int> ids;
  for (const auto& w : tokenize_words(text)) {
    auto it = id_of_.find(w);
    // Ordinary text never maps onto a special id, even if it spells one.
    if (it == id_of_.end() || tokens::is_special(w)) {
      ids.push_back(kUnk);
      if (oov != nullptr) ++*oov;
    } else {
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id < kSpecialCount || static_cast<std::size_t>(id) >= size()) continue;
    words.push_back(token_of_[static_cast<std::size_t>(id)]);
  }
  return join_words(words);
}

Vocab build_vocab(const std::vector<Example>& corpus) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  auto count = [&](std::string_view s) {
    for (auto& w : tokenize_words(s)) {
      if (!tokens::is_special(w)) ++freq[w];
    }
  };
  for (const auto& ex : corpus) {
    count(ex.text);
    for (const auto& n : ex.graph.nodes) count(n);
    for (const auto& e : ex.graph.edges) count(e.label);
  }
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ordered;
  ordered.reserve(items.size());
  for (auto& [t, _] : items) ordered.push_back(t);
  return Vocab(ordered);
}

}  // namespace grapher
