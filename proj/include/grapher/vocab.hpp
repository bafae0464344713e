// SPDX-License-Identifier: Apache-2.0

#ifndef GRAPHER_VOCAB_HPP
#define GRAPHER_VOCAB_HPP

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grapher/corpus.hpp"

namespace grapher {

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kNodeSep = 2;
  static constexpr int kNoNode = 3;
  static constexpr int kNoEdge = 4;
  static constexpr int kUnk = 5;
  static constexpr int kSpecialCount = 6;

  /// Specials only.
  Vocab();
  /// Specials followed by `tokens` in the given order (checkpoint restore).
  explicit Vocab(const std::vector<std::string>& tokens);

  std::size_t size() const { return token_of_.size(); }
  int id_of(std::string_view token) const;
  const std::string& token_of(int id) const { return token_of_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view token) const;
  /// Non-special tokens in id order.
  std::vector<std::string> ordinary_tokens() const;

  std::vector<int> encode(std::string_view text, std::size_t* oov = nullptr) const;
  /// Special ids are skipped; punctuation tokens attach to the previous word.
  std::string decode(std::span<const int> ids) const;

  bool operator==(const Vocab& other) const { return token_of_ == other.token_of_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> token_of_;
  std::unordered_map<std::string, int> id_of_;
};

/// Texts, node strings and relation labels, counted over whitespace tokens;
/// specials first, then descending frequency, ties in byte order.
Vocab build_vocab(const std::vector<Example>& corpus);

}  // namespace grapher

#endif  // GRAPHER_VOCAB_HPP
