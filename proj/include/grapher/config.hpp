// SPDX-License-Identifier: Apache-2.0

#ifndef GRAPHER_CONFIG_HPP
#define GRAPHER_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace grapher {

/// Flat `key = value` text; '#' starts a comment line. Keys keep file order,
/// a repeated key replaces the earlier value in place.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::string dump() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace grapher

#endif  // GRAPHER_CONFIG_HPP
