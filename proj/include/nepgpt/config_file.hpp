#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nepgpt::config {

// Flat key=value settings. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);
// One "key=value" line per entry, in key order.
std::string format_key_values(const KeyValues& kv);
// FNV-1a over format_key_values(kv).
std::uint64_t config_hash(const KeyValues& kv);
std::string hash_hex(std::uint64_t hash);

// Binds config keys to typed fields. apply() rejects unknown keys and values
// that do not parse; resolved() renders every bound field back to text.
class Binder {
 public:
  void bind(const std::string& key, bool& field);
  void bind(const std::string& key, std::size_t& field);
  void bind(const std::string& key, double& field);
  void bind(const std::string& key, float& field);
  void bind(const std::string& key, std::string& field);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void apply(const KeyValues& kv);
  void apply(const std::string& key, const std::string& value);
  KeyValues resolved() const;

 private:
  struct Entry {
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };
  std::map<std::string, Entry> entries_;
};

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace nepgpt::config
