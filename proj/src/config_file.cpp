#include "nepgpt/config_file.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/error.hpp"

namespace nepgpt::config {
namespace {

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw Error(ErrorCode::kConfigInvalid, "config key '" + key + "': '" +
                                             value + "' is not " + expected);
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  if (v.empty()) bad_value(key, v, "a number");
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kConfigInvalid,
                  "config line " + std::to_string(line_no) +
                      " is not key=value: " + std::string(line));
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw Error(ErrorCode::kConfigInvalid,
                  "config line " + std::to_string(line_no) + " has no key");
    }
    if (kv.count(key)) {
      throw Error(ErrorCode::kConfigInvalid,
                  "config key '" + key + "' set twice");
    }
    kv.emplace(std::move(key), std::move(value));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_file(path));
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t config_hash(const KeyValues& kv) {
  return fnv1a64(format_key_values(kv));
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void Binder::bind(const std::string& key, bool& field) {
  entries_[key] = {
      [&field, key](const std::string& v) {
        if (v == "true" || v == "1") {
          field = true;
        } else if (v == "false" || v == "0") {
          field = false;
        } else {
          bad_value(key, v, "true or false");
        }
      },
      [&field] { return std::string(field ? "true" : "false"); }};
}

void Binder::bind(const std::string& key, std::size_t& field) {
  entries_[key] = {[&field, key](const std::string& v) {
                     field = static_cast<std::size_t>(parse_unsigned(key, v));
                   },
                   [&field] { return std::to_string(field); }};
}

void Binder::bind(const std::string& key, double& field) {
  entries_[key] = {
      [&field, key](const std::string& v) { field = parse_double(key, v); },
      [&field] { return format_double(field); }};
}

void Binder::bind(const std::string& key, float& field) {
  entries_[key] = {[&field, key](const std::string& v) {
                     field = static_cast<float>(parse_double(key, v));
                   },
                   [&field] { return format_double(field); }};
}

void Binder::bind(const std::string& key, std::string& field) {
  entries_[key] = {[&field](const std::string& v) { field = v; },
                   [&field] { return field; }};
}

void Binder::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) apply(k, v);
}

void Binder::apply(const std::string& key, const std::string& value) {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw Error(ErrorCode::kUnknownConfigKey,
                "unknown config key '" + key + "'");
  }
  it->second.set(value);
}

KeyValues Binder::resolved() const {
  KeyValues kv;
  for (const auto& [k, e] : entries_) kv[k] = e.get();
  return kv;
}

}  // namespace nepgpt::config
