#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nepgpt/config_file.hpp"

namespace nepgpt::cli {

inline constexpr const char* kSubcommands[] = {
    "clean", "train-tokenizer", "tokenize", "shard", "verify",
    "train", "eval",            "sample",   "self-test"};

// Everything needed to reproduce one invocation.
struct RunManifest {
  std::string subcommand;
  config::KeyValues config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::optional<std::uint64_t> seed;
  std::string toolkit_version = NEPGPT_VERSION;

  std::string config_hash() const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

// Runs one subcommand. `args` excludes the program name. Returns 0 on
// success, otherwise the error class: 1 usage, 2 data, 3 numeric, 4 io.
int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

}  // namespace nepgpt::cli
