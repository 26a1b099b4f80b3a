#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nepgpt/model.hpp"

namespace nepgpt::checkpoint {

inline constexpr char kCheckpointMagic[4] = {'G', 'P', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct NamedArray {
  std::string name;
  tensor::Shape shape;
  std::vector<float> data;

  bool operator==(const NamedArray&) const = default;
};

// Container layout (little-endian):
//   "GPTC" | u32 version
//   | config: u32 n_layer, n_head, d_model, vocab_size, seq_len; u8 tie; f32 dropout
//   | u32 n_meta, then (u32 len + key, u32 len + value) per entry
//   | u32 n_arrays, then per array: u32 len + name, u32 rank, u64 dims[rank],
//     f32 values[product(dims)]
//   | u64 FNV-1a checksum of every preceding byte
struct Checkpoint {
  model::GptConfig config;
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// Appends every model parameter as a named array.
void add_params(Checkpoint& ckpt, const model::GptParams<float>& params);
// Rebuilds parameters from the arrays named like GptParams::named().
model::GptParams<float> params_from(const Checkpoint& ckpt);

}  // namespace nepgpt::checkpoint
