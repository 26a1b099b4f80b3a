#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nepgpt/tokenizer.hpp"

namespace nepgpt::shards {

using tokenizer::TokenId;

inline constexpr char kShardMagic[4] = {'N', 'P', 'S', 'H'};
inline constexpr std::uint32_t kShardFormatVersion = 1;
inline constexpr std::uint8_t kDtypeU16 = 0;
// magic, version, token_count, dtype_code, vocab_size
inline constexpr std::size_t kShardHeaderBytes = 4 + 4 + 8 + 1 + 4;

// On disk the checksum trails the payload and covers header + payload.
struct ShardHeader {
  std::uint32_t version = kShardFormatVersion;
  std::uint64_t token_count = 0;
  std::uint8_t dtype_code = kDtypeU16;
  std::uint32_t vocab_size = 0;
  std::uint64_t checksum = 0;

  bool operator==(const ShardHeader&) const = default;
};

struct ShardFile {
  std::filesystem::path path;
  ShardHeader header;
};

// Streams tokens into consecutive shard files of exactly `shard_tokens`
// tokens each (the last one may be shorter).
class ShardWriter {
 public:
  ShardWriter(std::filesystem::path out_dir, std::uint64_t shard_tokens,
              std::uint32_t vocab_size);

  void push(std::span<const TokenId> ids);
  void push(TokenId id) { push(std::span<const TokenId>(&id, 1)); }
  // Writes the pending partial shard and returns every shard written.
  std::vector<ShardFile> finish();

  std::uint64_t tokens_written() const { return total_; }

 private:
  void flush();

  std::filesystem::path out_dir_;
  std::uint64_t shard_tokens_;
  std::uint32_t vocab_size_;
  std::vector<TokenId> pending_;
  std::vector<ShardFile> written_;
  std::uint64_t total_ = 0;
};

std::string shard_file_name(std::size_t index);

std::vector<ShardFile> write_shards(std::span<const TokenId> ids,
                                    std::uint64_t shard_tokens,
                                    const std::filesystem::path& out_dir,
                                    std::uint32_t vocab_size);

// Validates magic, version, dtype, size, every token against vocab_size and
// the checksum. Throws CorruptShardError / FormatVersionMismatch.
ShardHeader verify_shard(const std::filesystem::path& path);

std::vector<TokenId> read_shard(const std::filesystem::path& path);

// Shard files in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_shards(const std::filesystem::path& dir);

enum class SplitRole { kTrain, kVal };

// An ordered set of shards read as one contiguous token stream.
class DatasetSplit {
 public:
  DatasetSplit(std::vector<std::filesystem::path> shard_paths, SplitRole role);

  // In-memory stream, mainly for tests and small experiments.
  static DatasetSplit from_tokens(std::vector<TokenId> tokens,
                                  std::uint32_t vocab_size, SplitRole role);

  SplitRole role() const { return role_; }
  const std::vector<std::filesystem::path>& shard_paths() const {
    return paths_;
  }
  std::uint64_t token_count() const { return total_; }
  std::uint32_t vocab_size() const { return vocab_size_; }

  // Copies tokens [offset, offset + out.size()) of the concatenated stream.
  void copy_tokens(std::uint64_t offset, std::span<TokenId> out) const;

 private:
  struct Segment {
    std::shared_ptr<const void> owner;
    const unsigned char* payload = nullptr;
    std::uint64_t count = 0;
  };

  DatasetSplit() = default;
  void add_segment(Segment seg);

  SplitRole role_ = SplitRole::kTrain;
  std::vector<std::filesystem::path> paths_;
  std::vector<Segment> segments_;
  std::vector<std::uint64_t> starts_;
  std::uint64_t total_ = 0;
  std::uint32_t vocab_size_ = 0;
};

struct SplitPair {
  DatasetSplit train;
  DatasetSplit val;
};

// The last max(1, round(n * val_fraction)) shards by file name become the
// validation split. With `shuffle_seed`, the training shards are visited in
// a seeded permutation.
SplitPair split_dataset(std::vector<std::filesystem::path> shard_paths,
                        double val_fraction = 0.01,
                        std::optional<std::uint64_t> shuffle_seed = {});

struct Cursor {
  std::uint64_t epoch = 0;
  std::uint64_t offset = 0;

  bool operator==(const Cursor&) const = default;
};

// Row-major [micro_batch x seq_len]; targets are inputs shifted by one.
struct Batch {
  std::size_t micro_batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};

// Serves micro_batch consecutive windows of seq_len + 1 tokens. A window that
// would run past the end of the stream starts a new epoch at offset 0.
std::pair<Batch, Cursor> next_batch(const DatasetSplit& split, Cursor cursor,
                                    std::size_t micro_batch,
                                    std::size_t seq_len);

std::uint64_t steps_per_epoch(std::uint64_t total_tokens,
                              std::uint64_t micro_batch,
                              std::uint64_t grad_accum, std::uint64_t seq_len);

}  // namespace nepgpt::shards
