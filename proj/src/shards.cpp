#include "nepgpt/shards.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/error.hpp"

namespace nepgpt::shards {
namespace {

class MappedFile {
 public:
  explicit MappedFile(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) {
      throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
    }
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::kIoFailure, "cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw Error(ErrorCode::kIoFailure, "cannot map " + path.string());
      }
      data_ = static_cast<const unsigned char*>(p);
    }
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile() {
    if (data_) ::munmap(const_cast<unsigned char*>(data_), size_);
    if (fd_ >= 0) ::close(fd_);
  }

  std::string_view bytes() const {
    return {reinterpret_cast<const char*>(data_), size_};
  }

 private:
  int fd_ = -1;
  const unsigned char* data_ = nullptr;
  std::size_t size_ = 0;
};

TokenId load_token(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

ShardHeader verify_bytes(std::string_view bytes) {
  if (bytes.size() < kShardHeaderBytes) {
    throw CorruptShardError(bytes.size(), "file shorter than shard header");
  }
  if (bytes.substr(0, 4) != std::string_view(kShardMagic, 4)) {
    throw CorruptShardError(0, "bad shard magic");
  }
  ByteReader r(bytes.substr(4, kShardHeaderBytes - 4), ErrorCode::kCorruptShard);
  ShardHeader h;
  h.version = r.get<std::uint32_t>();
  h.token_count = r.get<std::uint64_t>();
  h.dtype_code = r.get<std::uint8_t>();
  h.vocab_size = r.get<std::uint32_t>();
  if (h.version != kShardFormatVersion) {
    throw Error(ErrorCode::kFormatVersionMismatch,
                "shard format version " + std::to_string(h.version) +
                    ", expected " + std::to_string(kShardFormatVersion));
  }
  if (h.dtype_code != kDtypeU16) {
    throw CorruptShardError(16, "unsupported dtype code " +
                                    std::to_string(h.dtype_code));
  }
  const std::uint64_t payload_end = kShardHeaderBytes + 2 * h.token_count;
  const std::uint64_t expected = payload_end + 8;
  if (h.token_count > bytes.size() || bytes.size() != expected) {
    throw CorruptShardError(std::min<std::uint64_t>(bytes.size(), expected),
                            "file size " + std::to_string(bytes.size()) +
                                " does not match token_count " +
                                std::to_string(h.token_count));
  }
  auto payload = reinterpret_cast<const unsigned char*>(bytes.data()) +
                 kShardHeaderBytes;
  for (std::uint64_t i = 0; i < h.token_count; ++i) {
    TokenId t = load_token(payload + 2 * i);
    if (t >= h.vocab_size) {
      throw CorruptShardError(kShardHeaderBytes + 2 * i,
                              "token " + std::to_string(t) +
                                  " >= vocab_size " +
                                  std::to_string(h.vocab_size));
    }
  }
  ByteReader trailer(bytes.substr(payload_end), ErrorCode::kCorruptShard);
  h.checksum = trailer.get<std::uint64_t>();
  if (h.checksum != fnv1a64(bytes.substr(0, payload_end))) {
    throw CorruptShardError(payload_end, "checksum mismatch");
  }
  return h;
}

}  // namespace

std::string shard_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shard_%06zu.bin", index);
  return buf;
}

ShardWriter::ShardWriter(std::filesystem::path out_dir,
                         std::uint64_t shard_tokens, std::uint32_t vocab_size)
    : out_dir_(std::move(out_dir)),
      shard_tokens_(shard_tokens),
      vocab_size_(vocab_size) {
  if (shard_tokens_ == 0) {
    throw Error(ErrorCode::kConfigInvalid, "shard_tokens must be positive");
  }
  if (vocab_size_ == 0 || vocab_size_ > 65536) {
    throw Error(ErrorCode::kConfigInvalid,
                "vocab_size must be in [1, 65536] for 16-bit shards");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir_, ec);
  if (ec) {
    throw Error(ErrorCode::kIoFailure,
                "cannot create directory " + out_dir_.string());
  }
}

void ShardWriter::push(std::span<const TokenId> ids) {
  for (TokenId id : ids) {
    if (id >= vocab_size_) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "token " + std::to_string(id) + " >= vocab_size " +
                      std::to_string(vocab_size_));
    }
    pending_.push_back(id);
    ++total_;
    if (pending_.size() == shard_tokens_) flush();
  }
}

void ShardWriter::flush() {
  if (pending_.empty()) return;
  ShardHeader h;
  h.token_count = pending_.size();
  h.vocab_size = vocab_size_;
  ByteWriter w;
  w.buffer().reserve(kShardHeaderBytes + 2 * pending_.size() + 8);
  w.put_bytes(std::string_view(kShardMagic, 4));
  w.put<std::uint32_t>(h.version);
  w.put<std::uint64_t>(h.token_count);
  w.put<std::uint8_t>(h.dtype_code);
  w.put<std::uint32_t>(h.vocab_size);
  for (TokenId t : pending_) w.put<std::uint16_t>(t);
  h.checksum = fnv1a64(w.buffer());
  w.put<std::uint64_t>(h.checksum);
  auto path = out_dir_ / shard_file_name(written_.size());
  write_file_atomic(path, w.buffer());
  written_.push_back({path, h});
  pending_.clear();
}

std::vector<ShardFile> ShardWriter::finish() {
  flush();
  return written_;
}

std::vector<ShardFile> write_shards(std::span<const TokenId> ids,
                                    std::uint64_t shard_tokens,
                                    const std::filesystem::path& out_dir,
                                    std::uint32_t vocab_size) {
  if (ids.empty()) {
    throw Error(ErrorCode::kCorpusTooSmall, "no tokens to shard");
  }
  ShardWriter writer(out_dir, shard_tokens, vocab_size);
  writer.push(ids);
  return writer.finish();
}

ShardHeader verify_shard(const std::filesystem::path& path) {
  MappedFile file(path);
  return verify_bytes(file.bytes());
}

std::vector<TokenId> read_shard(const std::filesystem::path& path) {
  MappedFile file(path);
  ShardHeader h = verify_bytes(file.bytes());
  std::vector<TokenId> out(h.token_count);
  if (h.token_count > 0) {
    std::memcpy(out.data(), file.bytes().data() + kShardHeaderBytes,
                2 * h.token_count);
  }
  return out;
}

std::vector<std::filesystem::path> list_shards(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::kIoFailure, "not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("shard_") &&
        name.ends_with(".bin")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetSplit::DatasetSplit(std::vector<std::filesystem::path> shard_paths,
                           SplitRole role)
    : role_(role), paths_(std::move(shard_paths)) {
  for (const auto& p : paths_) {
    auto file = std::make_shared<MappedFile>(p);
    ShardHeader h = verify_bytes(file->bytes());
    if (vocab_size_ != 0 && h.vocab_size != vocab_size_) {
      throw Error(ErrorCode::kVocabMismatch,
                  p.string() + " has vocab_size " +
                      std::to_string(h.vocab_size) + ", other shards have " +
                      std::to_string(vocab_size_));
    }
    vocab_size_ = h.vocab_size;
    Segment seg;
    seg.payload = reinterpret_cast<const unsigned char*>(file->bytes().data()) +
                  kShardHeaderBytes;
    seg.count = h.token_count;
    seg.owner = std::move(file);
    add_segment(std::move(seg));
  }
}

DatasetSplit DatasetSplit::from_tokens(std::vector<TokenId> tokens,
                                       std::uint32_t vocab_size,
                                       SplitRole role) {
  for (TokenId t : tokens) {
    if (t >= vocab_size) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "token " + std::to_string(t) + " >= vocab_size " +
                      std::to_string(vocab_size));
    }
  }
  DatasetSplit split;
  split.role_ = role;
  split.vocab_size_ = vocab_size;
  auto owned = std::make_shared<std::vector<TokenId>>(std::move(tokens));
  Segment seg;
  seg.payload = reinterpret_cast<const unsigned char*>(owned->data());
  seg.count = owned->size();
  seg.owner = std::move(owned);
  split.add_segment(std::move(seg));
  return split;
}

void DatasetSplit::add_segment(Segment seg) {
  if (seg.count == 0) return;
  starts_.push_back(total_);
  total_ += seg.count;
  segments_.push_back(std::move(seg));
}

void DatasetSplit::copy_tokens(std::uint64_t offset,
                               std::span<TokenId> out) const {
  if (offset + out.size() > total_) {
    throw Error(ErrorCode::kSplitEmpty, "read past the end of the split");
  }
  auto it = std::upper_bound(starts_.begin(), starts_.end(), offset);
  std::size_t seg = static_cast<std::size_t>(it - starts_.begin()) - 1;
  std::size_t written = 0;
  while (written < out.size()) {
    const Segment& s = segments_[seg];
    std::uint64_t local = offset + written - starts_[seg];
    std::size_t n = static_cast<std::size_t>(
        std::min<std::uint64_t>(s.count - local, out.size() - written));
    std::memcpy(out.data() + written, s.payload + 2 * local, 2 * n);
    written += n;
    ++seg;
  }
}

SplitPair split_dataset(std::vector<std::filesystem::path> shard_paths,
                        double val_fraction,
                        std::optional<std::uint64_t> shuffle_seed) {
  if (shard_paths.size() < 2) {
    throw Error(ErrorCode::kSplitEmpty,
                "need at least two shards to form train and val splits, got " +
                    std::to_string(shard_paths.size()));
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "val_fraction must be in (0, 1)");
  }
  std::sort(shard_paths.begin(), shard_paths.end());
  const std::size_t n = shard_paths.size();
  std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(n * val_fraction)));
  n_val = std::min(n_val, n - 1);
  std::vector<std::filesystem::path> train(shard_paths.begin(),
                                           shard_paths.end() - n_val);
  std::vector<std::filesystem::path> val(shard_paths.end() - n_val,
                                         shard_paths.end());
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(train.begin(), train.end(), rng);
  }
  return {DatasetSplit(std::move(train), SplitRole::kTrain),
          DatasetSplit(std::move(val), SplitRole::kVal)};
}

std::pair<Batch, Cursor> next_batch(const DatasetSplit& split, Cursor cursor,
                                    std::size_t micro_batch,
                                    std::size_t seq_len) {
  if (seq_len == 0 || micro_batch == 0) {
    throw Error(ErrorCode::kConfigInvalid,
                "micro_batch and seq_len must be positive");
  }
  if (split.token_count() < seq_len + 1) {
    throw Error(ErrorCode::kSplitEmpty,
                "split holds " + std::to_string(split.token_count()) +
                    " tokens, fewer than one window of " +
                    std::to_string(seq_len + 1));
  }
  Batch batch;
  batch.micro_batch = micro_batch;
  batch.seq_len = seq_len;
  batch.inputs.resize(micro_batch * seq_len);
  batch.targets.resize(micro_batch * seq_len);
  std::vector<TokenId> window(seq_len + 1);
  for (std::size_t b = 0; b < micro_batch; ++b) {
    if (cursor.offset + seq_len + 1 > split.token_count()) {
      cursor.epoch += 1;
      cursor.offset = 0;
    }
    split.copy_tokens(cursor.offset, window);
    std::copy(window.begin(), window.end() - 1,
              batch.inputs.begin() + b * seq_len);
    std::copy(window.begin() + 1, window.end(),
              batch.targets.begin() + b * seq_len);
    cursor.offset += seq_len;
  }
  return {std::move(batch), cursor};
}

std::uint64_t steps_per_epoch(std::uint64_t total_tokens,
                              std::uint64_t micro_batch,
                              std::uint64_t grad_accum, std::uint64_t seq_len) {
  std::uint64_t per_step = micro_batch * grad_accum * seq_len;
  if (per_step == 0) {
    throw Error(ErrorCode::kConfigInvalid, "tokens per step must be positive");
  }
  return total_tokens / per_step;
}

}  // namespace nepgpt::shards
