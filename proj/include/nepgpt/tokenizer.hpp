#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nepgpt::tokenizer {

using TokenId = std::uint16_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kNumBytePieces = 256;

// Word-boundary marker carried at the front of every word (U+2581).
inline constexpr char32_t kSpaceMarker = 0x2581;
inline constexpr std::string_view kSpaceMarkerUtf8 = "\xe2\x96\x81";

struct TokenizerConfig {
  std::size_t vocab_size = 16384;
  std::size_t sample_chars = 8'000'000;
  std::size_t max_sentence_chars = 8192;
  double character_coverage = 0.9995;
  std::vector<std::string> special_tokens = {"<pad>", "<unk>", "<s>", "</s>"};

  void validate() const;
};

enum class PieceKind : std::uint8_t { kSpecial, kByte, kCharacter, kMerged };

// Piece layout: special tokens, then the 256 byte pieces, then single
// characters, then one piece per merge in rank order.
class BpeVocab {
 public:
  BpeVocab() = default;
  BpeVocab(std::vector<std::string> pieces, std::size_t num_special,
           std::vector<std::pair<TokenId, TokenId>> merges);

  std::size_t size() const { return pieces_.size(); }
  std::size_t num_special() const { return num_special_; }
  std::size_t num_characters() const { return first_merged_ - first_char_; }
  const std::string& piece(TokenId id) const { return pieces_.at(id); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const {
    return merges_;
  }
  PieceKind kind(TokenId id) const;

  TokenId byte_piece(std::uint8_t b) const {
    return static_cast<TokenId>(num_special_ + b);
  }
  // Id of the single-character piece for `cp`, or -1.
  int char_piece(char32_t cp) const;

  struct MergeEntry {
    std::uint32_t rank;
    TokenId result;
  };
  // Merge for the adjacent pair (left, right), or nullptr.
  const MergeEntry* find_merge(TokenId left, TokenId right) const;

  bool operator==(const BpeVocab& other) const {
    return pieces_ == other.pieces_ && merges_ == other.merges_ &&
           num_special_ == other.num_special_;
  }

 private:
  std::vector<std::string> pieces_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::size_t num_special_ = 0;
  std::size_t first_char_ = 0;
  std::size_t first_merged_ = 0;
  std::unordered_map<char32_t, TokenId> char_ids_;
  std::unordered_map<std::uint32_t, MergeEntry> merge_index_;
};

// Diagnostics from one training run.
struct TrainReport {
  std::size_t corpus_chars = 0;
  std::size_t sampled_chars = 0;
  std::size_t sampled_lines = 0;
  std::size_t stride = 1;
  bool sample_short = false;
  std::size_t covered_characters = 0;
  std::size_t distinct_characters = 0;
  // Pair frequency at the moment each merge was selected, in rank order.
  std::vector<std::int64_t> merge_frequencies;
};

// Calls the visitor once per corpus line, in order. Must be repeatable: the
// trainer walks the corpus twice (count, then sample).
using LineSource =
    std::function<void(const std::function<void(std::string_view)>&)>;

BpeVocab train_bpe(const LineSource& corpus, const TokenizerConfig& cfg,
                   std::uint64_t seed, TrainReport* report = nullptr);
BpeVocab train_bpe(std::span<const std::string> lines,
                   const TokenizerConfig& cfg, std::uint64_t seed,
                   TrainReport* report = nullptr);
BpeVocab train_bpe_file(const std::filesystem::path& path,
                        const TokenizerConfig& cfg, std::uint64_t seed,
                        TrainReport* report = nullptr);

std::vector<TokenId> encode(std::string_view text, const BpeVocab& vocab,
                            bool add_bos = false, bool add_eos = false);

struct DecodeDiagnostics {
  bool malformed_bytes = false;
};

// Special tokens render as empty strings. Throws InvalidId for ids outside
// the vocabulary.
std::string decode(std::span<const TokenId> ids, const BpeVocab& vocab,
                   DecodeDiagnostics* diagnostics = nullptr);

// Display form of each piece (word markers kept, bytes as <0xNN>).
std::vector<std::string> segment(std::string_view text, const BpeVocab& vocab);

inline constexpr std::uint32_t kVocabFormatVersion = 1;

std::string serialize_vocab(const BpeVocab& vocab);
BpeVocab deserialize_vocab(std::string_view bytes);
void save_vocab(const BpeVocab& vocab, const std::filesystem::path& path);
BpeVocab load_vocab(const std::filesystem::path& path);

}  // namespace nepgpt::tokenizer
