#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nepgpt::corpus {

struct CodepointRange {
  char32_t first;
  char32_t last;  // inclusive
};

enum class DigitPolicy { kKeepAscii, kMapToDevanagari, kDrop };
enum class DedupScope { kExactLine, kExactDocument };

struct CleanConfig {
  // Sorted, disjoint. ASCII digits are governed by `digit_policy`, not by
  // these ranges.
  std::vector<CodepointRange> keep_ranges = default_keep_ranges();
  DigitPolicy digit_policy = DigitPolicy::kMapToDevanagari;
  std::size_t min_sentence_chars = 12;
  std::size_t max_sentence_chars = 8192;
  DedupScope dedup_scope = DedupScope::kExactLine;
  // Drop short lines lacking sentence-final punctuation. Off by default.
  bool drop_fragments = false;
  std::size_t fragment_max_chars = 48;

  // Newline, space, the Devanagari block (danda and double danda included)
  // and Devanagari Extended.
  static std::vector<CodepointRange> default_keep_ranges();

  // Throws ConfigInvalid when an invariant does not hold.
  void validate() const;
};

struct DocRecord {
  std::string source_id;
  std::string text;
  std::size_t line_count = 0;
  std::size_t char_count = 0;

  static DocRecord from_text(std::string source_id, std::string text);
};

struct CorpusStats {
  std::uint64_t input_bytes = 0;
  std::uint64_t output_bytes = 0;
  std::uint64_t lines_in = 0;
  std::uint64_t lines_out = 0;
  std::uint64_t duplicates_removed = 0;
  std::uint64_t docs_dropped = 0;

  bool operator==(const CorpusStats&) const = default;
};

// True when `cp` may appear in cleaned output under `cfg`.
bool is_permitted(char32_t cp, const CleanConfig& cfg);

// Canonical composition (NFC).
std::string normalize_nfc(std::string_view text);

// Markup, script/style blocks, entities, URLs and Latin-script words are
// removed; remaining codepoints outside the keep set are dropped; whitespace
// is collapsed per line and empty lines disappear. Output is NFC.
std::string clean_text(std::string_view raw, const CleanConfig& cfg);

// Heuristic for "incomplete fragment" lines; see CleanConfig::drop_fragments.
bool is_fragment(std::string_view line, const CleanConfig& cfg);

std::pair<std::vector<DocRecord>, CorpusStats> dedup_corpus(
    const std::vector<DocRecord>& docs, const CleanConfig& cfg);

std::string corpus_report(const CorpusStats& stats);

std::string stats_csv(const CorpusStats& stats);

struct CleanResult {
  std::vector<DocRecord> docs;
  CorpusStats stats;
};

// Reads every regular file below `dir` (sorted by path), cleans files in
// parallel on `threads` workers, then deduplicates in file order. The result
// is identical for any thread count. `input_bytes` counts raw file bytes.
CleanResult clean_directory(const std::filesystem::path& dir,
                            const CleanConfig& cfg, unsigned threads = 1);

void write_corpus(const std::filesystem::path& path,
                  const std::vector<DocRecord>& docs);

}  // namespace nepgpt::corpus
