#include "nepgpt/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/error.hpp"
#include "nepgpt/utf8.hpp"

namespace nepgpt::tokenizer {
namespace {

constexpr char kVocabMagic[4] = {'B', 'P', 'E', 'V'};
// Stands in for a literal U+2581 in training text; never gets a piece.
constexpr char32_t kLiteralMarker = 0xFFFFFFFF;

std::uint32_t pair_key32(TokenId a, TokenId b) {
  return (static_cast<std::uint32_t>(a) << 16) | b;
}

std::string byte_piece_text(std::uint8_t b) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
  return buf;
}

// Cuts at the last space before `max_chars` code points, or hard at the limit
// when the prefix has no space.
std::u32string_view truncate_sentence(std::u32string_view line,
                                      std::size_t max_chars) {
  if (line.size() <= max_chars) return line;
  auto cut = line.substr(0, max_chars).find_last_of(U' ');
  if (cut == std::u32string_view::npos || cut == 0) {
    return line.substr(0, max_chars);
  }
  return line.substr(0, cut);
}

// "▁" + line, spaces replaced by the marker, literal markers escaped.
std::u32string marked(std::u32string_view line) {
  std::u32string out;
  out.reserve(line.size() + 1);
  out.push_back(kSpaceMarker);
  for (char32_t cp : line) {
    if (cp == U' ') {
      out.push_back(kSpaceMarker);
    } else if (cp == kSpaceMarker) {
      out.push_back(kLiteralMarker);
    } else {
      out.push_back(cp);
    }
  }
  return out;
}

struct Word {
  std::vector<std::int32_t> symbols;  // piece id, or -1 for an uncovered char
  std::vector<std::uint32_t> offsets;  // code point offset of each symbol
  std::int64_t count = 0;
  std::uint64_t first_pos = 0;
};

std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}
std::int32_t key_left(std::uint64_t k) { return static_cast<std::int32_t>(k >> 32); }
std::int32_t key_right(std::uint64_t k) {
  return static_cast<std::int32_t>(k & 0xFFFFFFFFu);
}

struct PairStat {
  std::int64_t count = 0;
  std::set<std::uint32_t> words;  // ordered: begin() is the earliest word
};

class MergeTrainer {
 public:
  MergeTrainer(std::vector<Word> words, std::vector<std::string>& pieces,
               std::vector<std::pair<TokenId, TokenId>>& merges,
               std::size_t target_size, TrainReport& report)
      : words_(std::move(words)),
        pieces_(pieces),
        merges_(merges),
        target_size_(target_size),
        report_(report) {
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      piece_index_.emplace(pieces_[i], static_cast<TokenId>(i));
    }
    for (std::uint32_t w = 0; w < words_.size(); ++w) {
      std::vector<std::uint64_t> touched;
      add_word(w, touched);
    }
    for (auto& [key, stat] : stats_) heap_.emplace(stat.count, key);
  }

  void run() {
    while (pieces_.size() < target_size_) {
      auto best = select_best();
      if (!best) {
        throw Error(ErrorCode::kCorpusTooSmall,
                    "sample ran out of mergeable pairs at " +
                        std::to_string(pieces_.size()) + " of " +
                        std::to_string(target_size_) + " pieces");
      }
      auto [key, count] = *best;
      std::int32_t left = key_left(key), right = key_right(key);
      std::string text = pieces_[left] + pieces_[right];
      if (piece_index_.count(text)) {
        // Another merge path already produced this string.
        excluded_.insert(key);
        continue;
      }
      auto id = static_cast<std::int32_t>(pieces_.size());
      pieces_.push_back(text);
      piece_index_.emplace(std::move(text), static_cast<TokenId>(id));
      merges_.emplace_back(static_cast<TokenId>(left),
                           static_cast<TokenId>(right));
      report_.merge_frequencies.push_back(count);
      apply(key, id);
    }
  }

 private:
  void add_word(std::uint32_t w, std::vector<std::uint64_t>& touched) {
    const Word& word = words_[w];
    for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i) {
      if (word.symbols[i] < 0 || word.symbols[i + 1] < 0) continue;
      auto key = pair_key(word.symbols[i], word.symbols[i + 1]);
      auto& stat = stats_[key];
      stat.count += word.count;
      stat.words.insert(w);
      touched.push_back(key);
    }
  }

  void remove_word(std::uint32_t w, std::vector<std::uint64_t>& touched) {
    const Word& word = words_[w];
    for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i) {
      if (word.symbols[i] < 0 || word.symbols[i + 1] < 0) continue;
      auto key = pair_key(word.symbols[i], word.symbols[i + 1]);
      auto& stat = stats_[key];
      stat.count -= word.count;
      stat.words.erase(w);
      touched.push_back(key);
    }
  }

  bool valid(std::int64_t count, std::uint64_t key) const {
    if (excluded_.count(key)) return false;
    auto it = stats_.find(key);
    return it != stats_.end() && it->second.count == count && count > 0;
  }

  std::uint64_t first_position(std::uint64_t key) const {
    const auto& stat = stats_.at(key);
    const Word& word = words_[*stat.words.begin()];
    std::int32_t l = key_left(key), r = key_right(key);
    for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i) {
      if (word.symbols[i] == l && word.symbols[i + 1] == r) {
        return word.first_pos + word.offsets[i];
      }
    }
    return word.first_pos;
  }

  // Highest count; ties by earliest first occurrence, then lexicographic.
  std::optional<std::pair<std::uint64_t, std::int64_t>> select_best() {
    while (!heap_.empty() && !valid(heap_.top().first, heap_.top().second)) {
      heap_.pop();
    }
    if (heap_.empty()) return std::nullopt;
    std::int64_t count = heap_.top().first;
    std::vector<std::uint64_t> tied;
    while (!heap_.empty() && heap_.top().first == count) {
      auto key = heap_.top().second;
      heap_.pop();
      if (valid(count, key) &&
          std::find(tied.begin(), tied.end(), key) == tied.end()) {
        tied.push_back(key);
      }
    }
    std::uint64_t best = tied.front();
    if (tied.size() > 1) {
      auto rank = [&](std::uint64_t k) {
        return std::make_tuple(first_position(k), pieces_[key_left(k)],
                               pieces_[key_right(k)]);
      };
      auto best_rank = rank(best);
      for (std::size_t i = 1; i < tied.size(); ++i) {
        auto r = rank(tied[i]);
        if (r < best_rank) {
          best_rank = std::move(r);
          best = tied[i];
        }
      }
    }
    for (auto k : tied) {
      if (k != best) heap_.emplace(count, k);
    }
    return std::make_pair(best, count);
  }

  void apply(std::uint64_t key, std::int32_t merged_id) {
    std::int32_t l = key_left(key), r = key_right(key);
    std::vector<std::uint32_t> affected(stats_[key].words.begin(),
                                        stats_[key].words.end());
    std::vector<std::uint64_t> touched;
    for (std::uint32_t w : affected) {
      remove_word(w, touched);
      Word& word = words_[w];
      std::vector<std::int32_t> syms;
      std::vector<std::uint32_t> offs;
      syms.reserve(word.symbols.size());
      offs.reserve(word.symbols.size());
      for (std::size_t i = 0; i < word.symbols.size(); ++i) {
        if (i + 1 < word.symbols.size() && word.symbols[i] == l &&
            word.symbols[i + 1] == r) {
          syms.push_back(merged_id);
          offs.push_back(word.offsets[i]);
          ++i;
        } else {
          syms.push_back(word.symbols[i]);
          offs.push_back(word.offsets[i]);
        }
      }
      word.symbols = std::move(syms);
      word.offsets = std::move(offs);
      add_word(w, touched);
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (auto k : touched) {
      auto it = stats_.find(k);
      if (it->second.count <= 0) {
        stats_.erase(it);
      } else {
        heap_.emplace(it->second.count, k);
      }
    }
  }

  std::vector<Word> words_;
  std::vector<std::string>& pieces_;
  std::vector<std::pair<TokenId, TokenId>>& merges_;
  std::size_t target_size_;
  TrainReport& report_;
  std::unordered_map<std::string, TokenId> piece_index_;
  std::unordered_map<std::uint64_t, PairStat> stats_;
  std::priority_queue<std::pair<std::int64_t, std::uint64_t>> heap_;
  std::unordered_set<std::uint64_t> excluded_;
};

}  // namespace

void TokenizerConfig::validate() const {
  if (!(character_coverage > 0.0 && character_coverage <= 1.0)) {
    throw Error(ErrorCode::kConfigInvalid,
                "character_coverage must be in (0, 1]");
  }
  if (vocab_size > 65536) {
    throw Error(ErrorCode::kConfigInvalid,
                "vocab_size must fit 16-bit token ids (<= 65536)");
  }
  if (vocab_size <= special_tokens.size() + kNumBytePieces) {
    throw Error(ErrorCode::kConfigInvalid,
                "vocab_size " + std::to_string(vocab_size) +
                    " leaves no room beyond special and byte pieces");
  }
  if (sample_chars == 0 || max_sentence_chars == 0) {
    throw Error(ErrorCode::kConfigInvalid,
                "sample_chars and max_sentence_chars must be positive");
  }
}

BpeVocab::BpeVocab(std::vector<std::string> pieces, std::size_t num_special,
                   std::vector<std::pair<TokenId, TokenId>> merges)
    : pieces_(std::move(pieces)),
      merges_(std::move(merges)),
      num_special_(num_special),
      first_char_(num_special + kNumBytePieces) {
  auto bad = [](const std::string& why) {
    throw Error(ErrorCode::kCorruptFile, "invalid vocabulary: " + why);
  };
  if (pieces_.size() > 65536) bad("more than 65536 pieces");
  if (pieces_.size() < first_char_ + merges_.size()) bad("too few pieces");
  first_merged_ = pieces_.size() - merges_.size();
  for (std::size_t b = 0; b < kNumBytePieces; ++b) {
    if (pieces_[num_special_ + b] !=
        byte_piece_text(static_cast<std::uint8_t>(b))) {
      bad("byte piece " + std::to_string(b) + " has unexpected text");
    }
  }
  std::unordered_set<std::string> seen;
  for (const auto& p : pieces_) {
    if (!seen.insert(p).second) bad("duplicate piece '" + p + "'");
  }
  for (std::size_t id = first_char_; id < first_merged_; ++id) {
    std::u32string cps = utf8::decode(pieces_[id]);
    if (cps.size() != 1) bad("character piece " + std::to_string(id));
    char_ids_.emplace(cps[0], static_cast<TokenId>(id));
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    auto [l, rr] = merges_[r];
    auto result = static_cast<TokenId>(first_merged_ + r);
    if (l < first_char_ || rr < first_char_ || l >= result || rr >= result) {
      bad("merge " + std::to_string(r) + " references an invalid piece");
    }
    if (pieces_[l] + pieces_[rr] != pieces_[result]) {
      bad("merge " + std::to_string(r) + " does not produce its piece");
    }
    merge_index_.emplace(pair_key32(l, rr),
                         MergeEntry{static_cast<std::uint32_t>(r), result});
  }
}

PieceKind BpeVocab::kind(TokenId id) const {
  if (id < num_special_) return PieceKind::kSpecial;
  if (id < first_char_) return PieceKind::kByte;
  if (id < first_merged_) return PieceKind::kCharacter;
  return PieceKind::kMerged;
}

int BpeVocab::char_piece(char32_t cp) const {
  auto it = char_ids_.find(cp);
  return it == char_ids_.end() ? -1 : it->second;
}

const BpeVocab::MergeEntry* BpeVocab::find_merge(TokenId left,
                                                 TokenId right) const {
  auto it = merge_index_.find(pair_key32(left, right));
  return it == merge_index_.end() ? nullptr : &it->second;
}

BpeVocab train_bpe(const LineSource& corpus, const TokenizerConfig& cfg,
                   std::uint64_t seed, TrainReport* report_out) {
  cfg.validate();
  TrainReport report;

  // Pass 1: corpus size after sentence truncation.
  std::size_t total_lines = 0;
  corpus([&](std::string_view line) {
    std::u32string cps = utf8::decode(line);
    report.corpus_chars += truncate_sentence(cps, cfg.max_sentence_chars).size();
    ++total_lines;
  });
  if (report.corpus_chars <= cfg.sample_chars) {
    report.stride = 1;
    if (report.corpus_chars < cfg.sample_chars) {
      report.sample_short = true;
      spdlog::warn(
          "corpus has {} characters, fewer than the {} requested for the "
          "tokenizer sample; training on all of it",
          report.corpus_chars, cfg.sample_chars);
    }
  } else {
    report.stride = (report.corpus_chars + cfg.sample_chars - 1) / cfg.sample_chars;
  }
  const std::size_t offset = seed % report.stride;

  // Pass 2: every stride-th line, marked and split into words.
  std::vector<Word> words;
  std::unordered_map<std::u32string, std::uint32_t> word_index;
  struct CharStat {
    std::int64_t count = 0;
    std::uint64_t first_pos = 0;
  };
  std::unordered_map<char32_t, CharStat> char_stats;
  std::uint64_t pos = 0;
  std::size_t line_no = 0;
  std::vector<std::u32string> word_texts;
  corpus([&](std::string_view line) {
    std::size_t index = line_no++;
    if (index % report.stride != offset) return;
    if (report.sampled_chars >= cfg.sample_chars) return;
    std::u32string cps = utf8::decode(line);
    auto kept = truncate_sentence(cps, cfg.max_sentence_chars);
    if (kept.empty()) return;
    report.sampled_chars += kept.size();
    ++report.sampled_lines;
    std::u32string stream = marked(kept);
    std::size_t start = 0;
    while (start < stream.size()) {
      std::size_t end = start + 1;
      while (end < stream.size() && stream[end] != kSpaceMarker) ++end;
      std::u32string w = stream.substr(start, end - start);
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == kLiteralMarker) continue;
        auto [it, fresh] = char_stats.try_emplace(w[i]);
        if (fresh) it->second.first_pos = pos + i;
        it->second.count += 1;
      }
      auto [it, fresh] = word_index.try_emplace(
          w, static_cast<std::uint32_t>(words.size()));
      if (fresh) {
        Word word;
        word.first_pos = pos;
        words.push_back(std::move(word));
        word_texts.push_back(std::move(w));
      }
      words[it->second].count += 1;
      pos += end - start;
      start = end;
    }
  });
  if (char_stats.empty()) {
    throw Error(ErrorCode::kCorpusTooSmall, "tokenizer sample is empty");
  }
  report.distinct_characters = char_stats.size();

  // Character coverage: most frequent first, ties by first occurrence. The
  // word marker always gets a piece so spaces never fall back to bytes.
  std::vector<std::pair<char32_t, CharStat>> ranked(char_stats.begin(),
                                                    char_stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first_pos < b.second.first_pos;
  });
  std::int64_t total = 0;
  for (const auto& [cp, st] : ranked) total += st.count;
  std::vector<char32_t> covered = {kSpaceMarker};
  std::int64_t cumulative = 0;
  for (const auto& [cp, st] : ranked) {
    if (static_cast<double>(cumulative) >=
        cfg.character_coverage * static_cast<double>(total)) {
      break;
    }
    cumulative += st.count;
    if (cp != kSpaceMarker) covered.push_back(cp);
  }
  report.covered_characters = covered.size();
  const std::size_t reserved = cfg.special_tokens.size() + kNumBytePieces;
  if (cfg.vocab_size <= reserved + covered.size()) {
    throw Error(ErrorCode::kConfigInvalid,
                "vocab_size " + std::to_string(cfg.vocab_size) +
                    " must exceed special + byte + covered character pieces (" +
                    std::to_string(reserved + covered.size()) + ")");
  }

  std::vector<std::string> pieces = cfg.special_tokens;
  for (std::size_t b = 0; b < kNumBytePieces; ++b) {
    pieces.push_back(byte_piece_text(static_cast<std::uint8_t>(b)));
  }
  std::unordered_map<char32_t, std::int32_t> char_ids;
  for (char32_t cp : covered) {
    char_ids.emplace(cp, static_cast<std::int32_t>(pieces.size()));
    pieces.push_back(utf8::encode(cp));
  }
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& text = word_texts[w];
    words[w].symbols.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      auto it = char_ids.find(text[i]);
      words[w].symbols.push_back(it == char_ids.end() ? -1 : it->second);
      words[w].offsets.push_back(static_cast<std::uint32_t>(i));
    }
  }
  word_texts.clear();

  std::vector<std::pair<TokenId, TokenId>> merges;
  MergeTrainer trainer(std::move(words), pieces, merges, cfg.vocab_size,
                       report);
  trainer.run();

  BpeVocab vocab(std::move(pieces), cfg.special_tokens.size(),
                 std::move(merges));
  if (report_out) *report_out = std::move(report);
  return vocab;
}

BpeVocab train_bpe(std::span<const std::string> lines,
                   const TokenizerConfig& cfg, std::uint64_t seed,
                   TrainReport* report) {
  return train_bpe(
      [lines](const std::function<void(std::string_view)>& visit) {
        for (const auto& l : lines) visit(l);
      },
      cfg, seed, report);
}

BpeVocab train_bpe_file(const std::filesystem::path& path,
                        const TokenizerConfig& cfg, std::uint64_t seed,
                        TrainReport* report) {
  return train_bpe(
      [&path](const std::function<void(std::string_view)>& visit) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
          throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
        }
        std::string line;
        while (std::getline(in, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          visit(line);
        }
      },
      cfg, seed, report);
}

namespace {

void apply_merges(std::vector<TokenId>& syms, const BpeVocab& vocab) {
  while (syms.size() >= 2) {
    const BpeVocab::MergeEntry* best = nullptr;
    TokenId left = 0, right = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto* m = vocab.find_merge(syms[i], syms[i + 1]);
      if (m && (!best || m->rank < best->rank)) {
        best = m;
        left = syms[i];
        right = syms[i + 1];
      }
    }
    if (!best) return;
    std::size_t out = 0;
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
        syms[out++] = best->result;
        ++i;
      } else {
        syms[out++] = syms[i];
      }
    }
    syms.resize(out);
  }
}

// Splits marked text into words and calls `emit` with each word's ids after
// merging. Code points without a piece become their UTF-8 byte pieces.
template <typename Emit>
void encode_words(std::string_view text, const BpeVocab& vocab, Emit&& emit) {
  if (text.empty()) return;
  const int marker = vocab.char_piece(kSpaceMarker);
  std::vector<TokenId> word;
  auto push_bytes = [&](std::string_view bytes) {
    for (char c : bytes) {
      word.push_back(vocab.byte_piece(static_cast<std::uint8_t>(c)));
    }
  };
  auto start_word = [&] {
    if (marker >= 0) {
      word.push_back(static_cast<TokenId>(marker));
    } else {
      push_bytes(kSpaceMarkerUtf8);
    }
  };
  auto flush = [&] {
    apply_merges(word, vocab);
    emit(word);
    word.clear();
  };
  start_word();
  std::size_t i = 0;
  while (i < text.size()) {
    // Decode one code point; invalid bytes pass through as byte pieces.
    std::size_t len = 1;
    auto b0 = static_cast<unsigned char>(text[i]);
    if (b0 >= 0xF0) len = 4;
    else if (b0 >= 0xE0) len = 3;
    else if (b0 >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    std::string_view unit = text.substr(i, len);
    bool bad = false;
    std::u32string cps = utf8::decode(unit, &bad);
    if (bad || cps.size() != 1) {
      push_bytes(text.substr(i, 1));
      i += 1;
      continue;
    }
    char32_t cp = cps[0];
    i += len;
    if (cp == U' ') {
      flush();
      start_word();
      continue;
    }
    int id = cp == kSpaceMarker ? -1 : vocab.char_piece(cp);
    if (id >= 0) {
      word.push_back(static_cast<TokenId>(id));
    } else {
      push_bytes(unit);
    }
  }
  flush();
}

void flush_bytes(std::string& bytes, std::string& out,
                 DecodeDiagnostics* diagnostics) {
  if (bytes.empty()) return;
  bool bad = false;
  std::u32string cps = utf8::decode(bytes, &bad);
  if (bad) {
    spdlog::warn("decode: byte pieces do not form valid UTF-8; rendered U+FFFD");
    if (diagnostics) diagnostics->malformed_bytes = true;
    out += utf8::encode(cps);
  } else {
    out += bytes;
  }
  bytes.clear();
}

}  // namespace

std::vector<TokenId> encode(std::string_view text, const BpeVocab& vocab,
                            bool add_bos, bool add_eos) {
  std::vector<TokenId> ids;
  if (add_bos) ids.push_back(kBosId);
  encode_words(text, vocab, [&](const std::vector<TokenId>& word) {
    ids.insert(ids.end(), word.begin(), word.end());
  });
  if (add_eos) ids.push_back(kEosId);
  return ids;
}

std::string decode(std::span<const TokenId> ids, const BpeVocab& vocab,
                   DecodeDiagnostics* diagnostics) {
  std::string out;
  std::string bytes;
  bool at_start = true;
  for (TokenId id : ids) {
    if (id >= vocab.size()) {
      throw Error(ErrorCode::kInvalidId,
                  "token id " + std::to_string(id) + " >= vocab size " +
                      std::to_string(vocab.size()));
    }
    switch (vocab.kind(id)) {
      case PieceKind::kSpecial:
        flush_bytes(bytes, out, diagnostics);
        break;
      case PieceKind::kByte:
        bytes.push_back(static_cast<char>(id - vocab.num_special()));
        at_start = false;
        break;
      case PieceKind::kCharacter:
      case PieceKind::kMerged: {
        flush_bytes(bytes, out, diagnostics);
        std::string_view piece = vocab.piece(id);
        std::size_t pos = 0;
        while (pos < piece.size()) {
          if (piece.compare(pos, kSpaceMarkerUtf8.size(), kSpaceMarkerUtf8) ==
              0) {
            // The marker opening the text stands for no space.
            if (!at_start) out.push_back(' ');
            pos += kSpaceMarkerUtf8.size();
          } else {
            out.push_back(piece[pos]);
            ++pos;
          }
          at_start = false;
        }
        break;
      }
    }
  }
  flush_bytes(bytes, out, diagnostics);
  return out;
}

std::vector<std::string> segment(std::string_view text, const BpeVocab& vocab) {
  std::vector<std::string> out;
  encode_words(text, vocab, [&](const std::vector<TokenId>& word) {
    for (TokenId id : word) out.push_back(vocab.piece(id));
  });
  return out;
}

std::string serialize_vocab(const BpeVocab& vocab) {
  ByteWriter w;
  w.put_bytes(std::string_view(kVocabMagic, 4));
  w.put<std::uint32_t>(kVocabFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vocab.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vocab.num_special()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vocab.merges().size()));
  for (const auto& p : vocab.pieces()) w.put_string(p);
  for (auto [l, r] : vocab.merges()) {
    w.put<std::uint32_t>(l);
    w.put<std::uint32_t>(r);
  }
  w.put<std::uint64_t>(fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

BpeVocab deserialize_vocab(std::string_view bytes) {
  if (bytes.size() < 8 + sizeof(std::uint64_t)) {
    throw Error(ErrorCode::kCorruptFile, "vocab file too short");
  }
  if (bytes.substr(0, 4) != std::string_view(kVocabMagic, 4)) {
    throw Error(ErrorCode::kCorruptFile, "bad vocab magic");
  }
  ByteReader header(bytes.substr(4, 4), ErrorCode::kCorruptFile);
  auto version = header.get<std::uint32_t>();
  if (version != kVocabFormatVersion) {
    throw Error(ErrorCode::kFormatVersionMismatch,
                "vocab format version " + std::to_string(version) +
                    ", expected " + std::to_string(kVocabFormatVersion));
  }
  std::string_view body = bytes.substr(0, bytes.size() - 8);
  ByteReader trailer(bytes.substr(bytes.size() - 8), ErrorCode::kCorruptFile);
  if (trailer.get<std::uint64_t>() != fnv1a64(body)) {
    throw Error(ErrorCode::kCorruptFile, "vocab checksum mismatch");
  }
  ByteReader r(body.substr(8), ErrorCode::kCorruptFile);
  auto vocab_size = r.get<std::uint32_t>();
  auto num_special = r.get<std::uint32_t>();
  auto num_merges = r.get<std::uint32_t>();
  if (vocab_size > 65536 || num_merges > vocab_size) {
    throw Error(ErrorCode::kCorruptFile, "implausible vocab header");
  }
  std::vector<std::string> pieces;
  pieces.reserve(vocab_size);
  for (std::uint32_t i = 0; i < vocab_size; ++i) pieces.push_back(r.get_string());
  std::vector<std::pair<TokenId, TokenId>> merges;
  merges.reserve(num_merges);
  for (std::uint32_t i = 0; i < num_merges; ++i) {
    auto a = r.get<std::uint32_t>();
    auto b = r.get<std::uint32_t>();
    if (a >= vocab_size || b >= vocab_size) {
      throw Error(ErrorCode::kCorruptFile, "merge id out of range");
    }
    merges.emplace_back(static_cast<TokenId>(a), static_cast<TokenId>(b));
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kCorruptFile, "trailing bytes in vocab file");
  }
  return BpeVocab(std::move(pieces), num_special, std::move(merges));
}

void save_vocab(const BpeVocab& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_vocab(vocab));
}

BpeVocab load_vocab(const std::filesystem::path& path) {
  return deserialize_vocab(read_file(path));
}

}  // namespace nepgpt::tokenizer
