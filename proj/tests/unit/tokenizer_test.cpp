#include "nepgpt/tokenizer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/error.hpp"
#include "nepgpt/utf8.hpp"
#include "test_support.hpp"

namespace nepgpt::tokenizer {
namespace {

using testing::TempDir;

TokenizerConfig small_config(std::size_t vocab_size) {
  TokenizerConfig cfg;
  cfg.vocab_size = vocab_size;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoFailure;
}

const BpeVocab& shared_vocab() {
  static const BpeVocab vocab = [] {
    auto lines = testing::syllable_lines(3000, 5);
    lines.resize(2000);
    return train_bpe(lines, small_config(600), 1);
  }();
  return vocab;
}

TEST(TrainBpe, FirstMergeOnToyCorpus) {
  // Characters: marker, a, b. 4 special + 256 bytes + 3 characters = 263, so
  // the smallest vocabulary with a merge budget is 264.
  std::vector<std::string> lines = {"abab abab abab"};
  TrainReport report;
  BpeVocab v = train_bpe(lines, small_config(264), 0, &report);
  ASSERT_EQ(v.merges().size(), 1u);
  EXPECT_EQ(v.piece(v.merges()[0].first), "a");
  EXPECT_EQ(v.piece(v.merges()[0].second), "b");
  EXPECT_EQ(v.piece(static_cast<TokenId>(v.size() - 1)), "ab");
  EXPECT_EQ(report.merge_frequencies, std::vector<std::int64_t>{6});
}

TEST(TrainBpe, RepeatedCharacterMerge) {
  std::vector<std::string> lines = {"ककककक"};
  BpeVocab v = train_bpe(lines, small_config(263), 0);
  ASSERT_EQ(v.merges().size(), 1u);
  EXPECT_EQ(v.piece(v.merges()[0].first), "क");
  EXPECT_EQ(v.piece(v.merges()[0].second), "क");
  EXPECT_EQ(v.pieces().back(), "कक");
}

TEST(TrainBpe, FullCoverageIncludesEveryCharacter) {
  // 40 distinct characters: Devanagari consonants and vowels.
  std::u32string chars;
  for (char32_t cp = 0x0905; chars.size() < 40; ++cp) {
    if (cp == 0x093A || cp == 0x093B) continue;
    chars.push_back(cp);
  }
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    std::u32string line;
    for (std::size_t j = 0; j <= i; ++j) line.push_back(chars[i]);
    lines.push_back(utf8::encode(line));
  }
  TokenizerConfig cfg = small_config(4 + 256 + 41 + 5);
  cfg.character_coverage = 1.0;
  TrainReport report;
  BpeVocab v = train_bpe(lines, cfg, 0, &report);
  EXPECT_EQ(report.distinct_characters, 41u);  // with the word marker
  EXPECT_EQ(v.num_characters(), 41u);
  for (char32_t cp : chars) EXPECT_GE(v.char_piece(cp), 0);
  EXPECT_EQ(v.size(), cfg.vocab_size);
}

TEST(TrainBpe, LowCoverageLeavesRareCharactersToBytes) {
  std::vector<std::string> lines(50, "कखग कखग");
  lines.push_back("ञ");
  TokenizerConfig cfg = small_config(266);
  cfg.character_coverage = 0.99;
  BpeVocab v = train_bpe(lines, cfg, 0);
  EXPECT_LT(v.char_piece(U'ञ'), 0);
  auto ids = encode("ञ", v);
  EXPECT_EQ(decode(ids, v), "ञ");
  auto seg = segment("ञ", v);
  EXPECT_TRUE(std::any_of(seg.begin(), seg.end(), [](const std::string& s) {
    return s.rfind("<0x", 0) == 0;
  }));
}

TEST(TrainBpe, ExactSizeDenseIdsUniquePieces) {
  const BpeVocab& v = shared_vocab();
  EXPECT_EQ(v.size(), 600u);
  std::set<std::string> unique(v.pieces().begin(), v.pieces().end());
  EXPECT_EQ(unique.size(), v.size());
  EXPECT_EQ(v.piece(kPadId), "<pad>");
  EXPECT_EQ(v.piece(kEosId), "</s>");
  EXPECT_EQ(v.piece(v.byte_piece(0xE0)), "<0xE0>");
  // Every merged piece is the concatenation of its merge's operands.
  const std::size_t first_merged = v.size() - v.merges().size();
  for (std::size_t r = 0; r < v.merges().size(); ++r) {
    auto [l, rt] = v.merges()[r];
    EXPECT_EQ(v.piece(static_cast<TokenId>(first_merged + r)),
              v.piece(l) + v.piece(rt));
    EXPECT_LT(l, first_merged + r);
    EXPECT_LT(rt, first_merged + r);
    EXPECT_EQ(v.kind(static_cast<TokenId>(first_merged + r)),
              PieceKind::kMerged);
  }
}

TEST(TrainBpe, MergeFrequenciesNonIncreasing) {
  auto lines = testing::syllable_lines(2000, 5);
  TrainReport report;
  train_bpe(lines, small_config(600), 1, &report);
  ASSERT_FALSE(report.merge_frequencies.empty());
  for (std::size_t r = 1; r < report.merge_frequencies.size(); ++r) {
    EXPECT_GE(report.merge_frequencies[r - 1], report.merge_frequencies[r])
        << "rank " << r;
  }
}

TEST(TrainBpe, MergeCountsMatchBruteForce) {
  // Independent oracle: recount pair frequencies on the marked words after
  // replaying the first k merges greedily, and compare with the trainer's
  // recorded frequency for merge k.
  auto lines = testing::devanagari_lines(300, 9);
  TrainReport report;
  BpeVocab v = train_bpe(lines, small_config(330), 0, &report);
  std::map<std::vector<std::string>, std::int64_t> words;
  for (const auto& line : lines) {
    std::string marked = std::string(kSpaceMarkerUtf8);
    for (char c : line) {
      if (c == ' ') {
        marked += kSpaceMarkerUtf8;
      } else {
        marked += c;
      }
    }
    auto cps = utf8::decode(marked);
    std::vector<std::string> cur;
    for (char32_t cp : cps) {
      if (cp == kSpaceMarker && !cur.empty()) {
        words[cur] += 1;
        cur.clear();
      }
      cur.push_back(utf8::encode(cp));
    }
    if (!cur.empty()) words[cur] += 1;
  }
  for (std::size_t r = 0; r < v.merges().size(); ++r) {
    const std::string& a = v.piece(v.merges()[r].first);
    const std::string& b = v.piece(v.merges()[r].second);
    std::int64_t freq = 0;
    std::map<std::vector<std::string>, std::int64_t> next;
    for (const auto& [w, n] : words) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == a && w[i + 1] == b) {
          out.push_back(a + b);
          freq += n;
          ++i;
        } else {
          out.push_back(w[i]);
        }
      }
      next[out] += n;
    }
    ASSERT_EQ(freq, report.merge_frequencies[r]) << "rank " << r;
    words = std::move(next);
  }
}

TEST(TrainBpe, DeterministicSerialization) {
  auto lines = testing::devanagari_lines(800, 2);
  auto a = serialize_vocab(train_bpe(lines, small_config(400), 3));
  auto b = serialize_vocab(train_bpe(lines, small_config(400), 3));
  EXPECT_EQ(a, b);
}

TEST(TrainBpe, StrideSampling) {
  auto lines = testing::devanagari_lines(400, 4);
  std::size_t total = 0;
  for (const auto& l : lines) total += utf8::decode(l).size();
  TokenizerConfig cfg = small_config(340);
  cfg.sample_chars = total / 4;
  TrainReport report;
  train_bpe(lines, cfg, 0, &report);
  EXPECT_EQ(report.stride, 5u);
  EXPECT_LE(report.sampled_chars, cfg.sample_chars + 200);
  EXPECT_FALSE(report.sample_short);

  cfg.sample_chars = total * 2;
  train_bpe(lines, cfg, 0, &report);
  EXPECT_TRUE(report.sample_short);
  EXPECT_EQ(report.stride, 1u);
}

TEST(TrainBpe, LongSentencesTruncatedAtSpace) {
  std::vector<std::string> lines = {"कख गघ ङच छज"};
  TokenizerConfig cfg = small_config(266);
  cfg.max_sentence_chars = 7;  // keeps "कख गघ"
  TrainReport report;
  train_bpe(lines, cfg, 0, &report);
  EXPECT_EQ(report.sampled_chars, 5u);
}

TEST(TrainBpe, Errors) {
  TokenizerConfig cfg = small_config(260);
  EXPECT_EQ(code_of([&] { train_bpe(std::vector<std::string>{"क"}, cfg, 0); }),
            ErrorCode::kConfigInvalid);
  cfg = small_config(300);
  cfg.character_coverage = 0.0;
  EXPECT_EQ(code_of([&] { train_bpe(std::vector<std::string>{"क"}, cfg, 0); }),
            ErrorCode::kConfigInvalid);
  cfg = small_config(300);
  EXPECT_EQ(code_of([&] { train_bpe(std::vector<std::string>{}, cfg, 0); }),
            ErrorCode::kCorpusTooSmall);
  // Two characters cannot supply 38 merges.
  EXPECT_EQ(code_of([&] { train_bpe(std::vector<std::string>{"कक"}, cfg, 0); }),
            ErrorCode::kCorpusTooSmall);
}

TEST(Encode, EmptyAndFraming) {
  const BpeVocab& v = shared_vocab();
  EXPECT_TRUE(encode("", v).empty());
  EXPECT_EQ(encode("", v, true, true), (std::vector<TokenId>{2, 3}));
  EXPECT_EQ(decode(std::vector<TokenId>{}, v), "");
  EXPECT_EQ(decode(std::vector<TokenId>{2, 3}, v), "");
}

TEST(Encode, RoundTripOnCorpusLines) {
  const BpeVocab& v = shared_vocab();
  // Held out: the same word distribution, lines not seen in training.
  auto lines = testing::syllable_lines(3000, 5);
  lines.erase(lines.begin(), lines.begin() + 2000);
  for (const auto& line : lines) {
    auto ids = encode(line, v);
    ASSERT_EQ(decode(ids, v), line);
    // Compression: merges make pieces shorter than code points.
    EXPECT_LT(ids.size(), utf8::decode(line).size());
  }
}

TEST(Encode, TotalAndRoundTripOnArbitraryText) {
  const BpeVocab& v = shared_vocab();
  std::mt19937_64 rng(31);
  for (int i = 0; i < 2000; ++i) {
    std::string s = testing::fuzz_unicode(rng);
    auto ids = encode(s, v);
    for (auto id : ids) ASSERT_LT(id, v.size());
    DecodeDiagnostics diag;
    ASSERT_EQ(decode(ids, v, &diag), s);
    EXPECT_FALSE(diag.malformed_bytes);
  }
  // Spaces at the edges, runs of spaces and a literal marker survive.
  for (std::string s : {" क", "क ", "  ", "क  ख", "▁", "a▁b ▁"}) {
    EXPECT_EQ(decode(encode(s, v), v), s) << s;
  }
}

TEST(Encode, SegmentationConcatenatesToMarkedText) {
  const BpeVocab& v = shared_vocab();
  std::string s = "नेपाल सरकार ञ";
  auto seg = segment(s, v);
  auto ids = encode(s, v);
  ASSERT_EQ(seg.size(), ids.size());
  std::string joined;
  for (auto id : ids) joined += v.piece(id);
  std::string expected;
  for (const auto& p : seg) expected += p;
  EXPECT_EQ(joined, expected);
  EXPECT_EQ(seg.front().rfind(std::string(kSpaceMarkerUtf8), 0), 0u);
}

TEST(Encode, Deterministic) {
  const BpeVocab& v = shared_vocab();
  std::string s = testing::devanagari_lines(1, 3)[0];
  EXPECT_EQ(encode(s, v), encode(s, v));
}

TEST(Decode, InvalidIdAndMalformedBytes) {
  const BpeVocab& v = shared_vocab();
  std::vector<TokenId> bad = {static_cast<TokenId>(v.size())};
  EXPECT_EQ(code_of([&] { decode(bad, v); }), ErrorCode::kInvalidId);
  // A lone continuation byte.
  std::vector<TokenId> broken = {v.byte_piece(0x80)};
  DecodeDiagnostics diag;
  EXPECT_EQ(decode(broken, v, &diag), "\xEF\xBF\xBD");
  EXPECT_TRUE(diag.malformed_bytes);
}

TEST(VocabIo, SaveLoadRoundTrip) {
  TempDir dir;
  const BpeVocab& v = shared_vocab();
  save_vocab(v, dir / "v.bin");
  BpeVocab loaded = load_vocab(dir / "v.bin");
  EXPECT_EQ(loaded, v);
  EXPECT_EQ(serialize_vocab(loaded), serialize_vocab(v));
  EXPECT_EQ(encode("नेपाल", loaded), encode("नेपाल", v));
}

TEST(VocabIo, LayoutHeader) {
  const BpeVocab& v = shared_vocab();
  std::string bytes = serialize_vocab(v);
  ByteReader r(bytes, ErrorCode::kCorruptFile);
  EXPECT_EQ(r.get_bytes(4), "BPEV");
  EXPECT_EQ(r.get<std::uint32_t>(), kVocabFormatVersion);
  EXPECT_EQ(r.get<std::uint32_t>(), v.size());
  // Trailing checksum covers everything before it.
  ByteReader tail(std::string_view(bytes).substr(bytes.size() - 8),
                  ErrorCode::kCorruptFile);
  EXPECT_EQ(tail.get<std::uint64_t>(), fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8)));
}

TEST(VocabIo, CorruptionDetected) {
  const BpeVocab& v = shared_vocab();
  std::string bytes = serialize_vocab(v);
  EXPECT_EQ(code_of([&] { deserialize_vocab(bytes.substr(0, bytes.size() / 2)); }),
            ErrorCode::kCorruptFile);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_EQ(code_of([&] { deserialize_vocab(flipped); }), ErrorCode::kCorruptFile);
  std::string future = bytes;
  future[4] = 2;
  EXPECT_EQ(code_of([&] { deserialize_vocab(future); }),
            ErrorCode::kFormatVersionMismatch);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize_vocab(magic); }), ErrorCode::kCorruptFile);
}

TEST(VocabIo, MissingFile) {
  TempDir dir;
  EXPECT_EQ(code_of([&] { load_vocab(dir / "nope.bin"); }), ErrorCode::kIoFailure);
}

}  // namespace
}  // namespace nepgpt::tokenizer
