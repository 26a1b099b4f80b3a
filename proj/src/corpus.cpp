#include "nepgpt/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/error.hpp"
#include "nepgpt/utf8.hpp"

namespace nepgpt::corpus {
namespace {

constexpr char32_t kDanda = 0x0964;
constexpr char32_t kDoubleDanda = 0x0965;
constexpr char32_t kDevanagariZero = 0x0966;

bool ascii_alpha(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
bool ascii_alnum(unsigned char c) {
  return ascii_alpha(c) || (c >= '0' && c <= '9');
}
bool ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool iequals_at(std::string_view s, std::size_t pos, std::string_view word) {
  if (s.size() - pos < word.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    char a = s[pos + i];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
    if (a != word[i]) return false;
  }
  return true;
}

std::size_t ifind(std::string_view s, std::size_t from, std::string_view word) {
  for (std::size_t i = from; i + word.size() <= s.size(); ++i) {
    if (iequals_at(s, i, word)) return i;
  }
  return std::string_view::npos;
}

// Script and style blocks go whole; other tags, comments and entities are
// replaced by a space so neighbouring words stay apart.
std::string strip_markup(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (c == '<') {
      if (s.compare(i, 4, "<!--") == 0) {
        auto end = s.find("-->", i + 4);
        i = (end == std::string_view::npos) ? s.size() : end + 3;
        out.push_back(' ');
        continue;
      }
      bool block = false;
      for (std::string_view name : {"script", "style"}) {
        if (iequals_at(s, i + 1, name)) {
          std::size_t after = i + 1 + name.size();
          if (after >= s.size() || s[after] == '>' || s[after] == '/' ||
              ascii_space(static_cast<unsigned char>(s[after]))) {
            std::string closing = "</" + std::string(name);
            auto close = ifind(s, after, closing);
            if (close == std::string_view::npos) {
              i = s.size();
            } else {
              auto gt = s.find('>', close);
              i = (gt == std::string_view::npos) ? s.size() : gt + 1;
            }
            block = true;
            break;
          }
        }
      }
      if (block) {
        out.push_back(' ');
        continue;
      }
      if (i + 1 < s.size()) {
        unsigned char n = static_cast<unsigned char>(s[i + 1]);
        if (ascii_alpha(n) || n == '/' || n == '!' || n == '?') {
          auto gt = s.find('>', i + 1);
          if (gt != std::string_view::npos) {
            i = gt + 1;
            out.push_back(' ');
            continue;
          }
        }
      }
    } else if (c == '&') {
      std::size_t j = i + 1;
      bool numeric = j < s.size() && s[j] == '#';
      if (numeric) ++j;
      std::size_t start = j;
      while (j < s.size() && j - start < 10 &&
             ascii_alnum(static_cast<unsigned char>(s[j]))) {
        ++j;
      }
      if (j > start && j < s.size() && s[j] == ';') {
        i = j + 1;
        out.push_back(' ');
        continue;
      }
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

bool scheme_char(unsigned char c) {
  return ascii_alnum(c) || c == '+' || c == '.' || c == '-';
}

// scheme://... and www.... up to the next ASCII whitespace.
std::string strip_urls(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    bool word_start =
        i == 0 || !scheme_char(static_cast<unsigned char>(s[i - 1]));
    if (word_start && ascii_alpha(c)) {
      std::size_t j = i;
      while (j < s.size() && scheme_char(static_cast<unsigned char>(s[j]))) ++j;
      bool url = s.compare(j, 3, "://") == 0 || iequals_at(s, i, "www.");
      if (url) {
        while (j < s.size() && !ascii_space(static_cast<unsigned char>(s[j]))) {
          ++j;
        }
        out.push_back(' ');
        i = j;
        continue;
      }
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

bool latin_letter(char32_t cp) {
  if (cp < 0x80) return ascii_alpha(static_cast<unsigned char>(cp));
  return cp >= 0x00C0 && cp <= 0x024F && cp != 0x00D7 && cp != 0x00F7;
}

bool latin_word_char(char32_t cp) {
  return latin_letter(cp) || (cp >= '0' && cp <= '9') || cp == '_';
}

bool is_newline(char32_t cp) {
  return cp == '\n' || cp == '\r' || cp == 0x0B || cp == 0x0C || cp == 0x85 ||
         cp == 0x2028 || cp == 0x2029;
}

bool is_blank(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

bool is_invisible(char32_t cp) {
  return cp == 0x00AD || (cp >= 0x200B && cp <= 0x200D) || cp == 0x2060 ||
         cp == 0xFEFF;
}

bool in_ranges(char32_t cp, const std::vector<CodepointRange>& ranges) {
  auto it = std::upper_bound(
      ranges.begin(), ranges.end(), cp,
      [](char32_t v, const CodepointRange& r) { return v < r.first; });
  if (it == ranges.begin()) return false;
  --it;
  return cp <= it->last;
}

// Latin-word removal, digit policy, codepoint filter and whitespace collapse.
// Produces lines joined by '\n' with single interior spaces.
std::string filter_and_collapse(std::u32string_view text,
                                const CleanConfig& cfg) {
  std::u32string mapped;
  mapped.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp = text[i];
    if (latin_word_char(cp)) {
      std::size_t j = i;
      bool has_letter = false;
      while (j < text.size() && latin_word_char(text[j])) {
        has_letter = has_letter || latin_letter(text[j]);
        ++j;
      }
      if (has_letter) {
        mapped.push_back(' ');
        i = j;
        continue;
      }
    }
    if (cp == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      ++i;
      continue;
    }
    if (is_newline(cp)) {
      mapped.push_back('\n');
    } else if (is_blank(cp)) {
      mapped.push_back(' ');
    } else if (cp >= '0' && cp <= '9') {
      switch (cfg.digit_policy) {
        case DigitPolicy::kKeepAscii: mapped.push_back(cp); break;
        case DigitPolicy::kMapToDevanagari:
          mapped.push_back(kDevanagariZero + (cp - '0'));
          break;
        case DigitPolicy::kDrop: mapped.push_back(' '); break;
      }
    } else if (is_invisible(cp)) {
      // dropped without a separator
    } else if (in_ranges(cp, cfg.keep_ranges)) {
      mapped.push_back(cp);
    } else {
      mapped.push_back(' ');
    }
    ++i;
  }

  std::u32string out;
  out.reserve(mapped.size());
  std::u32string line;
  auto flush_line = [&] {
    while (!line.empty() && line.back() == ' ') line.pop_back();
    if (!line.empty()) {
      if (!out.empty()) out.push_back('\n');
      out += line;
    }
    line.clear();
  };
  for (char32_t cp : mapped) {
    if (cp == '\n') {
      flush_line();
    } else if (cp == ' ') {
      if (!line.empty() && line.back() != ' ') line.push_back(' ');
    } else {
      line.push_back(cp);
    }
  }
  flush_line();
  return utf8::encode(out);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

// Content-hash set that confirms every hash hit by comparing the text.
class SeenSet {
 public:
  // Returns true when `text` was not present before.
  bool insert(std::string_view text) {
    auto& bucket = buckets_[fnv1a64(text)];
    for (const auto& s : bucket) {
      if (s == text) return false;
    }
    bucket.emplace_back(text);
    return true;
  }

 private:
  struct Identity {
    std::size_t operator()(std::uint64_t h) const {
      return static_cast<std::size_t>(h);
    }
  };
  std::unordered_map<std::uint64_t, std::vector<std::string>, Identity>
      buckets_;
};

}  // namespace

std::vector<CodepointRange> CleanConfig::default_keep_ranges() {
  return {{'\n', '\n'}, {' ', ' '}, {0x0900, 0x097F}, {0xA8E0, 0xA8FF}};
}

void CleanConfig::validate() const {
  for (std::size_t i = 0; i < keep_ranges.size(); ++i) {
    if (keep_ranges[i].first > keep_ranges[i].last) {
      throw Error(ErrorCode::kConfigInvalid, "keep range with first > last");
    }
    if (i > 0 && keep_ranges[i - 1].last >= keep_ranges[i].first) {
      throw Error(ErrorCode::kConfigInvalid,
                  "keep ranges must be sorted and disjoint");
    }
  }
  if (min_sentence_chars == 0 || min_sentence_chars >= max_sentence_chars) {
    throw Error(ErrorCode::kConfigInvalid,
                "need 0 < min_sentence_chars < max_sentence_chars (got " +
                    std::to_string(min_sentence_chars) + ", " +
                    std::to_string(max_sentence_chars) + ")");
  }
}

DocRecord DocRecord::from_text(std::string source_id, std::string text) {
  DocRecord doc;
  doc.source_id = std::move(source_id);
  doc.line_count = split_lines(text).size();
  doc.char_count = utf8::length(text);
  doc.text = std::move(text);
  return doc;
}

bool is_permitted(char32_t cp, const CleanConfig& cfg) {
  if (cp >= '0' && cp <= '9') {
    return cfg.digit_policy == DigitPolicy::kKeepAscii;
  }
  return in_ranges(cp, cfg.keep_ranges);
}

std::string normalize_nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kIoFailure, "ICU NFC normalizer unavailable");
  }
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString dst = nfc->normalize(src, status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kIoFailure, "NFC normalization failed");
  }
  std::string out;
  dst.toUTF8String(out);
  return out;
}

std::string clean_text(std::string_view raw, const CleanConfig& cfg) {
  if (raw.empty()) return {};
  std::string text = normalize_nfc(raw);
  text = strip_markup(text);
  text = strip_urls(text);
  std::string filtered = filter_and_collapse(utf8::decode(text), cfg);
  // Dropping invisible joiners can leave composable neighbours behind.
  std::string composed = normalize_nfc(filtered);
  if (composed == filtered) return filtered;
  return filter_and_collapse(utf8::decode(composed), cfg);
}

bool is_fragment(std::string_view line, const CleanConfig& cfg) {
  std::u32string cps = utf8::decode(line);
  if (cps.size() >= cfg.fragment_max_chars) return false;
  if (cps.empty()) return true;
  switch (cps.back()) {
    case kDanda:
    case kDoubleDanda:
    case U'?':
    case U'"':
    case U'\'':
    case 0x201D:  // right double quotation mark
    case 0x2019:  // right single quotation mark
    case 0x00BB:
      return false;
    default:
      return true;
  }
}

std::pair<std::vector<DocRecord>, CorpusStats> dedup_corpus(
    const std::vector<DocRecord>& docs, const CleanConfig& cfg) {
  CorpusStats stats;
  std::vector<DocRecord> kept;
  SeenSet seen;

  auto too_short_or_long = [&](std::string_view line) {
    std::size_t n = utf8::length(line);
    return n < cfg.min_sentence_chars || n > cfg.max_sentence_chars ||
           (cfg.drop_fragments && is_fragment(line, cfg));
  };

  for (const auto& doc : docs) {
    std::string retained;
    std::size_t retained_lines = 0;
    for (std::string_view line : split_lines(doc.text)) {
      stats.lines_in += 1;
      stats.input_bytes += line.size() + 1;
      if (too_short_or_long(line)) {
        stats.docs_dropped += 1;
        continue;
      }
      if (cfg.dedup_scope == DedupScope::kExactLine && !seen.insert(line)) {
        stats.duplicates_removed += 1;
        continue;
      }
      if (!retained.empty()) retained.push_back('\n');
      retained.append(line);
      ++retained_lines;
    }
    if (retained_lines == 0) continue;
    if (cfg.dedup_scope == DedupScope::kExactDocument && !seen.insert(retained)) {
      stats.duplicates_removed += retained_lines;
      continue;
    }
    stats.lines_out += retained_lines;
    stats.output_bytes += retained.size() + 1;
    kept.push_back(DocRecord::from_text(doc.source_id, std::move(retained)));
  }
  return {std::move(kept), stats};
}

std::string corpus_report(const CorpusStats& stats) {
  std::ostringstream os;
  os << "corpus report\n";
  auto row = [&](const char* name, std::uint64_t v) {
    os << "  " << name;
    for (std::size_t pad = std::char_traits<char>::length(name); pad < 20;
         ++pad) {
      os << ' ';
    }
    os << v << '\n';
  };
  row("input_bytes", stats.input_bytes);
  row("output_bytes", stats.output_bytes);
  row("lines_in", stats.lines_in);
  row("lines_out", stats.lines_out);
  row("duplicates_removed", stats.duplicates_removed);
  row("docs_dropped", stats.docs_dropped);
  if (stats.output_bytes > stats.input_bytes) {
    os << "WARNING: output_bytes (" << stats.output_bytes
       << ") exceeds input_bytes (" << stats.input_bytes << ")\n";
  }
  std::uint64_t accounted =
      stats.lines_out + stats.duplicates_removed + stats.docs_dropped;
  if (accounted > stats.lines_in) {
    os << "WARNING: lines_out + duplicates_removed + docs_dropped ("
       << accounted << ") exceeds lines_in (" << stats.lines_in << ")\n";
  }
  return os.str();
}

std::string stats_csv(const CorpusStats& stats) {
  std::ostringstream os;
  os << "input_bytes,output_bytes,lines_in,lines_out,duplicates_removed,"
        "docs_dropped\n"
     << stats.input_bytes << ',' << stats.output_bytes << ',' << stats.lines_in
     << ',' << stats.lines_out << ',' << stats.duplicates_removed << ','
     << stats.docs_dropped << '\n';
  return os.str();
}

CleanResult clean_directory(const std::filesystem::path& dir,
                            const CleanConfig& cfg, unsigned threads) {
  cfg.validate();
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::kIoFailure, "not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<DocRecord> cleaned(files.size());
  std::vector<std::uint64_t> raw_bytes(files.size(), 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < files.size() && !failed; i = next++) {
      try {
        std::string raw = read_file(files[i]);
        raw_bytes[i] = raw.size();
        bool bad = false;
        std::string text = utf8::encode(utf8::decode(raw, &bad));
        if (bad) {
          spdlog::warn("{}: invalid UTF-8 replaced", files[i].string());
        }
        cleaned[i] = DocRecord::from_text(
            fs::relative(files[i], dir).generic_string(),
            clean_text(text, cfg));
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  unsigned n = std::max(1u, std::min<unsigned>(threads, files.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  auto [docs, stats] = dedup_corpus(cleaned, cfg);
  stats.input_bytes = 0;
  for (auto b : raw_bytes) stats.input_bytes += b;
  return {std::move(docs), stats};
}

void write_corpus(const std::filesystem::path& path,
                  const std::vector<DocRecord>& docs) {
  std::string out;
  for (const auto& doc : docs) {
    out += doc.text;
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

}  // namespace nepgpt::corpus
