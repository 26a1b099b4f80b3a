#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/checkpoint.hpp"
#include "nepgpt/corpus.hpp"
#include "nepgpt/error.hpp"
#include "nepgpt/eval.hpp"
#include "nepgpt/self_test.hpp"
#include "nepgpt/shards.hpp"
#include "nepgpt/tokenizer.hpp"
#include "nepgpt/trainer.hpp"

namespace nepgpt::cli {

std::string RunManifest::config_hash() const {
  return config::hash_hex(config::config_hash(config));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["config"] = config;
  j["config_hash"] = config_hash();
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  j["toolkit_version"] = toolkit_version;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.subcommand = j.at("subcommand").get<std::string>();
    m.config = j.at("config").get<config::KeyValues>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    if (j.at("config_hash").get<std::string>() != m.config_hash()) {
      throw Error(ErrorCode::kCorruptFile,
                  "manifest config_hash does not match its config");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, m.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::kCorruptFile, "manifest is not JSON: " + path.string());
  }
  return RunManifest::from_json(j);
}

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string log_level = "info";
};

// Config-bound flags stay unset unless given, so they override the config
// file only when present.
using FlagValues = std::map<std::string, std::optional<std::string>>;

// Keys bound by the non-training stages. One config file may serve every
// stage: each stage reads its own keys, and a key no stage knows is an error.
const std::set<std::string>& stage_keys() {
  static const std::set<std::string> keys = {
      "min_chars",  "max_chars",  "digits",      "fragments",
      "vocab_size", "coverage",   "sample_chars", "seed",
      "shard_tokens", "batches",  "max_tokens",  "temperature",
      "top_k"};
  return keys;
}

bool is_known_key(const std::string& key) {
  static const config::KeyValues run_keys = trainer::RunConfig().to_key_values();
  return stage_keys().count(key) != 0 || run_keys.count(key) != 0;
}

// Entries of the config file that `accepts` claims; any other key must be
// known to some stage.
config::KeyValues config_entries(const Globals& g,
                                 const std::function<bool(const std::string&)>& accepts) {
  config::KeyValues mine;
  if (g.config.empty()) return mine;
  for (auto& [key, value] : config::read_key_values(g.config)) {
    if (accepts(key)) {
      mine.emplace(key, value);
    } else if (!is_known_key(key)) {
      throw Error(ErrorCode::kUnknownConfigKey,
                  "unknown config key '" + key + "' in " + g.config);
    }
  }
  return mine;
}

config::KeyValues resolve(config::Binder& b, const Globals& g,
                          const FlagValues& flags) {
  b.apply(config_entries(g, [&](const std::string& k) { return b.has(k); }));
  for (const auto& [key, value] : flags) {
    if (value) b.apply(key, *value);
  }
  if (g.seed && b.has("seed")) b.apply("seed", std::to_string(*g.seed));
  return b.resolved();
}

void ensure_parent(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
}

std::filesystem::path manifest_beside(const std::filesystem::path& file) {
  auto p = file;
  p += ".manifest.json";
  return p;
}

void warn_unused_seed(const Globals& g, const char* sub) {
  if (g.seed) spdlog::warn("--seed has no effect on {}", sub);
}

CLI::Option* add_flag_value(CLI::App* app, const std::string& name,
                            FlagValues& flags, const std::string& key,
                            const std::string& help) {
  flags[key];
  return app->add_option(name, flags[key], help)->type_name("VALUE");
}

// clean ----------------------------------------------------------------------

struct CleanArgs {
  std::string in, out, stats;
  FlagValues flags;
};

void setup_clean(CLI::App* sub, CleanArgs& a) {
  sub->add_option("--in", a.in, "directory of raw UTF-8 text files")->required();
  sub->add_option("--out", a.out, "cleaned corpus file")->required();
  add_flag_value(sub, "--min-chars", a.flags, "min_chars", "shortest line kept");
  add_flag_value(sub, "--max-chars", a.flags, "max_chars", "longest line kept");
  add_flag_value(sub, "--digits", a.flags, "digits", "keep|map|drop");
  add_flag_value(sub, "--fragments", a.flags, "fragments",
                 "on|off: drop short unterminated lines");
  sub->add_option("--stats", a.stats, "write corpus counters as CSV");
}

int run_clean(const CleanArgs& a, const Globals& g, std::ostream& out) {
  warn_unused_seed(g, "clean");
  corpus::CleanConfig cfg;
  std::string digits = "map";
  std::string fragments = "off";
  config::Binder b;
  b.bind("min_chars", cfg.min_sentence_chars);
  b.bind("max_chars", cfg.max_sentence_chars);
  b.bind("digits", digits);
  b.bind("fragments", fragments);
  RunManifest m;
  m.subcommand = "clean";
  m.config = resolve(b, g, a.flags);
  if (digits == "keep") {
    cfg.digit_policy = corpus::DigitPolicy::kKeepAscii;
  } else if (digits == "map") {
    cfg.digit_policy = corpus::DigitPolicy::kMapToDevanagari;
  } else if (digits == "drop") {
    cfg.digit_policy = corpus::DigitPolicy::kDrop;
  } else {
    throw Error(ErrorCode::kConfigInvalid,
                "digits must be keep, map or drop, got '" + digits + "'");
  }
  if (fragments != "on" && fragments != "off") {
    throw Error(ErrorCode::kConfigInvalid,
                "fragments must be on or off, got '" + fragments + "'");
  }
  cfg.drop_fragments = fragments == "on";
  cfg.validate();

  m.inputs["in"] = a.in;
  m.outputs["out"] = a.out;
  if (!a.stats.empty()) m.outputs["stats"] = a.stats;
  ensure_parent(a.out);
  write_manifest(m, manifest_beside(a.out));

  auto result = corpus::clean_directory(a.in, cfg, g.threads);
  corpus::write_corpus(a.out, result.docs);
  if (!a.stats.empty()) {
    ensure_parent(a.stats);
    write_file_atomic(a.stats, corpus::stats_csv(result.stats));
  }
  out << corpus::corpus_report(result.stats);
  return 0;
}

// train-tokenizer --------------------------------------------------------------

struct TrainTokenizerArgs {
  std::string in, out;
  FlagValues flags;
};

void setup_train_tokenizer(CLI::App* sub, TrainTokenizerArgs& a) {
  sub->add_option("--in", a.in, "cleaned corpus file")->required();
  sub->add_option("--out", a.out, "vocabulary file to write")->required();
  add_flag_value(sub, "--vocab-size", a.flags, "vocab_size", "pieces in the vocabulary");
  add_flag_value(sub, "--coverage", a.flags, "coverage",
                 "character coverage of the sample");
  add_flag_value(sub, "--sample-chars", a.flags, "sample_chars",
                 "characters sampled for training");
}

int run_train_tokenizer(const TrainTokenizerArgs& a, const Globals& g,
                        std::ostream& out) {
  tokenizer::TokenizerConfig cfg;
  std::size_t seed = 0;
  config::Binder b;
  b.bind("vocab_size", cfg.vocab_size);
  b.bind("coverage", cfg.character_coverage);
  b.bind("sample_chars", cfg.sample_chars);
  b.bind("seed", seed);
  RunManifest m;
  m.subcommand = "train-tokenizer";
  m.config = resolve(b, g, a.flags);
  m.seed = seed;
  cfg.validate();
  m.inputs["in"] = a.in;
  m.outputs["out"] = a.out;
  ensure_parent(a.out);
  write_manifest(m, manifest_beside(a.out));

  tokenizer::TrainReport report;
  auto vocab = tokenizer::train_bpe_file(a.in, cfg, seed, &report);
  tokenizer::save_vocab(vocab, a.out);
  out << "vocab_size " << vocab.size() << "\n"
      << "merges " << vocab.merges().size() << "\n"
      << "characters " << vocab.num_characters() << " of "
      << report.distinct_characters << " distinct\n"
      << "sampled_chars " << report.sampled_chars << " of "
      << report.corpus_chars << "\n";
  return 0;
}

// tokenize -------------------------------------------------------------------

struct TokenizeArgs {
  std::string vocab, text, in;
};

void setup_tokenize(CLI::App* sub, TokenizeArgs& a) {
  sub->add_option("--vocab", a.vocab, "vocabulary file")->required();
  auto* text = sub->add_option("--text", a.text, "text to segment");
  auto* in = sub->add_option("--in", a.in, "file whose lines are segmented");
  text->excludes(in);
  in->excludes(text);
}

void print_segmentation(std::string_view text, const tokenizer::BpeVocab& vocab,
                        std::ostream& out) {
  auto pieces = tokenizer::segment(text, vocab);
  auto ids = tokenizer::encode(text, vocab);
  out << "text    " << text << "\n" << "pieces  ";
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    out << (i ? " | " : "") << pieces[i];
  }
  out << "\nids     ";
  for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i];
  out << "\ntokens  " << ids.size() << "\n";
}

int run_tokenize(const TokenizeArgs& a, const Globals& g, std::ostream& out) {
  warn_unused_seed(g, "tokenize");
  config_entries(g, [](const std::string&) { return false; });
  if (a.in.empty() && a.text.empty()) {
    throw Error(ErrorCode::kConfigInvalid, "tokenize needs --text or --in");
  }
  auto vocab = tokenizer::load_vocab(a.vocab);
  if (a.in.empty()) {
    print_segmentation(a.text, vocab, out);
    return 0;
  }
  std::istringstream lines(read_file(a.in));
  std::string line;
  bool first = true;
  while (std::getline(lines, line)) {
    if (!first) out << "\n";
    first = false;
    print_segmentation(line, vocab, out);
  }
  return 0;
}

// shard ----------------------------------------------------------------------

struct ShardArgs {
  std::string vocab, in, out;
  FlagValues flags;
};

void setup_shard(CLI::App* sub, ShardArgs& a) {
  sub->add_option("--vocab", a.vocab, "vocabulary file")->required();
  sub->add_option("--in", a.in, "cleaned corpus file")->required();
  sub->add_option("--out", a.out, "shard directory")->required();
  add_flag_value(sub, "--shard-tokens", a.flags, "shard_tokens", "tokens per shard");
}

int run_shard(const ShardArgs& a, const Globals& g, std::ostream& out) {
  warn_unused_seed(g, "shard");
  std::size_t shard_tokens = 10'000'000;
  config::Binder b;
  b.bind("shard_tokens", shard_tokens);
  RunManifest m;
  m.subcommand = "shard";
  m.config = resolve(b, g, a.flags);
  m.inputs["vocab"] = a.vocab;
  m.inputs["in"] = a.in;
  m.outputs["out"] = a.out;
  auto vocab = tokenizer::load_vocab(a.vocab);
  std::filesystem::create_directories(a.out);
  write_manifest(m, std::filesystem::path(a.out) / "manifest.json");

  // Every line is one document and ends with the end-of-sequence token.
  shards::ShardWriter writer(a.out, shard_tokens,
                             static_cast<std::uint32_t>(vocab.size()));
  std::ifstream in(a.in, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + a.in);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    writer.push(tokenizer::encode(line, vocab, false, true));
    ++lines;
  }
  const auto total = writer.tokens_written();
  auto files = writer.finish();
  out << "lines " << lines << "\n"
      << "tokens " << total << "\n"
      << "shards " << files.size() << "\n";
  return 0;
}

// verify ---------------------------------------------------------------------

struct VerifyArgs {
  std::string dir;
};

int run_verify(const VerifyArgs& a, const Globals& g, std::ostream& out) {
  warn_unused_seed(g, "verify");
  config_entries(g, [](const std::string&) { return false; });
  auto paths = shards::list_shards(a.dir);
  if (paths.empty()) {
    throw Error(ErrorCode::kSplitEmpty, "no shard files in " + a.dir);
  }
  std::uint64_t total = 0;
  for (const auto& p : paths) {
    auto h = shards::verify_shard(p);
    total += h.token_count;
    out << p.filename().string() << " ok tokens=" << h.token_count
        << " vocab_size=" << h.vocab_size << "\n";
  }
  out << paths.size() << " shards, " << total << " tokens verified\n";
  return 0;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string data, vocab, out, resume;
};

void setup_train(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--data", a.data, "shard directory")->required();
  sub->add_option("--vocab", a.vocab, "vocabulary file")->required();
  sub->add_option("--out", a.out, "run directory for checkpoints and metrics")
      ->required();
  sub->add_option("--resume", a.resume, "checkpoint to continue from");
}

int run_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  trainer::RunConfig cfg;
  const auto run_keys = cfg.to_key_values();
  cfg.apply(config_entries(
      g, [&](const std::string& k) { return run_keys.count(k) != 0; }));
  if (g.seed) cfg.apply({{"seed", std::to_string(*g.seed)}});
  cfg.validate();

  auto vocab = tokenizer::load_vocab(a.vocab);
  if (vocab.size() != cfg.model.vocab_size) {
    throw Error(ErrorCode::kVocabMismatch,
                "vocab file " + a.vocab + " has " + std::to_string(vocab.size()) +
                    " pieces but config vocab_size is " +
                    std::to_string(cfg.model.vocab_size));
  }
  auto split = shards::split_dataset(
      shards::list_shards(a.data), cfg.train.val_fraction,
      cfg.train.shuffle_shards ? std::optional(cfg.train.seed) : std::nullopt);

  RunManifest m;
  m.subcommand = "train";
  m.config = cfg.to_key_values();
  m.seed = cfg.train.seed;
  m.inputs["data"] = a.data;
  m.inputs["vocab"] = a.vocab;
  if (!g.config.empty()) m.inputs["config"] = g.config;
  if (!a.resume.empty()) m.inputs["resume"] = a.resume;
  m.outputs["out"] = a.out;
  std::filesystem::create_directories(a.out);
  write_manifest(m, std::filesystem::path(a.out) / "manifest.json");

  trainer::TrainerOptions opts;
  opts.out_dir = a.out;
  auto tr = a.resume.empty()
                ? trainer::Trainer(cfg, split.train, split.val, opts)
                : trainer::Trainer::resume(cfg, split.train, split.val,
                                           checkpoint::load(a.resume), opts);
  tr.run();
  out << trainer::metrics_csv_header() << "\n";
  if (!tr.metrics().empty()) {
    out << trainer::metrics_csv_row(tr.metrics().back()) << "\n";
  }
  return 0;
}

// eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data;
  FlagValues flags;
};

void setup_eval(CLI::App* sub, EvalArgs& a) {
  sub->add_option("--ckpt", a.ckpt, "checkpoint file")->required();
  sub->add_option("--data", a.data, "shard directory")->required();
  add_flag_value(sub, "--batches", a.flags, "batches", "validation batches");
}

trainer::RunConfig run_config_of(const checkpoint::Checkpoint& ck) {
  trainer::RunConfig cfg;
  auto it = ck.meta.find("run_config");
  if (it == ck.meta.end()) {
    throw Error(ErrorCode::kCorruptFile, "checkpoint has no run_config");
  }
  cfg.apply(config::parse_key_values(it->second));
  return cfg;
}

int run_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  warn_unused_seed(g, "eval");
  auto ck = checkpoint::load(a.ckpt);
  auto run = run_config_of(ck);
  std::size_t batches = run.train.val_batches;
  config::Binder b;
  b.bind("batches", batches);
  resolve(b, g, a.flags);
  auto split = shards::split_dataset(shards::list_shards(a.data),
                                     run.train.val_fraction);
  auto params = checkpoint::params_from(ck);
  auto report = eval::evaluate(params, split.val, batches, run.train.micro_batch,
                               run.model.seq_len, run.tiling);
  // Rows are labelled with the index of the last completed optimizer step, as
  // in metrics.csv.
  const std::uint64_t done =
      ck.meta.count("step") ? std::stoull(ck.meta.at("step")) : 0;
  out << eval::eval_report_csv(report, done ? done - 1 : 0) << "\n";
  return 0;
}

// sample ---------------------------------------------------------------------

struct SampleArgs {
  std::string ckpt, vocab, prompt;
  FlagValues flags;
};

void setup_sample(CLI::App* sub, SampleArgs& a) {
  sub->add_option("--ckpt", a.ckpt, "checkpoint file")->required();
  sub->add_option("--vocab", a.vocab, "vocabulary file")->required();
  sub->add_option("--prompt", a.prompt, "prompt text");
  add_flag_value(sub, "--max-tokens", a.flags, "max_tokens", "tokens to generate");
  add_flag_value(sub, "--temperature", a.flags, "temperature",
                 "softmax temperature, 0 for greedy");
  add_flag_value(sub, "--top-k", a.flags, "top_k", "keep the k most likely tokens, 0 for all");
}

int run_sample(const SampleArgs& a, const Globals& g, std::ostream& out) {
  eval::SampleConfig cfg;
  std::size_t seed = 0;
  config::Binder b;
  b.bind("max_tokens", cfg.max_new_tokens);
  b.bind("temperature", cfg.temperature);
  b.bind("top_k", cfg.top_k);
  b.bind("seed", seed);
  resolve(b, g, a.flags);
  cfg.seed = seed;
  cfg.validate();
  auto params = checkpoint::params_from(checkpoint::load(a.ckpt));
  auto vocab = tokenizer::load_vocab(a.vocab);
  auto gen = eval::generate(params, vocab, a.prompt, cfg);
  out << gen.text << "\n";
  return 0;
}

// self-test ------------------------------------------------------------------

int run_self_test(std::ostream& out) {
  int failed = 0;
  for (const auto& c : self_test::run_grad_checks()) {
    if (!c.passed()) ++failed;
    out << (c.passed() ? "PASS " : "FAIL ") << c.name << ": max relative error "
        << fmt::format("{:.3e}", c.max_rel_error) << " < "
        << fmt::format("{:g}", c.tolerance) << " over " << c.entries_checked
        << " entries\n";
  }
  if (failed) {
    throw Error(ErrorCode::kNonFiniteGradient,
                std::to_string(failed) + " gradient checks failed");
  }
  return 0;
}

// dispatch -------------------------------------------------------------------

void configure_logging(const std::string& level) {
  auto logger = spdlog::get("nepgpt");
  if (!logger) logger = spdlog::stderr_color_mt("nepgpt");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

bool takes_value(const std::string& arg) {
  return arg == "--config" || arg == "--seed" || arg == "--threads" ||
         arg == "--log-level";
}

// The first bare word must name a subcommand; global options may precede it.
std::optional<std::string> unknown_subcommand(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (takes_value(a)) {
      ++i;
      continue;
    }
    if (a.starts_with("-")) continue;
    if (std::find(std::begin(kSubcommands), std::end(kSubcommands), a) ==
        std::end(kSubcommands)) {
      return a;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"Nepali GPT-2 toolkit: corpus cleaning, tokenizer, shards, "
               "training, evaluation and sampling",
               "nepgpt"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key=value config file");
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads")
      ->check(CLI::Range(1u, 1024u));
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  CleanArgs clean;
  TrainTokenizerArgs train_tok;
  TokenizeArgs tokenize;
  ShardArgs shard;
  VerifyArgs verify;
  TrainArgs train;
  EvalArgs evaluate;
  SampleArgs sample;
  bool grad_check = false;

  auto* s_clean = app.add_subcommand("clean", "clean raw text into one corpus file");
  setup_clean(s_clean, clean);
  auto* s_train_tok =
      app.add_subcommand("train-tokenizer", "train a BPE vocabulary");
  setup_train_tokenizer(s_train_tok, train_tok);
  auto* s_tokenize =
      app.add_subcommand("tokenize", "show the piece segmentation of text");
  setup_tokenize(s_tokenize, tokenize);
  auto* s_shard = app.add_subcommand("shard", "encode a corpus into token shards");
  setup_shard(s_shard, shard);
  auto* s_verify = app.add_subcommand("verify", "check every shard in a directory");
  s_verify->add_option("--dir", verify.dir, "shard directory")->required();
  auto* s_train = app.add_subcommand("train", "train the model");
  setup_train(s_train, train);
  auto* s_eval = app.add_subcommand("eval", "validation loss of a checkpoint");
  setup_eval(s_eval, evaluate);
  auto* s_sample = app.add_subcommand("sample", "generate text from a checkpoint");
  setup_sample(s_sample, sample);
  auto* s_self = app.add_subcommand("self-test", "built-in numerical checks");
  s_self->add_flag("--grad-check", grad_check,
                   "finite-difference gradient checks")
      ->required();

  if (auto bad = unknown_subcommand(args)) {
    err << "error: UnknownSubcommand: '" << *bad << "'\n\n" << app.help();
    return static_cast<int>(ErrorClass::kUsage);
  }

  CLI::App* active = &app;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    auto subs = app.get_subcommands();
    if (!subs.empty()) active = subs.front();
    const bool conflict = dynamic_cast<const CLI::ExcludesError*>(&e) != nullptr;
    err << "error: " << (conflict ? "ConflictingFlags: " : "") << e.what()
        << "\n\n"
        << active->help();
    return static_cast<int>(ErrorClass::kUsage);
  }

  try {
    configure_logging(g.log_level);
    if (s_clean->parsed()) return run_clean(clean, g, out);
    if (s_train_tok->parsed()) return run_train_tokenizer(train_tok, g, out);
    if (s_tokenize->parsed()) return run_tokenize(tokenize, g, out);
    if (s_shard->parsed()) return run_shard(shard, g, out);
    if (s_verify->parsed()) return run_verify(verify, g, out);
    if (s_train->parsed()) return run_train(train, g, out);
    if (s_eval->parsed()) return run_eval(evaluate, g, out);
    if (s_sample->parsed()) return run_sample(sample, g, out);
    if (s_self->parsed()) return run_self_test(out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.error_class() == ErrorClass::kUsage) {
      auto subs = app.get_subcommands();
      err << "\n" << (subs.empty() ? app.help() : subs.front()->help());
    }
    return static_cast<int>(e.error_class());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: IoFailure: " << e.what() << "\n";
    return static_cast<int>(ErrorClass::kIo);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorClass::kIo);
  }
  err << app.help();
  return static_cast<int>(ErrorClass::kUsage);
}

}  // namespace nepgpt::cli
