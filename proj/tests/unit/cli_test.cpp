#include "cli.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "nepgpt/binary_io.hpp"
#include "nepgpt/checkpoint.hpp"
#include "nepgpt/shards.hpp"
#include "test_support.hpp"

namespace nepgpt::cli {
namespace {

using testing::TempDir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& path) { return path.string(); }

TEST(Dispatch, UnknownSubcommandPrintsUsage) {
  auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("UnknownSubcommand"), std::string::npos);
  EXPECT_NE(r.err.find("Subcommands:"), std::string::npos);
  EXPECT_EQ(run({"--seed", "3", "frobnicate"}).code, 1);
}

TEST(Dispatch, MissingSubcommandAndBadFlags) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"verify"}).code, 1);  // --dir is required
  EXPECT_EQ(run({"self-test"}).code, 1);
  EXPECT_EQ(run({"--log-level", "loud", "verify", "--dir", "x"}).code, 1);
  auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("train-tokenizer"), std::string::npos);
}

TEST(Dispatch, ConflictingFlags) {
  auto r = run({"tokenize", "--vocab", "v.bpe", "--text", "a", "--in", "f"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("ConflictingFlags"), std::string::npos);
}

TEST(Dispatch, MissingInputIsIoError) {
  TempDir dir;
  EXPECT_EQ(run({"verify", "--dir", p(dir / "absent")}).code, 4);
  EXPECT_EQ(run({"--config", p(dir / "absent.cfg"), "verify", "--dir", p(dir.path())})
                .code,
            4);
}

TEST(Dispatch, UnknownConfigKeyIsUsageError) {
  TempDir dir;
  testing::write_text(dir / "run.cfg", "n_layer=2\nlearning_rate=1\n");
  auto r = run({"--config", p(dir / "run.cfg"), "verify", "--dir", p(dir.path())});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST(Dispatch, SelfTestGradCheck) {
  auto r = run({"self-test", "--grad-check"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS tiny model (32-bit)"), std::string::npos);
  EXPECT_NE(r.out.find("PASS tiny model (64-bit)"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

// Raw documents with markup around Devanagari sentences.
void write_raw_corpus(const std::filesystem::path& dir) {
  auto lines = testing::syllable_lines(1200, 17);
  for (int f = 0; f < 3; ++f) {
    std::string text;
    for (std::size_t i = f; i < lines.size(); i += 3) {
      text += "<p>" + lines[i] + " https://example.org/" + std::to_string(i) +
              "</p>\n";
    }
    testing::write_text(dir / ("doc" + std::to_string(f) + ".txt"), text);
  }
}

TEST(Clean, PrecedenceDefaultsConfigFlags) {
  TempDir dir;
  write_raw_corpus(dir / "raw");
  testing::write_text(dir / "c.cfg", "min_chars=5\ndigits=drop\nn_layer=4\n");

  ASSERT_EQ(run({"clean", "--in", p(dir / "raw"), "--out", p(dir / "a.txt")}).code, 0);
  auto m = read_manifest(dir / "a.txt.manifest.json");
  EXPECT_EQ(m.subcommand, "clean");
  EXPECT_EQ(m.config.at("min_chars"), "12");
  EXPECT_EQ(m.config.at("digits"), "map");

  ASSERT_EQ(run({"--config", p(dir / "c.cfg"), "clean", "--in", p(dir / "raw"),
                 "--out", p(dir / "b.txt")})
                .code,
            0);
  m = read_manifest(dir / "b.txt.manifest.json");
  EXPECT_EQ(m.config.at("min_chars"), "5");
  EXPECT_EQ(m.config.at("digits"), "drop");
  EXPECT_EQ(m.config.count("n_layer"), 0u);  // another stage's key

  ASSERT_EQ(run({"clean", "--config", p(dir / "c.cfg"), "--in", p(dir / "raw"),
                 "--out", p(dir / "c.txt"), "--min-chars", "7"})
                .code,
            0);
  m = read_manifest(dir / "c.txt.manifest.json");
  EXPECT_EQ(m.config.at("min_chars"), "7");
  EXPECT_EQ(m.config_hash(),
            config::hash_hex(config::config_hash(m.config)));
}

TEST(Clean, InvalidChoiceIsUsageError) {
  TempDir dir;
  write_raw_corpus(dir / "raw");
  auto r = run({"clean", "--in", p(dir / "raw"), "--out", p(dir / "a.txt"),
                "--digits", "roman"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("ConfigInvalid"), std::string::npos);
}

TEST(Manifest, JsonRoundTripAndTamperDetection) {
  RunManifest m;
  m.subcommand = "shard";
  m.config = {{"shard_tokens", "100"}};
  m.inputs = {{"in", "clean.txt"}};
  m.outputs = {{"out", "shards"}};
  auto back = RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.inputs, m.inputs);
  EXPECT_FALSE(back.seed.has_value());
  auto j = m.to_json();
  j["config"]["shard_tokens"] = "200";
  EXPECT_THROW(RunManifest::from_json(j), Error);
}

// Runs the whole pipeline on a small corpus with the tiny model.
class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    write_raw_corpus(dir_ / "raw");
    testing::write_text(dir_ / "run.cfg",
                        "n_layer=2\nn_head=2\nd_model=16\nvocab_size=320\n"
                        "seq_len=16\nmicro_batch=4\ngrad_accum=2\n"
                        "warmup_steps=2\ntotal_steps=6\nlog_every=3\n"
                        "checkpoint_every=3\nval_batches=2\nval_fraction=0.25\n"
                        "max_lr=0.003\nmin_lr=0.0003\nshard_tokens=4000\n");
    ASSERT_EQ(cmd({"clean", "--in", p(dir_ / "raw"), "--out", p(dir_ / "clean.txt")}), 0);
    ASSERT_EQ(cmd({"train-tokenizer", "--in", p(dir_ / "clean.txt"), "--out",
                   p(dir_ / "vocab.bpe"), "--vocab-size", "320", "--seed", "5"}),
              0);
    ASSERT_EQ(cmd({"--config", p(dir_ / "run.cfg"), "shard", "--vocab",
                   p(dir_ / "vocab.bpe"), "--in", p(dir_ / "clean.txt"), "--out",
                   p(dir_ / "shards")}),
              0);
  }

  int cmd(std::vector<std::string> args) {
    last_ = run(std::move(args));
    return last_.code;
  }

  TempDir dir_;
  Outcome last_;
};

TEST_F(Pipeline, ShardsVerifyAndTokenize) {
  EXPECT_EQ(cmd({"verify", "--dir", p(dir_ / "shards")}), 0) << last_.err;
  EXPECT_NE(last_.out.find("tokens verified"), std::string::npos);
  auto shards = shards::list_shards(dir_ / "shards");
  ASSERT_GE(shards.size(), 4u);
  EXPECT_EQ(read_manifest(dir_ / "shards" / "manifest.json").config.at("shard_tokens"),
            "4000");

  EXPECT_EQ(cmd({"tokenize", "--vocab", p(dir_ / "vocab.bpe"), "--text", "नेपाल"}), 0);
  EXPECT_EQ(last_.out.rfind("text    नेपाल\npieces  ", 0), 0u) << last_.out;
  EXPECT_NE(last_.out.find("\nids     "), std::string::npos);

  std::string bytes = read_file(shards[1]);
  bytes[shards::kShardHeaderBytes + 3] ^= 0x10;
  write_file_atomic(shards[1], bytes);
  EXPECT_EQ(cmd({"verify", "--dir", p(dir_ / "shards")}), 2);
  EXPECT_NE(last_.err.find("CorruptShard"), std::string::npos);
}

TEST_F(Pipeline, TokenizerTrainingIsReproducible) {
  ASSERT_EQ(cmd({"train-tokenizer", "--in", p(dir_ / "clean.txt"), "--out",
                 p(dir_ / "again.bpe"), "--vocab-size", "320", "--seed", "5"}),
            0);
  EXPECT_EQ(read_file(dir_ / "vocab.bpe"), read_file(dir_ / "again.bpe"));
  auto m = read_manifest(dir_ / "again.bpe.manifest.json");
  ASSERT_TRUE(m.seed.has_value());
  EXPECT_EQ(*m.seed, 5u);
  EXPECT_EQ(m.config.at("vocab_size"), "320");
}

TEST_F(Pipeline, TrainEvalSampleAndResume) {
  const std::string clean_before = read_file(dir_ / "clean.txt");
  const std::string cfg = p(dir_ / "run.cfg");
  ASSERT_EQ(cmd({"--config", cfg, "--log-level", "warn", "train", "--data",
                 p(dir_ / "shards"), "--vocab", p(dir_ / "vocab.bpe"), "--out",
                 p(dir_ / "run")}),
            0)
      << last_.err;
  EXPECT_EQ(last_.out.rfind("step,train_loss,val_loss,lr,tokens,perplexity,wall_time\n5,", 0),
            0u)
      << last_.out;
  auto m = read_manifest(dir_ / "run" / "manifest.json");
  EXPECT_EQ(m.config.at("total_steps"), "6");
  EXPECT_EQ(m.config.count("shard_tokens"), 0u);
  EXPECT_TRUE(std::filesystem::exists(dir_ / "run" / "ckpt_000003.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir_ / "run" / "ckpt_000006.bin"));

  ASSERT_EQ(cmd({"--config", cfg, "--log-level", "warn", "train", "--data",
                 p(dir_ / "shards"), "--vocab", p(dir_ / "vocab.bpe"), "--out",
                 p(dir_ / "resumed"), "--resume", p(dir_ / "run" / "ckpt_000003.bin")}),
            0)
      << last_.err;
  EXPECT_EQ(read_file(dir_ / "run" / "ckpt_000006.bin"),
            read_file(dir_ / "resumed" / "ckpt_000006.bin"));

  ASSERT_EQ(cmd({"eval", "--ckpt", p(dir_ / "run" / "ckpt_000006.bin"), "--data",
                 p(dir_ / "shards"), "--batches", "2"}),
            0)
      << last_.err;
  EXPECT_EQ(last_.out.rfind("5,,", 0), 0u) << last_.out;
  EXPECT_EQ(std::count(last_.out.begin(), last_.out.end(), ','), 6);

  std::vector<std::string> sample = {
      "sample", "--ckpt", p(dir_ / "run" / "ckpt_000006.bin"), "--vocab",
      p(dir_ / "vocab.bpe"), "--prompt", "नेपाल", "--max-tokens", "8",
      "--temperature", "0.9", "--top-k", "20", "--seed", "3"};
  ASSERT_EQ(cmd(sample), 0) << last_.err;
  const std::string first = last_.out;
  EXPECT_EQ(first.rfind("नेपाल", 0), 0u);
  ASSERT_EQ(cmd(sample), 0);
  EXPECT_EQ(last_.out, first);

  EXPECT_EQ(read_file(dir_ / "clean.txt"), clean_before);
}

TEST_F(Pipeline, ShuffledShardOrderIsSeeded) {
  testing::write_text(dir_ / "shuffle.cfg",
                      read_file(dir_ / "run.cfg") + "shuffle_shards=true\n");
  auto train = [&](const std::string& cfg, const std::string& out, const char* seed) {
    return cmd({"--config", p(dir_ / cfg), "--log-level", "warn", "--seed", seed,
                "train", "--data", p(dir_ / "shards"), "--vocab",
                p(dir_ / "vocab.bpe"), "--out", p(dir_ / out)});
  };
  ASSERT_EQ(train("run.cfg", "plain", "1"), 0) << last_.err;
  ASSERT_EQ(train("shuffle.cfg", "a", "1"), 0) << last_.err;
  ASSERT_EQ(train("shuffle.cfg", "b", "1"), 0) << last_.err;
  EXPECT_EQ(read_manifest(dir_ / "a" / "manifest.json").config.at("shuffle_shards"),
            "true");
  EXPECT_EQ(read_file(dir_ / "a" / "ckpt_000006.bin"),
            read_file(dir_ / "b" / "ckpt_000006.bin"));
  // Same seed and data; only the shard order differs.
  auto weights = [&](const std::string& run) {
    auto ck = checkpoint::load(dir_ / run / "ckpt_000006.bin");
    return ck.find("wte.weight")->data;
  };
  EXPECT_NE(weights("plain"), weights("a"));
}

TEST_F(Pipeline, TrainVocabMismatchNamesBothValues) {
  testing::write_text(dir_ / "wrong.cfg",
                      "n_layer=2\nn_head=2\nd_model=16\nvocab_size=400\nseq_len=16\n");
  EXPECT_EQ(cmd({"--config", p(dir_ / "wrong.cfg"), "train", "--data",
                 p(dir_ / "shards"), "--vocab", p(dir_ / "vocab.bpe"), "--out",
                 p(dir_ / "run")}),
            2);
  EXPECT_NE(last_.err.find("VocabMismatch"), std::string::npos);
  EXPECT_NE(last_.err.find("320"), std::string::npos);
  EXPECT_NE(last_.err.find("400"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir_ / "run"));
}

}  // namespace
}  // namespace nepgpt::cli
