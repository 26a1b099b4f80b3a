#include "nepgpt/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nepgpt/error.hpp"
#include "test_support.hpp"

namespace nepgpt::eval {
namespace {

using model::TokenId;
using shards::DatasetSplit;
using shards::SplitRole;

struct TableRow {
  double val_loss;
  double perplexity;
};

// Validation loss and perplexity columns of the reference training log.
constexpr TableRow kReferenceLog[] = {
    {9.8449, 18862.37}, {5.4479, 232.28}, {4.4944, 89.52}, {3.7757, 43.63},
    {3.4703, 32.15},    {3.2102, 24.79},  {3.1450, 23.22}, {3.0820, 21.80},
};

TEST(Perplexity, ReferenceLogIdentity) {
  for (const auto& row : kReferenceLog) {
    EXPECT_LT(std::abs(perplexity(row.val_loss) - row.perplexity),
              0.005 * row.perplexity)
        << row.val_loss;
  }
  EXPECT_NEAR(perplexity(3.0820), 21.80, 0.005);
  EXPECT_NEAR(perplexity(5.4479), 232.28, 0.02);
  EXPECT_EQ(perplexity(0.0), 1.0);
}

TEST(Perplexity, UniformModelEqualsVocabularySize) {
  const std::size_t v = 16384;
  tensor::Graph<double> g;
  tensor::Tensor<double> logits({2, v});
  std::vector<std::uint16_t> targets = {7, 16000};
  const double loss = tensor::softmax_cross_entropy(g, logits, targets).item();
  EXPECT_NEAR(loss, 9.7041, 5e-5);
  EXPECT_NEAR(perplexity(loss), 16384.0, 16384.0 * 1e-6);
  EXPECT_NEAR(perplexity(std::log(16384.0)), 16384.0, 16384.0 * 1e-12);
}

DatasetSplit val_split(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return DatasetSplit::from_tokens(testing::random_tokens(n, 64, rng), 64,
                                   SplitRole::kVal);
}

TEST(Evaluate, MeanOverBatchesAndDeterministic) {
  auto params = model::init_params<float>(testing::tiny_config(), 3);
  auto split = val_split(500, 4);
  auto a = evaluate(params, split, 5, 2, 8);
  auto b = evaluate(params, split, 5, 2, 8);
  EXPECT_EQ(a.mean_loss, b.mean_loss);
  EXPECT_EQ(a.perplexity, b.perplexity);
  EXPECT_EQ(a.batches_evaluated, 5u);
  EXPECT_EQ(a.tokens_evaluated, 80u);
  EXPECT_EQ(a.role, SplitRole::kVal);
  EXPECT_NEAR(a.perplexity, std::exp(a.mean_loss), 1e-9 * a.perplexity);

  // Oracle: batch i holds rows starting at 16 i and 16 i + 8, each a window
  // of 9 tokens split into inputs and shifted targets.
  double total = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<TokenId> in, tgt;
    for (std::size_t r = 0; r < 2; ++r) {
      std::vector<TokenId> w(9);
      split.copy_tokens(i * 16 + r * 8, std::span<TokenId>(w));
      in.insert(in.end(), w.begin(), w.end() - 1);
      tgt.insert(tgt.end(), w.begin() + 1, w.end());
    }
    total += model::mean_loss(params, std::span<const TokenId>(in), tgt, 2, 8);
  }
  EXPECT_NEAR(a.mean_loss, total / 5, 1e-12);
  EXPECT_GT(a.mean_loss, 3.5);  // near ln(64) at init
  EXPECT_LT(a.mean_loss, 4.8);
}

TEST(Evaluate, Errors) {
  auto params = model::init_params<float>(testing::tiny_config(), 3);
  auto tiny = val_split(5, 1);
  try {
    evaluate(params, tiny, 1, 1, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSplitEmpty);
  }
  EXPECT_THROW(evaluate(params, val_split(100, 1), 0, 1, 8), Error);
}

TEST(Evaluate, CsvRowMatchesMetricsSchema) {
  EvalReport r;
  r.mean_loss = 3.082;
  r.perplexity = perplexity(3.082);
  r.tokens_evaluated = 163840;
  r.batches_evaluated = 20;
  EXPECT_EQ(eval_report_csv(r, 3299), "3299,,3.082000,,163840,21.8020,");
  const std::string row = eval_report_csv(r, 0);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 6);
}

TEST(SampleNext, GreedyAndTopOne) {
  std::vector<float> logits = {0.1f, 2.5f, -1.0f, 2.4f, 0.0f};
  std::mt19937_64 rng(1);
  SampleConfig greedy;
  greedy.temperature = 0.0;
  greedy.top_k = 3;
  EXPECT_EQ(sample_next(logits, greedy, rng), 1);
  SampleConfig top1;
  top1.top_k = 1;
  for (double t : {0.1, 1.0, 5.0, 100.0}) {
    top1.temperature = t;
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_next(logits, top1, rng), 1);
  }
  std::vector<float> tie = {1.0f, 3.0f, 3.0f};
  EXPECT_EQ(sample_next(tie, greedy, rng), 1);
}

TEST(SampleNext, TopKSupport) {
  std::vector<float> logits = {0.1f, 2.5f, -1.0f, 2.4f, 0.0f};
  std::mt19937_64 rng(2);
  SampleConfig cfg;
  cfg.top_k = 2;
  cfg.temperature = 10.0;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 2000; ++i) ++counts[sample_next(logits, cfg, rng)];
  EXPECT_EQ(counts[0] + counts[2] + counts[4], 0);
  EXPECT_GT(counts[1], 0);
  EXPECT_GT(counts[3], 0);
}

TEST(SampleNext, EmpiricalFrequenciesMatchSoftmax) {
  const std::vector<float> logits = {1.0f, 0.0f, -0.5f, 2.0f};
  double z = 0;
  for (float l : logits) z += std::exp(static_cast<double>(l));
  std::mt19937_64 rng(3);
  SampleConfig cfg;  // temperature 1, no truncation
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[sample_next(logits, cfg, rng)];
  for (std::size_t k = 0; k < 4; ++k) {
    const double p = std::exp(static_cast<double>(logits[k])) / z;
    const double sigma = std::sqrt(n * p * (1 - p));
    EXPECT_LT(std::abs(counts[k] - n * p), 3 * sigma) << k;
  }
}

TEST(SampleConfig, Validation) {
  SampleConfig cfg;
  cfg.temperature = -0.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.temperature = NAN;
  EXPECT_THROW(cfg.validate(), Error);
}

model::GptParams<float> small_model(std::size_t vocab, std::uint64_t seed) {
  auto cfg = testing::tiny_config();
  cfg.vocab_size = vocab;
  return model::init_params<float>(cfg, seed);
}

TEST(Generate, GreedyIgnoresSeedAndTopOneMatchesGreedy) {
  auto p = small_model(64, 5);
  std::vector<TokenId> prompt = {10, 11, 12};
  SampleConfig greedy;
  greedy.temperature = 0.0;
  greedy.max_new_tokens = 20;  // slides past seq_len 8
  greedy.seed = 1;
  auto a = generate_ids(p, prompt, greedy);
  greedy.seed = 999;
  auto b = generate_ids(p, prompt, greedy);
  EXPECT_EQ(a.new_ids, b.new_ids);
  EXPECT_EQ(a.prompt_ids, prompt);
  EXPECT_TRUE(a.stopped_at_eos || a.new_ids.size() == 20u);

  SampleConfig top1;
  top1.top_k = 1;
  top1.temperature = 0.7;
  top1.max_new_tokens = 20;
  top1.seed = 42;
  EXPECT_EQ(generate_ids(p, prompt, top1).new_ids, a.new_ids);
}

TEST(Generate, SeededSamplingIsDeterministic) {
  auto p = small_model(64, 6);
  SampleConfig cfg;
  cfg.temperature = 1.5;
  cfg.max_new_tokens = 30;
  cfg.seed = 7;
  auto a = generate_ids(p, {4, 5}, cfg);
  auto b = generate_ids(p, {4, 5}, cfg);
  EXPECT_EQ(a.new_ids, b.new_ids);
  cfg.seed = 8;
  auto c = generate_ids(p, {4, 5}, cfg);
  EXPECT_NE(a.new_ids, c.new_ids);
}

TEST(Generate, SlidingWindowKeepsLastTokens) {
  // seq_len 8: the model sees at most the last 7 tokens, so the second token
  // generated from a 7-token prompt equals the first token generated from
  // the prompt's last 6 tokens plus the first generated token.
  auto p = small_model(64, 9);
  SampleConfig greedy;
  greedy.temperature = 0.0;
  greedy.max_new_tokens = 2;
  std::vector<TokenId> prompt = {20, 21, 22, 23, 24, 25, 26};
  auto two = generate_ids(p, prompt, greedy);
  ASSERT_EQ(two.new_ids.size(), 2u);
  std::vector<TokenId> shifted(prompt.begin() + 1, prompt.end());
  shifted.push_back(two.new_ids[0]);
  greedy.max_new_tokens = 1;
  auto one = generate_ids(p, shifted, greedy);
  ASSERT_EQ(one.new_ids.size(), 1u);
  EXPECT_EQ(one.new_ids[0], two.new_ids[1]);
}

TEST(Generate, StopsAtEos) {
  auto p = small_model(64, 10);
  // Make the end-of-sequence logit dominate: logits = ln_f_bias . wte^T.
  const std::size_t d = p.config.d_model;
  auto wte = p.wte.data();
  for (std::size_t c = 0; c < d; ++c) {
    wte[tokenizer::kEosId * d + c] = 5.0f;
    p.ln_f_weight.data()[c] = 0.0f;
    p.ln_f_bias.data()[c] = 5.0f;
  }
  SampleConfig greedy;
  greedy.temperature = 0.0;
  auto gen = generate_ids(p, {7}, greedy);
  EXPECT_TRUE(gen.stopped_at_eos);
  EXPECT_TRUE(gen.new_ids.empty());
}

TEST(Generate, PromptTooLong) {
  auto p = small_model(64, 11);
  std::vector<TokenId> prompt(8, 5);  // == seq_len
  try {
    generate_ids(p, prompt, SampleConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPromptTooLong);
  }
  prompt.pop_back();
  EXPECT_NO_THROW(generate_ids(p, prompt, SampleConfig{}));
}

TEST(Generate, TextRoundTripsThroughVocabulary) {
  tokenizer::TokenizerConfig tc;
  tc.vocab_size = 320;
  tc.character_coverage = 1.0;
  auto vocab = tokenizer::train_bpe(testing::devanagari_lines(300, 1), tc, 0);
  auto p = small_model(vocab.size(), 12);
  SampleConfig cfg;
  cfg.max_new_tokens = 5;
  cfg.seed = 3;
  auto gen = generate(p, vocab, "नेपाल", cfg);
  EXPECT_EQ(gen.text.rfind("नेपाल", 0), 0u);
  std::vector<TokenId> all = gen.prompt_ids;
  all.insert(all.end(), gen.new_ids.begin(), gen.new_ids.end());
  EXPECT_EQ(gen.text, tokenizer::decode(all, vocab));

  auto wrong = small_model(64, 12);
  try {
    generate(wrong, vocab, "नेपाल", cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVocabMismatch);
  }
}

}  // namespace
}  // namespace nepgpt::eval
