#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nepgpt/model.hpp"
#include "nepgpt/shards.hpp"
#include "nepgpt/tokenizer.hpp"

namespace nepgpt::eval {

struct EvalReport {
  shards::SplitRole role = shards::SplitRole::kVal;
  std::size_t batches_evaluated = 0;
  double mean_loss = 0.0;
  double perplexity = 0.0;
  std::uint64_t tokens_evaluated = 0;
};

inline double perplexity(double loss) { return std::exp(loss); }

// Mean cross-entropy over the first n_batches batches of the split, read from
// offset 0. Deterministic: repeated calls return identical reports.
EvalReport evaluate(const model::GptParams<float>& params,
                    const shards::DatasetSplit& split, std::size_t n_batches,
                    std::size_t micro_batch, std::size_t seq_len,
                    const attention::AttnTiling& tiling = {});

// Metrics-log shaped row: step,train_loss,val_loss,lr,tokens,perplexity,wall_time
std::string eval_report_csv(const EvalReport& report, std::uint64_t step);

struct SampleConfig {
  std::size_t max_new_tokens = 64;
  double temperature = 1.0;
  std::size_t top_k = 0;  // 0 disables truncation
  std::uint64_t seed = 0;

  void validate() const;
};

// Picks the next token from one row of logits: greedy when temperature is 0,
// otherwise temperature scaling, optional top-k truncation, renormalization
// and inverse-CDF sampling with a uniform draw from `rng`.
model::TokenId sample_next(std::span<const float> logits,
                           const SampleConfig& cfg, std::mt19937_64& rng);

struct Generation {
  std::vector<model::TokenId> prompt_ids;
  std::vector<model::TokenId> new_ids;
  bool stopped_at_eos = false;
  std::string text;  // decode(prompt_ids + new_ids)
};

// Autoregressive generation. An empty prompt starts from the end-of-sequence
// token. The model sees at most the last max(1, seq_len - 1) tokens.
Generation generate_ids(const model::GptParams<float>& params,
                        std::vector<model::TokenId> prompt,
                        const SampleConfig& cfg);

Generation generate(const model::GptParams<float>& params,
                    const tokenizer::BpeVocab& vocab, std::string_view prompt,
                    const SampleConfig& cfg);

}  // namespace nepgpt::eval
