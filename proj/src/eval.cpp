#include "nepgpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "nepgpt/error.hpp"

namespace nepgpt::eval {

using model::TokenId;

EvalReport evaluate(const model::GptParams<float>& params,
                    const shards::DatasetSplit& split, std::size_t n_batches,
                    std::size_t micro_batch, std::size_t seq_len,
                    const attention::AttnTiling& tiling) {
  if (n_batches == 0) {
    throw Error(ErrorCode::kConfigInvalid, "n_batches must be >= 1");
  }
  if (split.token_count() == 0) {
    throw Error(ErrorCode::kSplitEmpty, "split holds no tokens");
  }
  model::ForwardOptions fo;
  fo.attn.tiling = tiling;
  shards::Cursor cur;
  double total = 0.0;
  for (std::size_t i = 0; i < n_batches; ++i) {
    auto [batch, next] = shards::next_batch(split, cur, micro_batch, seq_len);
    cur = next;
    total += model::mean_loss(params, std::span<const TokenId>(batch.inputs),
                              batch.targets, micro_batch, seq_len, fo);
  }
  EvalReport r;
  r.role = split.role();
  r.batches_evaluated = n_batches;
  r.mean_loss = total / static_cast<double>(n_batches);
  r.perplexity = perplexity(r.mean_loss);
  r.tokens_evaluated =
      static_cast<std::uint64_t>(n_batches) * micro_batch * seq_len;
  return r;
}

std::string eval_report_csv(const EvalReport& r, std::uint64_t step) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,,%.6f,,%llu,%.4f,",
                static_cast<unsigned long long>(step), r.mean_loss,
                static_cast<unsigned long long>(r.tokens_evaluated),
                r.perplexity);
  return buf;
}

void SampleConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::kConfigInvalid, "temperature must be >= 0");
  }
}

TokenId sample_next(std::span<const float> logits, const SampleConfig& cfg,
                    std::mt19937_64& rng) {
  if (logits.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "sample_next: empty logits");
  }
  if (cfg.temperature == 0.0) {
    // first maximum wins ties
    return static_cast<TokenId>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t keep = logits.size();
  if (cfg.top_k > 0 && cfg.top_k < logits.size()) {
    keep = cfg.top_k;
    std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return logits[a] > logits[b] ||
                               (logits[a] == logits[b] && a < b);
                      });
    order.resize(keep);
    std::sort(order.begin(), order.end());
  }
  double mx = -INFINITY;
  for (auto i : order) mx = std::max(mx, logits[i] / cfg.temperature);
  std::vector<double> p(order.size());
  double total = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    p[j] = std::exp(logits[order[j]] / cfg.temperature - mx);
    total += p[j];
  }
  // 53 random bits -> u in [0, 1)
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    acc += p[j];
    if (u < acc) return static_cast<TokenId>(order[j]);
  }
  return static_cast<TokenId>(order.back());
}

Generation generate_ids(const model::GptParams<float>& params,
                        std::vector<TokenId> prompt, const SampleConfig& cfg) {
  cfg.validate();
  const auto& mc = params.config;
  if (prompt.size() >= mc.seq_len) {
    throw Error(ErrorCode::kPromptTooLong,
                "prompt encodes to " + std::to_string(prompt.size()) +
                    " tokens; must be < seq_len " + std::to_string(mc.seq_len));
  }
  Generation gen;
  gen.prompt_ids = prompt;
  std::vector<TokenId> context = std::move(prompt);
  if (context.empty()) context.push_back(tokenizer::kEosId);
  const std::size_t window = std::max<std::size_t>(1, mc.seq_len - 1);
  std::mt19937_64 rng(cfg.seed);
  tensor::Graph<float> g;
  g.set_enabled(false);
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    const std::size_t n = std::min(context.size(), window);
    std::span<const TokenId> in(context.data() + context.size() - n, n);
    auto logits = model::forward(g, params, in, 1, n);
    auto all = logits.data();
    std::span<const float> last(all.data() + (n - 1) * mc.vocab_size,
                                mc.vocab_size);
    TokenId next = sample_next(last, cfg, rng);
    if (next == tokenizer::kEosId) {
      gen.stopped_at_eos = true;
      break;
    }
    gen.new_ids.push_back(next);
    context.push_back(next);
  }
  return gen;
}

Generation generate(const model::GptParams<float>& params,
                    const tokenizer::BpeVocab& vocab, std::string_view prompt,
                    const SampleConfig& cfg) {
  if (vocab.size() != params.config.vocab_size) {
    throw Error(ErrorCode::kVocabMismatch,
                "vocab file has " + std::to_string(vocab.size()) +
                    " pieces, model vocab_size is " +
                    std::to_string(params.config.vocab_size));
  }
  Generation gen = generate_ids(params, tokenizer::encode(prompt, vocab), cfg);
  std::vector<TokenId> all = gen.prompt_ids;
  all.insert(all.end(), gen.new_ids.begin(), gen.new_ids.end());
  gen.text = tokenizer::decode(all, vocab);
  return gen;
}

}  // namespace nepgpt::eval
