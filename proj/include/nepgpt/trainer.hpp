#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nepgpt/checkpoint.hpp"
#include "nepgpt/config_file.hpp"
#include "nepgpt/model.hpp"
#include "nepgpt/shards.hpp"

namespace nepgpt::trainer {

struct LrSchedule {
  double max_lr = 6e-4;
  double min_lr = 6e-5;
  std::uint64_t warmup_steps = 715;
  std::uint64_t total_steps = 3300;

  void validate() const;
};

// Linear warmup to max_lr over warmup_steps, then half-cosine to min_lr at
// total_steps. Throws StepOutOfRange outside [0, total_steps).
double lr_at(std::uint64_t step, const LrSchedule& sched);

struct OptimHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // 0 disables clipping

  void validate() const;
};

// Decoupled weight decay applies to parameters of rank >= 2 only.
inline bool in_decay_set(const tensor::Shape& shape) {
  return shape.size() >= 2;
}

// One optimizer slot: a parameter, its gradient and its two moments.
struct AdamWSlot {
  std::span<float> param;
  std::span<const float> grad;
  std::span<float> m;
  std::span<float> v;
  bool decay = false;
};

// Applies one AdamW step to every slot with step counter t -> t + 1. The update
// is evaluated in double and stored in float. Throws NonFiniteGradient, leaving
// parameters, moments and t untouched, if any gradient is not finite.
void adamw_step(std::span<AdamWSlot> slots, std::uint64_t& t,
                const OptimHyper& hyper, double lr);

// Scales all gradients by clip_norm / norm when the global L2 norm exceeds
// clip_norm (> 0). Returns the pre-clip norm. Throws NonFiniteGradient.
double clip_gradients(std::span<const std::span<float>> grads,
                      double clip_norm);

struct TrainConfig {
  std::size_t micro_batch = 8;
  std::size_t grad_accum = 64;
  std::size_t seq_len = 1024;
  std::size_t epochs = 2;
  std::uint64_t seed = 1337;
  std::uint64_t checkpoint_every = 500;
  std::uint64_t log_every = 500;
  std::size_t val_batches = 20;
  double val_fraction = 0.01;
  // Visit training shards in an order shuffled by `seed` instead of by name.
  bool shuffle_shards = false;

  std::uint64_t tokens_per_step() const {
    return static_cast<std::uint64_t>(micro_batch) * grad_accum * seq_len;
  }
  void validate() const;
};

// Everything that determines a training run. The config file uses exactly
// these field names as keys.
struct RunConfig {
  model::GptConfig model;
  TrainConfig train;
  LrSchedule sched;
  OptimHyper optim;
  attention::AttnTiling tiling;

  RunConfig() { train.seq_len = model.seq_len; }

  void apply(const config::KeyValues& kv);
  config::KeyValues to_key_values() const;
  std::uint64_t hash() const { return config::config_hash(to_key_values()); }
  void validate() const;
};

struct MetricsRecord {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double lr = 0.0;
  std::uint64_t tokens = 0;
  std::optional<double> perplexity;
  double wall_time = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& rec);

struct TrainerOptions {
  // When set, checkpoints and metrics.csv are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const MetricsRecord&)> on_metrics;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, shards::DatasetSplit train,
          std::optional<shards::DatasetSplit> val, TrainerOptions opts = {});

  // Restores parameters, optimizer state, step and data cursor. Throws
  // ConfigMismatch when the checkpoint was written under another config.
  static Trainer resume(RunConfig cfg, shards::DatasetSplit train,
                        std::optional<shards::DatasetSplit> val,
                        const checkpoint::Checkpoint& ckpt,
                        TrainerOptions opts = {});

  // Runs one optimizer step (grad_accum micro-batches) and returns its
  // mean training loss.
  double step();
  // Runs steps, logging and checkpointing, until `steps_done() == n`.
  void run_until(std::uint64_t n);
  void run() { run_until(cfg_.sched.total_steps); }

  // Mean loss over val_batches fixed batches from the start of the val split.
  double evaluate_val() const;

  checkpoint::Checkpoint make_checkpoint() const;
  std::filesystem::path checkpoint_path(std::uint64_t step) const;

  const RunConfig& config() const { return cfg_; }
  const model::GptParams<float>& params() const { return params_; }
  model::GptParams<float>& params() { return params_; }
  std::uint64_t steps_done() const { return opt_t_; }
  shards::Cursor cursor() const { return cursor_; }
  std::uint64_t tokens_processed() const { return tokens_; }
  const std::vector<MetricsRecord>& metrics() const { return metrics_; }
  double last_grad_norm() const { return last_norm_; }

 private:
  void save_checkpoint() const;
  void append_metrics(const MetricsRecord& rec);

  RunConfig cfg_;
  shards::DatasetSplit train_;
  std::optional<shards::DatasetSplit> val_;
  TrainerOptions opts_;
  model::GptParams<float> params_;
  std::vector<std::vector<float>> m_, v_;
  std::uint64_t opt_t_ = 0;
  shards::Cursor cursor_;
  std::uint64_t tokens_ = 0;
  std::vector<MetricsRecord> metrics_;
  double last_norm_ = 0.0;
  double wall_offset_ = 0.0;
};

}  // namespace nepgpt::trainer
