#include "nepgpt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <spdlog/spdlog.h>

#include "nepgpt/error.hpp"

namespace nepgpt::trainer {

using model::GptParams;
using tensor::Graph;
using tensor::Tensor;

void LrSchedule::validate() const {
  if (!(min_lr > 0.0 && min_lr <= max_lr)) {
    throw Error(ErrorCode::kConfigInvalid, "need 0 < min_lr <= max_lr");
  }
  if (warmup_steps >= total_steps) {
    throw Error(ErrorCode::kConfigInvalid,
                "warmup_steps (" + std::to_string(warmup_steps) +
                    ") must be < total_steps (" + std::to_string(total_steps) +
                    ")");
  }
}

double lr_at(std::uint64_t step, const LrSchedule& s) {
  if (step >= s.total_steps) {
    throw Error(ErrorCode::kStepOutOfRange,
                "step " + std::to_string(step) + " outside [0, " +
                    std::to_string(s.total_steps) + ")");
  }
  if (step < s.warmup_steps) {
    return s.max_lr * static_cast<double>(step + 1) /
           static_cast<double>(s.warmup_steps);
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.min_lr +
         0.5 * (s.max_lr - s.min_lr) * (1.0 + std::cos(M_PI * progress));
}

void OptimHyper::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::kConfigInvalid, "epsilon must be > 0");
  }
  if (!(weight_decay >= 0.0) || !(clip_norm >= 0.0)) {
    throw Error(ErrorCode::kConfigInvalid,
                "weight_decay and clip_norm must be >= 0");
  }
}

void adamw_step(std::span<AdamWSlot> slots, std::uint64_t& t,
                const OptimHyper& h, double lr) {
  for (const auto& s : slots) {
    for (float g : s.grad) {
      if (!std::isfinite(g)) {
        throw Error(ErrorCode::kNonFiniteGradient,
                    "non-finite gradient; optimizer step skipped");
      }
    }
  }
  const std::uint64_t t1 = t + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t1));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t1));
  for (auto& s : slots) {
    for (std::size_t i = 0; i < s.param.size(); ++i) {
      const double g = s.grad[i];
      const double m = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
      const double v = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      const double w = s.param[i];
      double next = w - lr * (m / bc1) / (std::sqrt(v / bc2) + h.epsilon);
      if (s.decay) next -= lr * h.weight_decay * w;
      s.param[i] = static_cast<float>(next);
    }
  }
  t = t1;
}

double clip_gradients(std::span<const std::span<float>> grads,
                      double clip_norm) {
  double sq = 0.0;
  for (auto g : grads) {
    for (float x : g) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    throw Error(ErrorCode::kNonFiniteGradient, "gradient norm is not finite");
  }
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto g : grads) {
      for (float& x : g) x = static_cast<float>(x * scale);
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  if (micro_batch == 0 || grad_accum == 0 || seq_len == 0) {
    throw Error(ErrorCode::kConfigInvalid,
                "micro_batch, grad_accum and seq_len must be >= 1");
  }
  if (log_every == 0) {
    throw Error(ErrorCode::kConfigInvalid, "log_every must be >= 1");
  }
  if (val_batches == 0) {
    throw Error(ErrorCode::kConfigInvalid, "val_batches must be >= 1");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "val_fraction must be in (0, 1)");
  }
}

namespace {

void bind_all(config::Binder& b, RunConfig& c) {
  b.bind("n_layer", c.model.n_layer);
  b.bind("n_head", c.model.n_head);
  b.bind("d_model", c.model.d_model);
  b.bind("vocab_size", c.model.vocab_size);
  b.bind("seq_len", c.model.seq_len);
  b.bind("tie_embeddings", c.model.tie_embeddings);
  b.bind("dropout", c.model.dropout);
  b.bind("micro_batch", c.train.micro_batch);
  b.bind("grad_accum", c.train.grad_accum);
  b.bind("epochs", c.train.epochs);
  b.bind("seed", c.train.seed);
  b.bind("checkpoint_every", c.train.checkpoint_every);
  b.bind("log_every", c.train.log_every);
  b.bind("val_batches", c.train.val_batches);
  b.bind("val_fraction", c.train.val_fraction);
  b.bind("shuffle_shards", c.train.shuffle_shards);
  b.bind("max_lr", c.sched.max_lr);
  b.bind("min_lr", c.sched.min_lr);
  b.bind("warmup_steps", c.sched.warmup_steps);
  b.bind("total_steps", c.sched.total_steps);
  b.bind("beta1", c.optim.beta1);
  b.bind("beta2", c.optim.beta2);
  b.bind("epsilon", c.optim.epsilon);
  b.bind("weight_decay", c.optim.weight_decay);
  b.bind("clip_norm", c.optim.clip_norm);
  b.bind("block_rows", c.tiling.block_rows);
  b.bind("block_cols", c.tiling.block_cols);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

void RunConfig::apply(const config::KeyValues& kv) {
  config::Binder b;
  bind_all(b, *this);
  b.apply(kv);
  train.seq_len = model.seq_len;
}

config::KeyValues RunConfig::to_key_values() const {
  RunConfig copy = *this;
  config::Binder b;
  bind_all(b, copy);
  return b.resolved();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  sched.validate();
  optim.validate();
  tiling.validate();
  if (train.seq_len != model.seq_len) {
    throw Error(ErrorCode::kConfigInvalid,
                "training seq_len must equal the model seq_len");
  }
}

std::string metrics_csv_header() {
  return "step,train_loss,val_loss,lr,tokens,perplexity,wall_time";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string out = std::to_string(r.step) + ",";
  out += fmt("%.6f", r.train_loss) + ",";
  out += (r.val_loss ? fmt("%.6f", *r.val_loss) : "") + ",";
  out += fmt("%.6e", r.lr) + ",";
  out += std::to_string(r.tokens) + ",";
  out += (r.perplexity ? fmt("%.4f", *r.perplexity) : "") + ",";
  out += fmt("%.3f", r.wall_time);
  return out;
}

namespace {
double now_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}
}  // namespace

Trainer::Trainer(RunConfig cfg, shards::DatasetSplit train,
                 std::optional<shards::DatasetSplit> val, TrainerOptions opts)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      val_(std::move(val)),
      opts_(std::move(opts)) {
  cfg_.validate();
  auto check_vocab = [&](const shards::DatasetSplit& s, const char* which) {
    if (s.vocab_size() != cfg_.model.vocab_size) {
      throw Error(ErrorCode::kVocabMismatch,
                  std::string(which) + " data vocab_size " +
                      std::to_string(s.vocab_size()) +
                      " != model vocab_size " +
                      std::to_string(cfg_.model.vocab_size));
    }
  };
  check_vocab(train_, "training");
  if (val_) check_vocab(*val_, "validation");
  params_ = model::init_params<float>(cfg_.model, cfg_.train.seed);
  for (const auto& [name, t] : params_.named()) {
    m_.emplace_back(t.numel(), 0.0f);
    v_.emplace_back(t.numel(), 0.0f);
  }
  wall_offset_ = now_seconds();
  if (opts_.out_dir) std::filesystem::create_directories(*opts_.out_dir);
}

Trainer Trainer::resume(RunConfig cfg, shards::DatasetSplit train,
                        std::optional<shards::DatasetSplit> val,
                        const checkpoint::Checkpoint& ckpt,
                        TrainerOptions opts) {
  const std::string want = config::hash_hex(cfg.hash());
  auto it = ckpt.meta.find("config_hash");
  const std::string have = it == ckpt.meta.end() ? "(none)" : it->second;
  if (have != want) {
    throw Error(ErrorCode::kConfigMismatch,
                "checkpoint config hash " + have + " != current config hash " +
                    want + "; refusing to resume");
  }
  Trainer tr(std::move(cfg), std::move(train), std::move(val),
             std::move(opts));
  tr.params_ = checkpoint::params_from(ckpt);
  auto named = tr.params_.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto* m = ckpt.find("opt.m." + named[i].first);
    const auto* v = ckpt.find("opt.v." + named[i].first);
    if (!m || !v || m->data.size() != tr.m_[i].size() ||
        v->data.size() != tr.v_[i].size()) {
      throw Error(ErrorCode::kCorruptFile,
                  "checkpoint lacks optimizer state for " + named[i].first);
    }
    tr.m_[i] = m->data;
    tr.v_[i] = v->data;
  }
  auto get = [&](const char* key) -> std::uint64_t {
    auto f = ckpt.meta.find(key);
    if (f == ckpt.meta.end()) {
      throw Error(ErrorCode::kCorruptFile,
                  std::string("checkpoint meta lacks ") + key);
    }
    return std::stoull(f->second);
  };
  tr.opt_t_ = get("step");
  tr.cursor_ = {get("cursor_epoch"), get("cursor_offset")};
  tr.tokens_ = get("tokens");
  return tr;
}

double Trainer::step() {
  const auto& tc = cfg_.train;
  const double lr = lr_at(opt_t_, cfg_.sched);
  const std::uint64_t tps = tc.tokens_per_step();
  if (tps + 1 > train_.token_count()) {
    throw Error(ErrorCode::kSplitEmpty,
                "training split holds " + std::to_string(train_.token_count()) +
                    " tokens, one optimizer step needs " +
                    std::to_string(tps + 1));
  }
  shards::Cursor cur = cursor_;
  // A partial accumulation window at the end of an epoch is dropped.
  if (cur.offset + tps + 1 > train_.token_count()) {
    cur = {cur.epoch + 1, 0};
  }
  params_.set_requires_grad(true);
  params_.zero_grad();
  model::ForwardOptions fo;
  fo.attn.tiling = cfg_.tiling;
  fo.training = true;
  const float scale = 1.0f / static_cast<float>(tc.grad_accum);
  double loss_sum = 0.0;
  for (std::size_t a = 0; a < tc.grad_accum; ++a) {
    auto [batch, next] = shards::next_batch(train_, cur, tc.micro_batch, tc.seq_len);
    cur = next;
    fo.dropout_seed = tc.seed ^ (opt_t_ * tc.grad_accum + a + 1);
    Graph<float> g;
    Tensor<float> logits =
        model::forward(g, params_, batch.inputs, tc.micro_batch, tc.seq_len, fo);
    Tensor<float> l = model::loss(g, logits, batch.targets, scale);
    g.backward(l);
    loss_sum += l.item();
  }
  auto named = params_.named();
  std::vector<std::span<float>> grads;
  std::vector<AdamWSlot> slots;
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor<float> p = named[i].second;
    grads.push_back(p.grad());
  }
  last_norm_ = clip_gradients(grads, cfg_.optim.clip_norm);
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor<float> p = named[i].second;
    slots.push_back({p.data(), grads[i], m_[i], v_[i],
                     in_decay_set(p.shape())});
  }
  adamw_step(slots, opt_t_, cfg_.optim, lr);
  params_.zero_grad();
  cursor_ = cur;
  tokens_ += tps;
  return loss_sum;
}

double Trainer::evaluate_val() const {
  if (!val_) {
    throw Error(ErrorCode::kSplitEmpty, "no validation split");
  }
  const auto& tc = cfg_.train;
  model::ForwardOptions fo;
  fo.attn.tiling = cfg_.tiling;
  shards::Cursor cur;
  double total = 0.0;
  for (std::size_t i = 0; i < tc.val_batches; ++i) {
    auto [batch, next] = shards::next_batch(*val_, cur, tc.micro_batch, tc.seq_len);
    cur = next;
    total += model::mean_loss(params_, std::span<const model::TokenId>(batch.inputs),
                              batch.targets, tc.micro_batch, tc.seq_len, fo);
  }
  return total / static_cast<double>(tc.val_batches);
}

void Trainer::run_until(std::uint64_t n) {
  const auto& tc = cfg_.train;
  const std::uint64_t total = cfg_.sched.total_steps;
  n = std::min(n, total);
  while (opt_t_ < n) {
    const std::uint64_t s = opt_t_;
    const bool log = s % tc.log_every == 0 || s + 1 == total;
    MetricsRecord rec;
    rec.step = s;
    rec.lr = lr_at(s, cfg_.sched);
    if (log && val_) {
      rec.val_loss = evaluate_val();
      rec.perplexity = std::exp(*rec.val_loss);
    }
    rec.train_loss = step();
    rec.tokens = tokens_;
    rec.wall_time = now_seconds() - wall_offset_;
    if (log) {
      spdlog::info("step {} train_loss {:.4f} val_loss {} lr {:.3e} norm {:.3f}",
                   s, rec.train_loss,
                   rec.val_loss ? fmt("%.4f", *rec.val_loss) : "-", rec.lr,
                   last_norm_);
      append_metrics(rec);
    }
    const bool ckpt = (tc.checkpoint_every > 0 &&
                       opt_t_ % tc.checkpoint_every == 0) ||
                      opt_t_ == total;
    if (ckpt && opts_.out_dir) save_checkpoint();
  }
}

void Trainer::append_metrics(const MetricsRecord& rec) {
  metrics_.push_back(rec);
  if (opts_.on_metrics) opts_.on_metrics(rec);
  if (!opts_.out_dir) return;
  const auto path = *opts_.out_dir / "metrics.csv";
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) {
    throw Error(ErrorCode::kIoFailure, "cannot append to " + path.string());
  }
  if (fresh) out << metrics_csv_header() << "\n";
  out << metrics_csv_row(rec) << "\n";
}

checkpoint::Checkpoint Trainer::make_checkpoint() const {
  checkpoint::Checkpoint ck;
  ck.config = cfg_.model;
  ck.meta["config_hash"] = config::hash_hex(cfg_.hash());
  ck.meta["run_config"] = config::format_key_values(cfg_.to_key_values());
  ck.meta["step"] = std::to_string(opt_t_);
  ck.meta["cursor_epoch"] = std::to_string(cursor_.epoch);
  ck.meta["cursor_offset"] = std::to_string(cursor_.offset);
  ck.meta["tokens"] = std::to_string(tokens_);
  ck.meta["toolkit_version"] = NEPGPT_VERSION;
  checkpoint::add_params(ck, params_);
  auto named = params_.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    ck.arrays.push_back({"opt.m." + named[i].first, named[i].second.shape(), m_[i]});
    ck.arrays.push_back({"opt.v." + named[i].first, named[i].second.shape(), v_[i]});
  }
  return ck;
}

std::filesystem::path Trainer::checkpoint_path(std::uint64_t step) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06llu.bin",
                static_cast<unsigned long long>(step));
  return (opts_.out_dir ? *opts_.out_dir : std::filesystem::path(".")) / buf;
}

void Trainer::save_checkpoint() const {
  auto path = checkpoint_path(opt_t_);
  checkpoint::save(make_checkpoint(), path);
  spdlog::info("saved checkpoint {}", path.string());
}

}  // namespace nepgpt::trainer
