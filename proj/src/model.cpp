#include "nepgpt/model.hpp"

#include <cmath>
#include <random>

namespace nepgpt::model {

using namespace tensor;

void GptConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kConfigInvalid, msg);
  };
  if (n_layer == 0) fail("n_layer must be >= 1");
  if (n_head == 0) fail("n_head must be >= 1");
  if (d_model == 0 || d_model % n_head != 0) {
    fail("d_model (" + std::to_string(d_model) +
         ") must be a positive multiple of n_head (" + std::to_string(n_head) +
         ")");
  }
  if (vocab_size == 0 || vocab_size > 65536) {
    fail("vocab_size must be in [1, 65536]");
  }
  if (seq_len == 0) fail("seq_len must be >= 1");
  if (!(dropout >= 0.0f && dropout < 1.0f)) fail("dropout must be in [0, 1)");
}

std::uint64_t param_count(const GptConfig& cfg) {
  const std::uint64_t v = cfg.vocab_size, t = cfg.seq_len, l = cfg.n_layer,
                      d = cfg.d_model;
  std::uint64_t n = v * d + t * d + l * (12 * d * d + 13 * d) + 2 * d;
  if (!cfg.tie_embeddings) n += v * d;
  return n;
}

// Calls fn(name, tensor) for every parameter in the canonical order. Works on
// const and mutable params alike.
template <typename P, typename F>
void visit_params(P& p, F&& fn) {
  fn(std::string("wte.weight"), p.wte);
  fn(std::string("wpe.weight"), p.wpe);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "h." + std::to_string(i) + ".";
    fn(pre + "ln_1.weight", l.ln_1_weight);
    fn(pre + "ln_1.bias", l.ln_1_bias);
    fn(pre + "attn.c_attn.weight", l.attn_weight);
    fn(pre + "attn.c_attn.bias", l.attn_bias);
    fn(pre + "attn.c_proj.weight", l.attn_proj_weight);
    fn(pre + "attn.c_proj.bias", l.attn_proj_bias);
    fn(pre + "ln_2.weight", l.ln_2_weight);
    fn(pre + "ln_2.bias", l.ln_2_bias);
    fn(pre + "mlp.c_fc.weight", l.fc_weight);
    fn(pre + "mlp.c_fc.bias", l.fc_bias);
    fn(pre + "mlp.c_proj.weight", l.fc_proj_weight);
    fn(pre + "mlp.c_proj.bias", l.fc_proj_bias);
  }
  fn(std::string("ln_f.weight"), p.ln_f_weight);
  fn(std::string("ln_f.bias"), p.ln_f_bias);
  if (!p.config.tie_embeddings) fn(std::string("lm_head.weight"), p.lm_head);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> GptParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit_params(*this, [&](std::string name, const Tensor<T>& t) {
    out.emplace_back(std::move(name), t);
  });
  return out;
}

template <typename T>
GptParams<T> GptParams<T>::from_tensors(const GptConfig& cfg,
                                        const std::vector<Tensor<T>>& tensors) {
  GptParams p = zeros(cfg);
  std::size_t i = 0;
  visit_params(p, [&](const std::string& name, Tensor<T>& slot) {
    if (i >= tensors.size()) {
      throw Error(ErrorCode::kShapeMismatch, "missing parameter " + name);
    }
    if (tensors[i].shape() != slot.shape()) {
      throw Error(ErrorCode::kShapeMismatch,
                  name + ": expected " + tensor::shape_string(slot.shape()) +
                      ", got " + tensor::shape_string(tensors[i].shape()));
    }
    slot = tensors[i++];
  });
  if (i != tensors.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "expected " + std::to_string(i) + " parameter tensors, got " +
                    std::to_string(tensors.size()));
  }
  return p;
}

template <typename T>
std::vector<Tensor<T>> GptParams<T>::tensors() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <typename T>
std::uint64_t GptParams<T>::count() const {
  std::uint64_t n = 0;
  for (auto& [name, t] : named()) n += t.numel();
  return n;
}

template <typename T>
GptParams<T> GptParams<T>::zeros(const GptConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  GptParams p;
  p.config = cfg;
  p.wte = Tensor<T>({cfg.vocab_size, d});
  p.wpe = Tensor<T>({cfg.seq_len, d});
  for (std::size_t i = 0; i < cfg.n_layer; ++i) {
    LayerParams<T> l;
    l.ln_1_weight = Tensor<T>({d});
    l.ln_1_bias = Tensor<T>({d});
    l.attn_weight = Tensor<T>({d, 3 * d});
    l.attn_bias = Tensor<T>({3 * d});
    l.attn_proj_weight = Tensor<T>({d, d});
    l.attn_proj_bias = Tensor<T>({d});
    l.ln_2_weight = Tensor<T>({d});
    l.ln_2_bias = Tensor<T>({d});
    l.fc_weight = Tensor<T>({d, 4 * d});
    l.fc_bias = Tensor<T>({4 * d});
    l.fc_proj_weight = Tensor<T>({4 * d, d});
    l.fc_proj_bias = Tensor<T>({d});
    p.layers.push_back(std::move(l));
  }
  p.ln_f_weight = Tensor<T>({d});
  p.ln_f_bias = Tensor<T>({d});
  if (!cfg.tie_embeddings) p.lm_head = Tensor<T>({cfg.vocab_size, d});
  return p;
}

template <typename T>
GptParams<T> GptParams<T>::clone() const {
  return cast<T>();
}

template <typename T>
void GptParams<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : named()) {
    Tensor<T> h = t;
    h.set_requires_grad(on);
  }
}

template <typename T>
void GptParams<T>::zero_grad() {
  for (auto& [name, t] : named()) {
    Tensor<T> h = t;
    h.clear_grad();
  }
}

template <typename T>
GptParams<T> init_params(const GptConfig& cfg, std::uint64_t seed) {
  GptParams<T> p = GptParams<T>::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double std_w = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layer));
  for (auto& [name, t] : p.named()) {
    Tensor<T> h = t;
    auto d = h.data();
    const bool is_norm_scale =
        name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") ||
        name == "ln_f.weight";
    if (is_norm_scale) {
      std::fill(d.begin(), d.end(), T(1));
    } else if (h.rank() >= 2) {
      const bool resid = name.ends_with("attn.c_proj.weight") ||
                         name.ends_with("mlp.c_proj.weight");
      const double s = resid ? std_resid : std_w;
      for (auto& x : d) x = static_cast<T>(normal(rng) * s);
    }
    // biases and norm shifts stay zero
  }
  return p;
}

// The key bias shifts every score of a query row by the same amount, which
// the softmax cancels, so it is left out of the sum and its gradient is
// exactly zero. Query and value columns get their bias as usual.
template <typename T>
Tensor<T> add_qkv_bias(Graph<T>& g, const Tensor<T>& qkv,
                       const Tensor<T>& bias) {
  const std::size_t n = bias.dim(0);
  const std::size_t d = n / 3;
  Tensor<T> out(qkv.shape());
  auto o = out.data();
  auto x = qkv.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < o.size(); r += n) {
    for (std::size_t j = 0; j < n; ++j) {
      o[r + j] = (j >= d && j < 2 * d) ? x[r + j] : x[r + j] + bv[j];
    }
  }
  g.record({qkv, bias}, out, [qkv = qkv, bias = bias, out, n, d]() mutable {
    std::span<const T> dout = out.grad();
    if (qkv.requires_grad()) {
      auto gx = qkv.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dout[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t r = 0; r < dout.size(); r += n) {
        for (std::size_t j = 0; j < n; ++j) {
          if (j < d || j >= 2 * d) gb[j] += dout[r + j];
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> forward(Graph<T>& g, const GptParams<T>& p,
                  std::span<const TokenId> tokens, std::size_t batch,
                  std::size_t t, const ForwardOptions& opts) {
  const GptConfig& cfg = p.config;
  if (tokens.size() != batch * t || t == 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "forward: " + std::to_string(tokens.size()) +
                    " tokens for batch " + std::to_string(batch) + " x t " +
                    std::to_string(t));
  }
  if (t > cfg.seq_len) {
    throw Error(ErrorCode::kShapeMismatch,
                "forward: t " + std::to_string(t) + " exceeds seq_len " +
                    std::to_string(cfg.seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "token " + std::to_string(tokens[i]) + " at position " +
                      std::to_string(i) + " >= vocab_size " +
                      std::to_string(cfg.vocab_size));
    }
  }
  const bool drop = opts.training && cfg.dropout > 0.0f;
  std::uint64_t drop_site = 0;
  auto maybe_dropout = [&](const Tensor<T>& x) {
    if (!drop) return x;
    return dropout(g, x, cfg.dropout, opts.dropout_seed * 1000003ull + drop_site++);
  };

  Tensor<T> x = embedding(g, p.wte, tokens, {batch, t});
  if (!opts.zero_positions) {
    std::vector<TokenId> pos(batch * t);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < t; ++i) pos[b * t + i] = static_cast<TokenId>(i);
    }
    x = add(g, x, embedding(g, p.wpe, std::span<const TokenId>(pos), {batch, t}));
  }
  x = maybe_dropout(x);
  for (const auto& l : p.layers) {
    Tensor<T> h = layernorm(g, x, l.ln_1_weight, l.ln_1_bias);
    Tensor<T> qkv = add_qkv_bias(g, matmul(g, h, l.attn_weight), l.attn_bias);
    Tensor<T> a = attention::self_attention(g, qkv, cfg.n_head, opts.attn);
    a = add_bias(g, matmul(g, a, l.attn_proj_weight), l.attn_proj_bias);
    x = add(g, x, maybe_dropout(a));
    h = layernorm(g, x, l.ln_2_weight, l.ln_2_bias);
    h = gelu(g, add_bias(g, matmul(g, h, l.fc_weight), l.fc_bias));
    h = add_bias(g, matmul(g, h, l.fc_proj_weight), l.fc_proj_bias);
    x = add(g, x, maybe_dropout(h));
  }
  x = layernorm(g, x, p.ln_f_weight, p.ln_f_bias);
  const Tensor<T>& head = cfg.tie_embeddings ? p.wte : p.lm_head;
  return matmul(g, x, head, /*transpose_b=*/true);
}

template <typename T>
Tensor<T> loss(Graph<T>& g, const Tensor<T>& logits,
               std::span<const TokenId> targets, T scale) {
  return softmax_cross_entropy(g, logits, targets, scale);
}

template <typename T>
double mean_loss(const GptParams<T>& params, std::span<const TokenId> inputs,
                 std::span<const TokenId> targets, std::size_t batch,
                 std::size_t t, const ForwardOptions& opts) {
  Graph<T> g;
  g.set_enabled(false);
  Tensor<T> logits = forward(g, params, inputs, batch, t, opts);
  return static_cast<double>(loss(g, logits, targets).item());
}

#define NEPGPT_INSTANTIATE(T)                                                  \
  template struct GptParams<T>;                                                \
  template GptParams<T> init_params<T>(const GptConfig&, std::uint64_t);       \
  template Tensor<T> forward<T>(Graph<T>&, const GptParams<T>&,                \
                                std::span<const TokenId>, std::size_t,         \
                                std::size_t, const ForwardOptions&);           \
  template Tensor<T> loss<T>(Graph<T>&, const Tensor<T>&,                      \
                             std::span<const TokenId>, T);                     \
  template double mean_loss<T>(const GptParams<T>&, std::span<const TokenId>,  \
                               std::span<const TokenId>, std::size_t,          \
                               std::size_t, const ForwardOptions&);

NEPGPT_INSTANTIATE(float)
NEPGPT_INSTANTIATE(double)
NEPGPT_INSTANTIATE(long double)

}  // namespace nepgpt::model
