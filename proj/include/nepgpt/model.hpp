#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nepgpt/attention.hpp"
#include "nepgpt/tensor.hpp"

namespace nepgpt::model {

using tensor::Graph;
using tensor::Shape;
using tensor::Tensor;
using TokenId = std::uint16_t;

struct GptConfig {
  std::size_t n_layer = 12;
  std::size_t n_head = 12;
  std::size_t d_model = 768;
  std::size_t vocab_size = 16384;
  std::size_t seq_len = 1024;
  bool tie_embeddings = true;
  float dropout = 0.0f;

  void validate() const;
  bool operator==(const GptConfig&) const = default;
};

// V*d + T*d + L*(12 d^2 + 13 d) + 2d, plus V*d when the head is untied.
std::uint64_t param_count(const GptConfig& cfg);

template <typename T>
struct LayerParams {
  Tensor<T> ln_1_weight, ln_1_bias;
  Tensor<T> attn_weight, attn_bias;  // fused qkv [d, 3d]
  Tensor<T> attn_proj_weight, attn_proj_bias;
  Tensor<T> ln_2_weight, ln_2_bias;
  Tensor<T> fc_weight, fc_bias;  // [d, 4d]
  Tensor<T> fc_proj_weight, fc_proj_bias;  // [4d, d]
};

template <typename T>
struct GptParams {
  GptConfig config;
  Tensor<T> wte;  // [V, d], doubles as the output head when tied
  Tensor<T> wpe;  // [T, d]
  std::vector<LayerParams<T>> layers;
  Tensor<T> ln_f_weight, ln_f_bias;
  Tensor<T> lm_head;  // [V, d], only when untied

  // Every parameter with its GPT-2 style name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::vector<Tensor<T>> tensors() const;
  std::uint64_t count() const;

  // Zero-filled parameters with the right shapes.
  static GptParams zeros(const GptConfig& cfg);
  // Adopts `tensors` (aliased, in named() order) as the parameters.
  static GptParams from_tensors(const GptConfig& cfg,
                                const std::vector<Tensor<T>>& tensors);
  GptParams clone() const;
  template <typename U>
  GptParams<U> cast() const {
    GptParams<U> out = GptParams<U>::zeros(config);
    auto src = named();
    auto dst = out.named();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto s = src[i].second.data();
      auto d = dst[i].second.data();
      for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<U>(s[j]);
    }
    return out;
  }
  void set_requires_grad(bool on);
  void zero_grad();
};

// Normal(0, 0.02) weights; the two residual output projections per layer use
// 0.02 / sqrt(2 L); biases and norm shifts zero, norm scales one.
template <typename T>
GptParams<T> init_params(const GptConfig& cfg, std::uint64_t seed);

struct ForwardOptions {
  attention::AttnOptions attn;
  // Test hook: skip the position embedding entirely.
  bool zero_positions = false;
  // Dropout is active only when training is set and config.dropout > 0.
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

// tokens is row-major [batch, t]; returns logits [batch, t, vocab].
template <typename T>
Tensor<T> forward(Graph<T>& g, const GptParams<T>& params,
                  std::span<const TokenId> tokens, std::size_t batch,
                  std::size_t t, const ForwardOptions& opts = {});

// Mean natural-log cross-entropy over all positions, times `scale`.
template <typename T>
Tensor<T> loss(Graph<T>& g, const Tensor<T>& logits,
               std::span<const TokenId> targets, T scale = 1);

// Untracked forward + loss.
template <typename T>
double mean_loss(const GptParams<T>& params, std::span<const TokenId> inputs,
                 std::span<const TokenId> targets, std::size_t batch,
                 std::size_t t, const ForwardOptions& opts = {});

}  // namespace nepgpt::model
