#pragma once

#include <cstddef>
#include <vector>

#include "nepgpt/tensor.hpp"

namespace nepgpt::attention {

using tensor::Graph;
using tensor::Tensor;

struct AttnTiling {
  std::size_t block_rows = 64;
  std::size_t block_cols = 64;

  void validate() const;
};

enum class AttnMode {
  kTiled,  // online softmax; backward recomputes scores block by block
  kNaive,  // materializes the full score matrix (cross-checking only)
};

struct AttnOptions {
  AttnTiling tiling;
  bool causal = true;
  AttnMode mode = AttnMode::kTiled;
};

// Kernels over one batch element: q, k, v, out are [heads, t, d_head]
// contiguous; lse is [heads, t] and receives the per-row log normalizer
// max + log(sum exp) of the scaled scores.
template <typename T>
void forward_tiled(const T* q, const T* k, const T* v, std::size_t heads,
                   std::size_t t, std::size_t d_head, const AttnTiling& tiling,
                   bool causal, T* out, T* lse);
template <typename T>
void forward_naive(const T* q, const T* k, const T* v, std::size_t heads,
                   std::size_t t, std::size_t d_head, bool causal, T* out,
                   T* lse);
// Accumulates into dq, dk, dv.
template <typename T>
void backward_tiled(const T* q, const T* k, const T* v, const T* out,
                    const T* lse, const T* dout, std::size_t heads,
                    std::size_t t, std::size_t d_head, const AttnTiling& tiling,
                    bool causal, T* dq, T* dk, T* dv);
template <typename T>
void backward_naive(const T* q, const T* k, const T* v, const T* out,
                    const T* lse, const T* dout, std::size_t heads,
                    std::size_t t, std::size_t d_head, bool causal, T* dq,
                    T* dk, T* dv);

// Untracked convenience wrappers on [heads, t, d_head] tensors.
template <typename T>
Tensor<T> attention_tiled(const Tensor<T>& q, const Tensor<T>& k,
                          const Tensor<T>& v, const AttnTiling& tiling,
                          bool causal);
template <typename T>
Tensor<T> attention_naive(const Tensor<T>& q, const Tensor<T>& k,
                          const Tensor<T>& v, bool causal);

// Debug path: recomputes every attention weight tile by tile from the stored
// normalizers and returns the per-row sums, [heads * t]. Each should be 1.
template <typename T>
std::vector<T> row_weight_sums(const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, const AttnTiling& tiling,
                               bool causal);

// Multi-head self-attention on a fused projection qkv [batch, t, 3 * d_model]
// (q, then k, then v; head h owns columns [h * d_head, (h + 1) * d_head) of
// each). Returns [batch, t, d_model].
template <typename T>
Tensor<T> self_attention(Graph<T>& g, const Tensor<T>& qkv,
                         std::size_t n_head, const AttnOptions& opts = {});

}  // namespace nepgpt::attention
