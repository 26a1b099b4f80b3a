#include "nepgpt/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace nepgpt::attention {

using tensor::shape_string;

void AttnTiling::validate() const {
  if (block_rows == 0 || block_cols == 0) {
    throw Error(ErrorCode::kConfigInvalid,
                "attention block sizes must be >= 1");
  }
}

namespace {

template <typename T>
T neg_inf() {
  return -std::numeric_limits<T>::infinity();
}

// Scaled scores for rows [r0, r1) against columns [c0, c1) of one head, with
// masked entries set to -inf. s is (r1 - r0) x (c1 - c0).
template <typename T>
void score_block(const T* q, const T* k, std::size_t d_head, T scale,
                 bool causal, std::size_t r0, std::size_t r1, std::size_t c0,
                 std::size_t c1, T* s) {
  const std::size_t bc = c1 - c0;
  for (std::size_t i = r0; i < r1; ++i) {
    const T* qi = q + i * d_head;
    for (std::size_t j = c0; j < c1; ++j) {
      T* dst = s + (i - r0) * bc + (j - c0);
      if (causal && j > i) {
        *dst = neg_inf<T>();
        continue;
      }
      const T* kj = k + j * d_head;
      T acc = 0;
      for (std::size_t d = 0; d < d_head; ++d) acc += qi[d] * kj[d];
      *dst = acc * scale;
    }
  }
}

template <typename T>
T score_scale(std::size_t d_head) {
  return T(1) / std::sqrt(static_cast<T>(d_head));
}

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "attention: q " + shape_string(q.shape()) + ", k " +
                    shape_string(k.shape()) + ", v " +
                    shape_string(v.shape()));
  }
}

}  // namespace

template <typename T>
void forward_tiled(const T* q, const T* k, const T* v, std::size_t heads,
                   std::size_t t, std::size_t d_head, const AttnTiling& tiling,
                   bool causal, T* out, T* lse) {
  tiling.validate();
  const T scale = score_scale<T>(d_head);
  const std::size_t br = tiling.block_rows, bc = tiling.block_cols;
  std::vector<T> s(br * bc);
  std::vector<T> acc(br * d_head);
  std::vector<T> row_max(br), row_sum(br);
  for (std::size_t h = 0; h < heads; ++h) {
    const T* qh = q + h * t * d_head;
    const T* kh = k + h * t * d_head;
    const T* vh = v + h * t * d_head;
    T* oh = out + h * t * d_head;
    T* lh = lse + h * t;
    for (std::size_t r0 = 0; r0 < t; r0 += br) {
      const std::size_t r1 = std::min(t, r0 + br);
      const std::size_t nr = r1 - r0;
      std::fill(acc.begin(), acc.begin() + nr * d_head, T(0));
      std::fill(row_max.begin(), row_max.begin() + nr, neg_inf<T>());
      std::fill(row_sum.begin(), row_sum.begin() + nr, T(0));
      const std::size_t c_end = causal ? r1 : t;
      for (std::size_t c0 = 0; c0 < c_end; c0 += bc) {
        const std::size_t c1 = std::min(c_end, c0 + bc);
        const std::size_t nc = c1 - c0;
        score_block(qh, kh, d_head, scale, causal, r0, r1, c0, c1, s.data());
        for (std::size_t i = 0; i < nr; ++i) {
          T* srow = s.data() + i * nc;
          T blk_max = neg_inf<T>();
          for (std::size_t j = 0; j < nc; ++j) blk_max = std::max(blk_max, srow[j]);
          if (blk_max == neg_inf<T>()) continue;  // row fully masked here
          const T m_new = std::max(row_max[i], blk_max);
          const T alpha = std::exp(row_max[i] - m_new);
          T* a = acc.data() + i * d_head;
          for (std::size_t d = 0; d < d_head; ++d) a[d] *= alpha;
          T psum = 0;
          for (std::size_t j = 0; j < nc; ++j) {
            const T p = std::exp(srow[j] - m_new);
            psum += p;
            if (p == T(0)) continue;
            const T* vj = vh + (c0 + j) * d_head;
            for (std::size_t d = 0; d < d_head; ++d) a[d] += p * vj[d];
          }
          row_sum[i] = row_sum[i] * alpha + psum;
          row_max[i] = m_new;
        }
      }
      for (std::size_t i = 0; i < nr; ++i) {
        const T inv = T(1) / row_sum[i];
        T* o = oh + (r0 + i) * d_head;
        const T* a = acc.data() + i * d_head;
        for (std::size_t d = 0; d < d_head; ++d) o[d] = a[d] * inv;
        lh[r0 + i] = row_max[i] + std::log(row_sum[i]);
      }
    }
  }
}

template <typename T>
void forward_naive(const T* q, const T* k, const T* v, std::size_t heads,
                   std::size_t t, std::size_t d_head, bool causal, T* out,
                   T* lse) {
  const T scale = score_scale<T>(d_head);
  std::vector<T> s(t * t);
  for (std::size_t h = 0; h < heads; ++h) {
    const T* qh = q + h * t * d_head;
    const T* kh = k + h * t * d_head;
    const T* vh = v + h * t * d_head;
    T* oh = out + h * t * d_head;
    score_block(qh, kh, d_head, scale, causal, 0, t, 0, t, s.data());
    for (std::size_t i = 0; i < t; ++i) {
      T* row = s.data() + i * t;
      T mx = neg_inf<T>();
      for (std::size_t j = 0; j < t; ++j) mx = std::max(mx, row[j]);
      T total = 0;
      for (std::size_t j = 0; j < t; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
      }
      for (std::size_t j = 0; j < t; ++j) row[j] /= total;
      lse[h * t + i] = mx + std::log(total);
      T* o = oh + i * d_head;
      std::fill(o, o + d_head, T(0));
      for (std::size_t j = 0; j < t; ++j) {
        const T* vj = vh + j * d_head;
        for (std::size_t d = 0; d < d_head; ++d) o[d] += row[j] * vj[d];
      }
    }
  }
}

template <typename T>
void backward_tiled(const T* q, const T* k, const T* v, const T* out,
                    const T* lse, const T* dout, std::size_t heads,
                    std::size_t t, std::size_t d_head, const AttnTiling& tiling,
                    bool causal, T* dq, T* dk, T* dv) {
  tiling.validate();
  const T scale = score_scale<T>(d_head);
  const std::size_t br = tiling.block_rows, bc = tiling.block_cols;
  std::vector<T> s(br * bc);
  std::vector<T> delta(t);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * t * d_head;
    const T* qh = q + off;
    const T* kh = k + off;
    const T* vh = v + off;
    const T* oh = out + off;
    const T* doh = dout + off;
    const T* lh = lse + h * t;
    T* dqh = dq + off;
    T* dkh = dk + off;
    T* dvh = dv + off;
    for (std::size_t i = 0; i < t; ++i) {
      T acc = 0;
      for (std::size_t d = 0; d < d_head; ++d) {
        acc += doh[i * d_head + d] * oh[i * d_head + d];
      }
      delta[i] = acc;
    }
    for (std::size_t r0 = 0; r0 < t; r0 += br) {
      const std::size_t r1 = std::min(t, r0 + br);
      const std::size_t c_end = causal ? r1 : t;
      for (std::size_t c0 = 0; c0 < c_end; c0 += bc) {
        const std::size_t c1 = std::min(c_end, c0 + bc);
        const std::size_t nc = c1 - c0;
        score_block(qh, kh, d_head, scale, causal, r0, r1, c0, c1, s.data());
        for (std::size_t i = r0; i < r1; ++i) {
          const T* srow = s.data() + (i - r0) * nc;
          const T* doi = doh + i * d_head;
          const T* qi = qh + i * d_head;
          T* dqi = dqh + i * d_head;
          for (std::size_t j = c0; j < c1; ++j) {
            const T sv = srow[j - c0];
            if (sv == neg_inf<T>()) continue;
            const T p = std::exp(sv - lh[i]);
            const T* vj = vh + j * d_head;
            const T* kj = kh + j * d_head;
            T* dvj = dvh + j * d_head;
            T* dkj = dkh + j * d_head;
            T dp = 0;
            for (std::size_t d = 0; d < d_head; ++d) {
              dvj[d] += p * doi[d];
              dp += doi[d] * vj[d];
            }
            const T ds = p * (dp - delta[i]) * scale;
            for (std::size_t d = 0; d < d_head; ++d) {
              dqi[d] += ds * kj[d];
              dkj[d] += ds * qi[d];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void backward_naive(const T* q, const T* k, const T* v, const T* out,
                    const T* lse, const T* dout, std::size_t heads,
                    std::size_t t, std::size_t d_head, bool causal, T* dq,
                    T* dk, T* dv) {
  (void)out;
  (void)lse;
  const T scale = score_scale<T>(d_head);
  std::vector<T> p(t * t), dp(t * t);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * t * d_head;
    const T* qh = q + off;
    const T* kh = k + off;
    const T* vh = v + off;
    const T* doh = dout + off;
    score_block(qh, kh, d_head, scale, causal, 0, t, 0, t, p.data());
    tensor::softmax_rows(std::span<T>(p), t);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        T acc = 0;
        for (std::size_t d = 0; d < d_head; ++d) {
          acc += doh[i * d_head + d] * vh[j * d_head + d];
        }
        dp[i * t + j] = acc;
      }
    }
    for (std::size_t i = 0; i < t; ++i) {
      T rowdot = 0;
      for (std::size_t j = 0; j < t; ++j) rowdot += p[i * t + j] * dp[i * t + j];
      for (std::size_t j = 0; j < t; ++j) {
        const T pij = p[i * t + j];
        for (std::size_t d = 0; d < d_head; ++d) {
          dv[off + j * d_head + d] += pij * doh[i * d_head + d];
        }
        const T ds = pij * (dp[i * t + j] - rowdot) * scale;
        for (std::size_t d = 0; d < d_head; ++d) {
          dq[off + i * d_head + d] += ds * kh[j * d_head + d];
          dk[off + j * d_head + d] += ds * qh[i * d_head + d];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> attention_tiled(const Tensor<T>& q, const Tensor<T>& k,
                          const Tensor<T>& v, const AttnTiling& tiling,
                          bool causal) {
  check_qkv(q, k, v);
  const std::size_t heads = q.dim(0), t = q.dim(1), dh = q.dim(2);
  Tensor<T> out(q.shape());
  std::vector<T> lse(heads * t);
  forward_tiled(q.data().data(), k.data().data(), v.data().data(), heads, t,
                dh, tiling, causal, out.data().data(), lse.data());
  return out;
}

template <typename T>
Tensor<T> attention_naive(const Tensor<T>& q, const Tensor<T>& k,
                          const Tensor<T>& v, bool causal) {
  check_qkv(q, k, v);
  const std::size_t heads = q.dim(0), t = q.dim(1), dh = q.dim(2);
  Tensor<T> out(q.shape());
  std::vector<T> lse(heads * t);
  forward_naive(q.data().data(), k.data().data(), v.data().data(), heads, t,
                dh, causal, out.data().data(), lse.data());
  return out;
}

template <typename T>
std::vector<T> row_weight_sums(const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, const AttnTiling& tiling,
                               bool causal) {
  check_qkv(q, k, v);
  const std::size_t heads = q.dim(0), t = q.dim(1), dh = q.dim(2);
  std::vector<T> out(q.numel());
  std::vector<T> lse(heads * t);
  forward_tiled(q.data().data(), k.data().data(), v.data().data(), heads, t,
                dh, tiling, causal, out.data(), lse.data());
  const T scale = score_scale<T>(dh);
  const std::size_t br = tiling.block_rows, bc = tiling.block_cols;
  std::vector<T> s(br * bc);
  std::vector<T> sums(heads * t, T(0));
  for (std::size_t h = 0; h < heads; ++h) {
    const T* qh = q.data().data() + h * t * dh;
    const T* kh = k.data().data() + h * t * dh;
    for (std::size_t r0 = 0; r0 < t; r0 += br) {
      const std::size_t r1 = std::min(t, r0 + br);
      for (std::size_t c0 = 0; c0 < t; c0 += bc) {
        const std::size_t c1 = std::min(t, c0 + bc);
        score_block(qh, kh, dh, scale, causal, r0, r1, c0, c1, s.data());
        for (std::size_t i = r0; i < r1; ++i) {
          for (std::size_t j = c0; j < c1; ++j) {
            sums[h * t + i] +=
                std::exp(s[(i - r0) * (c1 - c0) + (j - c0)] - lse[h * t + i]);
          }
        }
      }
    }
  }
  return sums;
}

template <typename T>
Tensor<T> self_attention(Graph<T>& g, const Tensor<T>& qkv,
                         std::size_t n_head, const AttnOptions& opts) {
  if (qkv.rank() != 3 || n_head == 0 || qkv.dim(2) % (3 * n_head) != 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "self_attention: qkv " + shape_string(qkv.shape()) +
                    " with " + std::to_string(n_head) + " heads");
  }
  const std::size_t batch = qkv.dim(0), t = qkv.dim(1);
  const std::size_t d_model = qkv.dim(2) / 3, dh = d_model / n_head;
  const std::size_t per = n_head * t * dh;  // one batch element of q, k or v

  // Repack to [batch, head, t, d_head].
  auto q = std::make_shared<std::vector<T>>(batch * per);
  auto k = std::make_shared<std::vector<T>>(batch * per);
  auto v = std::make_shared<std::vector<T>>(batch * per);
  auto src = qkv.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < t; ++i) {
      const T* row = src.data() + (b * t + i) * 3 * d_model;
      for (std::size_t h = 0; h < n_head; ++h) {
        const std::size_t dst = b * per + (h * t + i) * dh;
        std::copy_n(row + h * dh, dh, q->data() + dst);
        std::copy_n(row + d_model + h * dh, dh, k->data() + dst);
        std::copy_n(row + 2 * d_model + h * dh, dh, v->data() + dst);
      }
    }
  }
  auto o = std::make_shared<std::vector<T>>(batch * per);
  auto lse = std::make_shared<std::vector<T>>(batch * n_head * t);
  for (std::size_t b = 0; b < batch; ++b) {
    if (opts.mode == AttnMode::kTiled) {
      forward_tiled(q->data() + b * per, k->data() + b * per,
                    v->data() + b * per, n_head, t, dh, opts.tiling,
                    opts.causal, o->data() + b * per,
                    lse->data() + b * n_head * t);
    } else {
      forward_naive(q->data() + b * per, k->data() + b * per,
                    v->data() + b * per, n_head, t, dh, opts.causal,
                    o->data() + b * per, lse->data() + b * n_head * t);
    }
  }
  Tensor<T> out({batch, t, d_model});
  auto dst = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_head; ++h) {
      for (std::size_t i = 0; i < t; ++i) {
        std::copy_n(o->data() + b * per + (h * t + i) * dh, dh,
                    dst.data() + (b * t + i) * d_model + h * dh);
      }
    }
  }
  g.record({qkv}, out,
           [qkv = qkv, out, q, k, v, o, lse, batch, t, d_model, dh, n_head,
            per, opts]() mutable {
             auto dy = out.grad();
             std::vector<T> dout(batch * per), dq(batch * per, T(0)),
                 dk(batch * per, T(0)), dv(batch * per, T(0));
             for (std::size_t b = 0; b < batch; ++b) {
               for (std::size_t h = 0; h < n_head; ++h) {
                 for (std::size_t i = 0; i < t; ++i) {
                   std::copy_n(dy.data() + (b * t + i) * d_model + h * dh, dh,
                               dout.data() + b * per + (h * t + i) * dh);
                 }
               }
             }
             for (std::size_t b = 0; b < batch; ++b) {
               const std::size_t s = b * per;
               const T* l = lse->data() + b * n_head * t;
               if (opts.mode == AttnMode::kTiled) {
                 backward_tiled(q->data() + s, k->data() + s, v->data() + s,
                                o->data() + s, l, dout.data() + s, n_head, t,
                                dh, opts.tiling, opts.causal, dq.data() + s,
                                dk.data() + s, dv.data() + s);
               } else {
                 backward_naive(q->data() + s, k->data() + s, v->data() + s,
                                o->data() + s, l, dout.data() + s, n_head, t,
                                dh, opts.causal, dq.data() + s, dk.data() + s,
                                dv.data() + s);
               }
             }
             auto gq = qkv.grad();
             for (std::size_t b = 0; b < batch; ++b) {
               for (std::size_t i = 0; i < t; ++i) {
                 T* row = gq.data() + (b * t + i) * 3 * d_model;
                 for (std::size_t h = 0; h < n_head; ++h) {
                   const std::size_t s = b * per + (h * t + i) * dh;
                   for (std::size_t d = 0; d < dh; ++d) {
                     row[h * dh + d] += dq[s + d];
                     row[d_model + h * dh + d] += dk[s + d];
                     row[2 * d_model + h * dh + d] += dv[s + d];
                   }
                 }
               }
             }
           });
  return out;
}

#define NEPGPT_INSTANTIATE(T)                                                  \
  template void forward_tiled<T>(const T*, const T*, const T*, std::size_t,    \
                                 std::size_t, std::size_t, const AttnTiling&,  \
                                 bool, T*, T*);                                \
  template void forward_naive<T>(const T*, const T*, const T*, std::size_t,    \
                                 std::size_t, std::size_t, bool, T*, T*);      \
  template void backward_tiled<T>(const T*, const T*, const T*, const T*,      \
                                  const T*, const T*, std::size_t,             \
                                  std::size_t, std::size_t, const AttnTiling&, \
                                  bool, T*, T*, T*);                           \
  template void backward_naive<T>(const T*, const T*, const T*, const T*,      \
                                  const T*, const T*, std::size_t,             \
                                  std::size_t, std::size_t, bool, T*, T*, T*); \
  template Tensor<T> attention_tiled<T>(const Tensor<T>&, const Tensor<T>&,    \
                                        const Tensor<T>&, const AttnTiling&,   \
                                        bool);                                 \
  template Tensor<T> attention_naive<T>(const Tensor<T>&, const Tensor<T>&,    \
                                        const Tensor<T>&, bool);               \
  template std::vector<T> row_weight_sums<T>(                                  \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttnTiling&, \
      bool);                                                                   \
  template Tensor<T> self_attention<T>(Graph<T>&, const Tensor<T>&,            \
                                       std::size_t, const AttnOptions&);

NEPGPT_INSTANTIATE(float)
NEPGPT_INSTANTIATE(double)
NEPGPT_INSTANTIATE(long double)

}  // namespace nepgpt::attention
