#include "nepgpt/tensor.hpp"

#include <limits>


namespace nepgpt::tensor {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "shape " + shape_string(shape) + " needs " +
                    std::to_string(shape_numel(shape)) + " values, got " +
                    std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw Error(ErrorCode::kNotScalarLoss,
                "item() on shape " + shape_string(shape()));
  }
  return impl_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (impl_->grad.empty() && !impl_->data.empty()) {
    impl_->grad.assign(impl_->data.size(), T(0));
  }
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
bool Graph<T>::record(std::initializer_list<Tensor<T>> inputs,
                      Tensor<T>& output, BackwardFn fn) {
  if (!enabled_) return false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return false;
  output.set_requires_grad(true);
  nodes_.push_back({output, std::move(fn)});
  return true;
}

template <typename T>
void Graph<T>::backward(Tensor<T> loss) {
  if (loss.numel() != 1) {
    throw Error(ErrorCode::kNotScalarLoss,
                "backward needs a scalar loss, got shape " +
                    shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->fn();
  }
}

template <typename T>
void softmax_rows(std::span<T> values, std::size_t cols) {
  for (std::size_t r = 0; r + cols <= values.size(); r += cols) {
    T* row = values.data() + r;
    T mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
  }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  // c [k, n] += a[m, k]^T b[m, n]
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
  }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& t, const char* op) {
  if (t.rank() == 0) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": needs rank >= 1, got scalar");
  }
  return t.shape().back();
}

template <typename T>
void accumulate(Tensor<T>& dst, std::span<const T> src) {
  if (!dst.requires_grad()) return;
  auto g = dst.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

}  // namespace

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b,
                 bool transpose_b) {
  const std::size_t k = last_dim(a, "matmul");
  if (b.rank() != 2 || (transpose_b ? b.dim(1) : b.dim(0)) != k) {
    throw Error(ErrorCode::kShapeMismatch,
                "matmul: " + shape_string(a.shape()) + " x " +
                    shape_string(b.shape()) +
                    (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  const std::size_t m = a.numel() / std::max<std::size_t>(k, 1);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  if (transpose_b) {
    gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data().data());
  } else {
    gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data());
  }
  g.record({a, b}, out, [a = a, b = b, out, m, k, n, transpose_b]() mutable {
    const T* dc = out.grad().data();
    if (a.requires_grad()) {
      // dA = dC B^T, or dC B when B was used transposed
      if (transpose_b) {
        gemm_nn(m, n, k, dc, b.data().data(), a.grad().data());
      } else {
        gemm_nt(m, n, k, dc, b.data().data(), a.grad().data());
      }
    }
    if (b.requires_grad()) {
      if (transpose_b) {
        // dB [n, k] = dC^T A
        gemm_tn(m, n, k, dc, a.data().data(), b.grad().data());
      } else {
        // dB [k, n] = A^T dC
        gemm_tn(m, k, n, a.data().data(), dc, b.grad().data());
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  g.record({a, b}, out, [a = a, b = b, out]() mutable {
    std::span<const T> d = out.grad();
    accumulate(a, d);
    accumulate(b, d);
  });
  return out;
}

template <typename T>
Tensor<T> add_bias(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& bias) {
  const std::size_t n = last_dim(a, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw Error(ErrorCode::kShapeMismatch,
                "add_bias: " + shape_string(a.shape()) + " + " +
                    shape_string(bias.shape()));
  }
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + bv[i % n];
  g.record({a, bias}, out, [a = a, bias = bias, out, n]() mutable {
    std::span<const T> d = out.grad();
    accumulate(a, d);
    if (bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t r = 0; r < d.size(); r += n) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += d[r + j];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = gelu_value(xv[i]);
  g.record({x}, out, [x = x, out]() mutable {
    std::span<const T> d = out.grad();
    auto xv = x.data();
    auto gx = x.grad();
    // The derivative cancels to near zero around x = -0.75; evaluating it in
    // at least double keeps 32-bit gradients accurate there.
    using W = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += static_cast<T>(static_cast<W>(d[i]) *
                              gelu_derivative(static_cast<W>(xv[i])));
    }
  });
  return out;
}

template <typename T>
Tensor<T> layernorm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta) {
  const std::size_t d = last_dim(x, "layernorm");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw Error(ErrorCode::kShapeMismatch,
                "layernorm: x " + shape_string(x.shape()) + ", gamma " +
                    shape_string(gamma.shape()) + ", beta " +
                    shape_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(d, 1);
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  auto xv = x.data();
  auto o = out.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  const T eps = static_cast<T>(kLayerNormEps);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T* hat = xhat->data() + r * d;
    bool constant = true;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) {
      mean += row[j];
      constant = constant && row[j] == row[0];
    }
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    T rs = 1 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      // An exactly constant row normalizes to zero; the rounding residue of
      // the mean would otherwise be amplified by 1/sqrt(eps).
      hat[j] = constant ? T(0) : (row[j] - mean) * rs;
      o[r * d + j] = hat[j] * gv[j] + bv[j];
    }
  }
  g.record({x, gamma, beta}, out,
           [x = x, gamma = gamma, beta = beta, out, xhat, rstd, rows, d]() mutable {
             std::span<const T> dy = out.grad();
             auto gv = gamma.data();
             if (gamma.requires_grad() || beta.requires_grad()) {
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t j = 0; j < d; ++j) {
                   T gy = dy[r * d + j];
                   if (gamma.requires_grad()) {
                     gamma.grad()[j] += gy * (*xhat)[r * d + j];
                   }
                   if (beta.requires_grad()) beta.grad()[j] += gy;
                 }
               }
             }
             if (!x.requires_grad()) return;
             auto gx = x.grad();
             std::vector<T> dhat(d);
             for (std::size_t r = 0; r < rows; ++r) {
               const T* hat = xhat->data() + r * d;
               T mean_dhat = 0, mean_dhat_hat = 0;
               for (std::size_t j = 0; j < d; ++j) {
                 dhat[j] = dy[r * d + j] * gv[j];
                 mean_dhat += dhat[j];
                 mean_dhat_hat += dhat[j] * hat[j];
               }
               mean_dhat /= static_cast<T>(d);
               mean_dhat_hat /= static_cast<T>(d);
               T rs = (*rstd)[r];
               for (std::size_t j = 0; j < d; ++j) {
                 gx[r * d + j] +=
                     rs * (dhat[j] - mean_dhat - hat[j] * mean_dhat_hat);
               }
             }
           });
  return out;
}

template <typename T>
Tensor<T> embedding(Graph<T>& g, const Tensor<T>& table,
                    std::span<const std::uint16_t> ids, Shape index_shape) {
  if (table.rank() != 2 || shape_numel(index_shape) != ids.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "embedding: table " + shape_string(table.shape()) +
                    ", index shape " + shape_string(index_shape) + " with " +
                    std::to_string(ids.size()) + " ids");
  }
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "id " + std::to_string(ids[i]) + " at position " +
                      std::to_string(i) + " >= table rows " +
                      std::to_string(v));
    }
  }
  Shape out_shape = index_shape;
  out_shape.push_back(d);
  Tensor<T> out(out_shape);
  auto o = out.data();
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + ids[i] * d, d, o.data() + i * d);
  }
  auto idx = std::make_shared<std::vector<std::uint16_t>>(ids.begin(),
                                                          ids.end());
  g.record({table}, out, [table = table, out, idx, d]() mutable {
    std::span<const T> dy = out.grad();
    auto gt = table.grad();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      T* row = gt.data() + (*idx)[i] * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += dy[i * d + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(Graph<T>& g, const Tensor<T>& logits,
                                std::span<const std::uint16_t> targets,
                                T scale) {
  const std::size_t v = last_dim(logits, "softmax_cross_entropy");
  const std::size_t rows = logits.numel() / std::max<std::size_t>(v, 1);
  if (targets.size() != rows) {
    throw Error(ErrorCode::kShapeMismatch,
                "softmax_cross_entropy: logits " +
                    shape_string(logits.shape()) + " with " +
                    std::to_string(targets.size()) + " targets");
  }
  auto lse = std::make_shared<std::vector<T>>(rows);
  auto lv = logits.data();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= v) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "target " + std::to_string(targets[r]) + " >= " +
                      std::to_string(v));
    }
    const T* row = lv.data() + r * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    (*lse)[r] = mx + std::log(s);
    total += (*lse)[r] - row[targets[r]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(rows) * scale);
  auto tg = std::make_shared<std::vector<std::uint16_t>>(targets.begin(),
                                                         targets.end());
  g.record({logits}, out, [logits = logits, out, lse, tg, rows, v, scale]() mutable {
    const T coef = out.grad()[0] * scale / static_cast<T>(rows);
    auto lv = logits.data();
    auto gl = logits.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = lv.data() + r * v;
      T* grow = gl.data() + r * v;
      const T l = (*lse)[r];
      for (std::size_t j = 0; j < v; ++j) {
        grow[j] += coef * std::exp(row[j] - l);
      }
      grow[(*tg)[r]] -= coef;
    }
  });
  return out;
}

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  g.record({x}, out, [x = x, out]() mutable {
    T d = out.grad()[0];
    for (auto& gx : x.grad()) gx += d;
  });
  return out;
}

template <typename T>
Tensor<T> mul_scalar(Graph<T>& g, const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * s;
  g.record({x}, out, [x = x, out, s]() mutable {
    std::span<const T> d = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d[i] * s;
  });
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  g.record({a, b}, out, [a = a, b = b, out]() mutable {
    std::span<const T> d = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad();
      auto y = b.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      auto x = a.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d[i] * x[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double p,
                  std::uint64_t seed) {
  if (p <= 0.0) return x;
  if (p >= 1.0) {
    throw Error(ErrorCode::kConfigInvalid, "dropout probability must be < 1");
  }
  const std::uint64_t threshold = static_cast<std::uint64_t>(
      p * static_cast<double>(std::numeric_limits<std::uint64_t>::max()));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    // splitmix64 of (seed, i) decides each element independently
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (i + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    (*mask)[i] = z < threshold ? T(0) : keep_scale;
    o[i] = xv[i] * (*mask)[i];
  }
  g.record({x}, out, [x = x, out, mask]() mutable {
    std::span<const T> d = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d[i] * (*mask)[i];
  });
  return out;
}

#define NEPGPT_INSTANTIATE(T)                                                  \
  template class Tensor<T>;                                                    \
  template class Graph<T>;                                                     \
  template void softmax_rows<T>(std::span<T>, std::size_t);                    \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*,   \
                           const T*, T*);                                      \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*,   \
                           const T*, T*);                                      \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*,   \
                           const T*, T*);                                      \
  template Tensor<T> matmul<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, \
                               bool);                                          \
  template Tensor<T> add<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> add_bias<T>(Graph<T>&, const Tensor<T>&,                  \
                                 const Tensor<T>&);                            \
  template Tensor<T> gelu<T>(Graph<T>&, const Tensor<T>&);                     \
  template Tensor<T> layernorm<T>(Graph<T>&, const Tensor<T>&,                 \
                                  const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> embedding<T>(Graph<T>&, const Tensor<T>&,                 \
                                  std::span<const std::uint16_t>, Shape);      \
  template Tensor<T> softmax_cross_entropy<T>(                                 \
      Graph<T>&, const Tensor<T>&, std::span<const std::uint16_t>, T);         \
  template Tensor<T> sum<T>(Graph<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul_scalar<T>(Graph<T>&, const Tensor<T>&, T);            \
  template Tensor<T> mul<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> dropout<T>(Graph<T>&, const Tensor<T>&, double,           \
                                std::uint64_t);

NEPGPT_INSTANTIATE(float)
NEPGPT_INSTANTIATE(double)
NEPGPT_INSTANTIATE(long double)

}  // namespace nepgpt::tensor
