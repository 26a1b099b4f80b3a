#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "nepgpt/error.hpp"

namespace nepgpt::tensor {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Shared handle to a dense row-major array. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::span<T> grad();
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();
  void clear_grad() { std::vector<T>().swap(impl_->grad); }

  bool same(const Tensor& other) const { return impl_ == other.impl_; }
  // Deep copy of shape and values; no gradient, not tracked.
  Tensor clone() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<U>(impl_->data[i]);
    }
    return Tensor<U>(shape(), std::move(out), requires_grad());
  }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Tape of primitive applications in execution order. One graph per forward
// pass; backward walks it in reverse.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  // Records `fn` when any input requires gradients and marks `output` as
  // requiring gradients. Returns whether a node was recorded.
  bool record(std::initializer_list<Tensor<T>> inputs, Tensor<T>& output,
              BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded node in reverse,
  // accumulating into existing gradient buffers. Throws NotScalarLoss.
  void backward(Tensor<T> loss);

  // Inference mode: nothing is recorded while disabled.
  void set_enabled(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool enabled_ = true;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
T gelu_value(T x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  return static_cast<T>(0.5) * x * (1 + std::tanh(c * (x + k * x * x * x)));
}

template <typename T>
T gelu_derivative(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  T inner = c * (x + k * x * x * x);
  T t = std::tanh(inner);
  T dinner = c * (1 + 3 * k * x * x);
  return static_cast<T>(0.5) * (1 + t) +
         static_cast<T>(0.5) * x * (1 - t * t) * dinner;
}

// Row-wise stable softmax over the last `cols` entries of each row, in place.
template <typename T>
void softmax_rows(std::span<T> values, std::size_t cols);

// Primitive shape rules. Leading dimensions of `a` in matmul and of `x` in the
// row-wise ops are flattened into rows.
//   matmul:       a [..., K] x b [K, N] -> [..., N]; with transpose_b, b is [N, K]
//   add:          a, b same shape
//   add_bias:     a [..., N] + bias [N]
//   gelu:         elementwise
//   layernorm:    x [..., D], gamma [D], beta [D]
//   embedding:    table [V, D], ids -> index_shape + [D]
//   softmax_cross_entropy: logits [..., V], one target per row -> scalar
//                 mean over rows, multiplied by `scale`
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b,
                 bool transpose_b = false);
template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add_bias(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& bias);
template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> layernorm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta);
template <typename T>
Tensor<T> embedding(Graph<T>& g, const Tensor<T>& table,
                    std::span<const std::uint16_t> ids, Shape index_shape);
template <typename T>
Tensor<T> softmax_cross_entropy(Graph<T>& g, const Tensor<T>& logits,
                                std::span<const std::uint16_t> targets,
                                T scale = 1);

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> mul_scalar(Graph<T>& g, const Tensor<T>& x, T s);
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
// Inverted dropout with a mask derived from (seed, element index).
template <typename T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double p,
                  std::uint64_t seed);

// Dense kernels, C += op(A) * op(B), row-major. Reduction order is the
// natural index order, so results are deterministic.
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c);
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c);
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c);

// ---------------------------------------------------------------------------
// Gradient checking

enum class FdPrecision {
  kSame,      // central differences evaluated in T
  kExtended,  // central differences evaluated in long double
};

enum class FdStencil {
  kTwoPoint,   // (f(x+h) - f(x-h)) / 2h, error O(h^2)
  kFourPoint,  // (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, error O(h^4)
};

struct GradCheckOptions {
  double eps = 1e-3;
  FdPrecision fd_precision = FdPrecision::kSame;
  FdStencil stencil = FdStencil::kTwoPoint;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

inline double grad_rel_error(double analytic, double numeric) {
  double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {
template <typename U, typename F>
U eval_scalar(F& f, std::vector<Tensor<U>>& inputs) {
  Graph<U> g;
  g.set_enabled(false);
  Tensor<U> out = f(g, inputs);
  if (out.numel() != 1) {
    throw Error(ErrorCode::kNotScalarLoss,
                "grad_check function returned shape " +
                    shape_string(out.shape()));
  }
  U v = out.data()[0];
  if (!std::isfinite(static_cast<double>(v))) {
    throw Error(ErrorCode::kNonFiniteValue,
                "grad_check function produced a non-finite value");
  }
  return v;
}

template <typename U, typename T, typename F>
void central_differences(F& f, const std::vector<Tensor<T>>& inputs,
                         double eps, FdStencil stencil,
                         std::vector<std::vector<double>>& out) {
  std::vector<Tensor<U>> work;
  for (const auto& t : inputs) {
    auto c = t.template cast<U>();
    c.set_requires_grad(false);
    work.push_back(c);
  }
  out.assign(inputs.size(), {});
  for (std::size_t i = 0; i < work.size(); ++i) {
    out[i].resize(work[i].numel());
    auto d = work[i].data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      const U saved = d[j];
      const U h = static_cast<U>(eps);
      auto at = [&](U delta) {
        d[j] = saved + delta;
        return eval_scalar<U>(f, work);
      };
      U slope;
      if (stencil == FdStencil::kTwoPoint) {
        slope = (at(h) - at(-h)) / (2 * h);
      } else {
        slope = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      }
      d[j] = saved;
      out[i][j] = static_cast<double>(slope);
    }
  }
}
}  // namespace detail

// `f(graph, inputs)` must build a scalar from `inputs` using graph ops. With
// FdPrecision::kExtended, `f` must also accept Graph<long double> (a generic
// lambda does).
template <typename T, typename F>
GradCheckResult grad_check(F&& f, const std::vector<Tensor<T>>& inputs,
                           const GradCheckOptions& opts = {}) {
  std::vector<Tensor<T>> work;
  for (const auto& t : inputs) {
    auto c = t.clone();
    c.set_requires_grad(true);
    work.push_back(c);
  }
  {
    Graph<T> g;
    Tensor<T> out = f(g, work);
    if (!std::isfinite(static_cast<double>(out.item()))) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "grad_check function produced a non-finite value");
    }
    g.backward(out);
  }
  std::vector<std::vector<double>> numeric;
  if constexpr (std::is_invocable_v<F&, Graph<long double>&,
                                    std::vector<Tensor<long double>>&>) {
    if (opts.fd_precision == FdPrecision::kExtended) {
      detail::central_differences<long double>(f, inputs, opts.eps,
                                                opts.stencil, numeric);
    } else {
      detail::central_differences<T>(f, inputs, opts.eps, opts.stencil,
                                     numeric);
    }
  } else {
    if (opts.fd_precision == FdPrecision::kExtended) {
      throw Error(ErrorCode::kConfigInvalid,
                  "extended-precision grad_check needs a generic function");
    }
    detail::central_differences<T>(f, inputs, opts.eps, opts.stencil,
                                     numeric);
  }
  GradCheckResult res;
  for (std::size_t i = 0; i < work.size(); ++i) {
    auto gr = work[i].grad();
    for (std::size_t j = 0; j < numeric[i].size(); ++j) {
      double a = static_cast<double>(gr[j]);
      double e = grad_rel_error(a, numeric[i][j]);
      ++res.entries_checked;
      if (e > res.max_rel_error || res.entries_checked == 1) {
        res.max_rel_error = e;
        res.worst_input = i;
        res.worst_index = j;
        res.worst_analytic = a;
        res.worst_numeric = numeric[i][j];
      }
    }
  }
  return res;
}

}  // namespace nepgpt::tensor
