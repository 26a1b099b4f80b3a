#include "nepgpt/attention.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

namespace nepgpt::attention {
namespace {

using tensor::FdPrecision;
using tensor::FdStencil;
using tensor::GradCheckOptions;
using tensor::Shape;
using testing::random_tensor;

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  }
  return m;
}

// Independent oracle: the textbook formula with an explicit score matrix,
// written without reference to the library kernels.
std::vector<double> dense_attention(const std::vector<double>& q,
                                    const std::vector<double>& k,
                                    const std::vector<double>& v,
                                    std::size_t heads, std::size_t t,
                                    std::size_t dh, bool causal) {
  std::vector<double> out(heads * t * dh, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(t, -INFINITY);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        if (causal && j > i) continue;
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) {
          dot += q[(h * t + i) * dh + c] * k[(h * t + j) * dh + c];
        }
        s[j] = dot * scale;
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < t; ++j) z += std::exp(s[j] - mx);
      for (std::size_t j = 0; j < t; ++j) {
        double p = std::exp(s[j] - mx) / z;
        for (std::size_t c = 0; c < dh; ++c) {
          out[(h * t + i) * dh + c] += p * v[(h * t + j) * dh + c];
        }
      }
    }
  }
  return out;
}

template <typename T>
std::vector<double> as_double(const Tensor<T>& x) {
  return std::vector<double>(x.data().begin(), x.data().end());
}

TEST(AttentionForward, SingleTokenReturnsValue) {
  std::mt19937_64 rng(1);
  auto q = random_tensor<float>({2, 1, 4}, rng);
  auto k = random_tensor<float>({2, 1, 4}, rng);
  auto v = random_tensor<float>({2, 1, 4}, rng);
  for (bool causal : {true, false}) {
    auto out = attention_tiled(q, k, v, AttnTiling{}, causal);
    for (std::size_t i = 0; i < v.numel(); ++i) {
      EXPECT_FLOAT_EQ(out.data()[i], v.data()[i]);
    }
  }
}

TEST(AttentionForward, ZeroScoresAveragePrefix) {
  std::mt19937_64 rng(2);
  Tensor<double> q({1, 3, 2});  // all zeros: every score is 0
  auto k = random_tensor<double>({1, 3, 2}, rng);
  auto v = random_tensor<double>({1, 3, 2}, rng);
  auto out = attention_tiled(q, k, v, AttnTiling{2, 1}, true);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j <= t; ++j) mean += v.data()[j * 2 + c];
      mean /= static_cast<double>(t + 1);
      EXPECT_NEAR(out.data()[t * 2 + c], mean, 1e-15);
    }
  }
}

TEST(AttentionForward, NaiveMatchesDenseOracle) {
  std::mt19937_64 rng(3);
  auto q = random_tensor<double>({2, 9, 3}, rng);
  auto k = random_tensor<double>({2, 9, 3}, rng);
  auto v = random_tensor<double>({2, 9, 3}, rng);
  for (bool causal : {true, false}) {
    auto ref = dense_attention(as_double(q), as_double(k), as_double(v), 2, 9,
                               3, causal);
    auto naive = attention_naive(q, k, v, causal);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(naive.data()[i], ref[i], 1e-13);
    }
  }
}

TEST(AttentionForward, TiledMatchesNaive32Bit) {
  std::mt19937_64 rng(4);
  const std::vector<AttnTiling> tilings = {
      {1, 1}, {3, 5}, {16, 16}, {64, 64}, {7, 128}, {128, 3}};
  for (std::size_t t : {1, 2, 17, 64, 128}) {
    for (std::size_t heads : {1, 2, 4}) {
      auto q = random_tensor<float>({heads, t, 8}, rng);
      auto k = random_tensor<float>({heads, t, 8}, rng);
      auto v = random_tensor<float>({heads, t, 8}, rng);
      auto naive = attention_naive(q, k, v, true);
      for (const auto& tiling : tilings) {
        auto tiled = attention_tiled(q, k, v, tiling, true);
        ASSERT_LT(max_abs_diff(tiled, naive), 1e-5)
            << "t=" << t << " heads=" << heads << " tiling "
            << tiling.block_rows << "x" << tiling.block_cols;
      }
    }
  }
}

TEST(AttentionForward, TiledMatchesNaive64Bit) {
  std::mt19937_64 rng(5);
  for (std::size_t t : {5, 33, 100}) {
    auto q = random_tensor<double>({2, t, 4}, rng, 2.0);
    auto k = random_tensor<double>({2, t, 4}, rng, 2.0);
    auto v = random_tensor<double>({2, t, 4}, rng);
    for (bool causal : {true, false}) {
      auto naive = attention_naive(q, k, v, causal);
      auto tiled = attention_tiled(q, k, v, AttnTiling{8, 13}, causal);
      EXPECT_LT(max_abs_diff(tiled, naive), 1e-10);
    }
  }
}

TEST(AttentionForward, TilingInvariance) {
  std::mt19937_64 rng(6);
  auto q = random_tensor<float>({2, 70, 8}, rng);
  auto k = random_tensor<float>({2, 70, 8}, rng);
  auto v = random_tensor<float>({2, 70, 8}, rng);
  auto base = attention_tiled(q, k, v, AttnTiling{64, 64}, true);
  for (AttnTiling tiling : {AttnTiling{1, 70}, AttnTiling{70, 1},
                            AttnTiling{9, 4}, AttnTiling{32, 16}}) {
    EXPECT_LT(max_abs_diff(attention_tiled(q, k, v, tiling, true), base), 1e-6);
  }
}

TEST(AttentionForward, RowWeightsSumToOne) {
  std::mt19937_64 rng(7);
  auto q = random_tensor<float>({3, 40, 8}, rng, 3.0);
  auto k = random_tensor<float>({3, 40, 8}, rng, 3.0);
  auto v = random_tensor<float>({3, 40, 8}, rng);
  for (bool causal : {true, false}) {
    auto sums = row_weight_sums(q, k, v, AttnTiling{7, 6}, causal);
    ASSERT_EQ(sums.size(), 120u);
    for (float s : sums) EXPECT_NEAR(s, 1.0f, 1e-5f);
  }
}

TEST(AttentionForward, LargeScoresStayFinite) {
  Tensor<float> q({1, 4, 2}, std::vector<float>(8, 300.0f));
  Tensor<float> k({1, 4, 2}, std::vector<float>(8, 300.0f));
  Tensor<float> v({1, 4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto out = attention_tiled(q, k, v, AttnTiling{1, 1}, true);
  for (float x : out.data()) EXPECT_TRUE(std::isfinite(x));
  EXPECT_NEAR(out.data()[6], 4.0f, 1e-5f);  // uniform over 4 rows
}

TEST(AttentionForward, ShapeMismatch) {
  Tensor<float> q({1, 4, 2}), k({1, 3, 2}), v({1, 4, 2});
  EXPECT_THROW(attention_tiled(q, k, v, AttnTiling{}, true), Error);
  AttnTiling bad{0, 4};
  EXPECT_THROW(bad.validate(), Error);
  tensor::Graph<float> g;
  Tensor<float> qkv({1, 4, 9});
  EXPECT_THROW(self_attention(g, qkv, 2), Error);
}

TEST(AttentionBackward, TiledMatchesNaive) {
  std::mt19937_64 rng(8);
  const std::size_t heads = 2, t = 37, dh = 4;
  auto q = random_tensor<double>({heads, t, dh}, rng);
  auto k = random_tensor<double>({heads, t, dh}, rng);
  auto v = random_tensor<double>({heads, t, dh}, rng);
  auto dout = random_tensor<double>({heads, t, dh}, rng);
  for (bool causal : {true, false}) {
    std::vector<double> out(heads * t * dh), lse(heads * t);
    forward_naive(q.data().data(), k.data().data(), v.data().data(), heads, t,
                  dh, causal, out.data(), lse.data());
    std::vector<double> dq1(out.size()), dk1(out.size()), dv1(out.size());
    std::vector<double> dq2(out.size()), dk2(out.size()), dv2(out.size());
    backward_naive(q.data().data(), k.data().data(), v.data().data(),
                   out.data(), lse.data(), dout.data().data(), heads, t, dh,
                   causal, dq1.data(), dk1.data(), dv1.data());
    backward_tiled(q.data().data(), k.data().data(), v.data().data(),
                   out.data(), lse.data(), dout.data().data(), heads, t, dh,
                   AttnTiling{5, 8}, causal, dq2.data(), dk2.data(), dv2.data());
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_NEAR(dq1[i], dq2[i], 1e-12);
      EXPECT_NEAR(dk1[i], dk2[i], 1e-12);
      EXPECT_NEAR(dv1[i], dv2[i], 1e-12);
    }
  }
}

template <typename T>
void check_self_attention_grad(AttnMode mode, double tol) {
  std::mt19937_64 rng(9);
  auto qkv = random_tensor<T>({2, 6, 12}, rng);
  std::vector<double> w(2 * 6 * 4);
  std::normal_distribution<double> normal;
  for (auto& x : w) x = normal(rng);
  AttnOptions opts;
  opts.mode = mode;
  opts.tiling = {4, 3};
  GradCheckOptions gc;
  gc.fd_precision = FdPrecision::kExtended;
  if (std::is_same_v<T, double>) gc.stencil = FdStencil::kFourPoint;
  auto res = tensor::grad_check<T>(
      [&](auto& g, auto& in) {
        using U = typename std::decay_t<decltype(in[0])>::value_type;
        auto out = self_attention(g, in[0], 2, opts);
        Tensor<U> wt(out.shape(), std::vector<U>(w.begin(), w.end()));
        return tensor::sum(g, tensor::mul(g, out, wt));
      },
      {qkv}, gc);
  EXPECT_LT(res.max_rel_error, tol)
      << "index " << res.worst_index << " analytic " << res.worst_analytic
      << " numeric " << res.worst_numeric;
}

TEST(AttentionBackward, SelfAttentionGradCheck32) {
  check_self_attention_grad<float>(AttnMode::kTiled, 1e-3);
  check_self_attention_grad<float>(AttnMode::kNaive, 1e-3);
}

TEST(AttentionBackward, SelfAttentionGradCheck64) {
  check_self_attention_grad<double>(AttnMode::kTiled, 1e-6);
  check_self_attention_grad<double>(AttnMode::kNaive, 1e-6);
}

TEST(SelfAttention, TiledAndNaiveModesAgree) {
  std::mt19937_64 rng(10);
  auto qkv = random_tensor<float>({3, 20, 24}, rng);
  tensor::Graph<float> g;
  AttnOptions tiled, naive;
  tiled.tiling = {6, 7};
  naive.mode = AttnMode::kNaive;
  auto a = self_attention(g, qkv, 4, tiled);
  auto b = self_attention(g, qkv, 4, naive);
  EXPECT_EQ(a.shape(), (Shape{3, 20, 8}));
  EXPECT_LT(max_abs_diff(a, b), 1e-5);
}

}  // namespace
}  // namespace nepgpt::attention
