#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "meanflow/rng.hpp"
#include "meanflow/tensor.hpp"

using namespace meanflow;

namespace {

Tensor random_tensor(Shape s, Philox& rng) {
  Tensor t(std::move(s));
  for (double& x : t.data()) x = rng.normal();
  return t;
}

}  // namespace

TEST(Tensor, ConstructionChecksDataSize) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 1.5);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
}

TEST(Tensor, MatmulMatchesTripleLoop) {
  Philox rng(1);
  const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  const Tensor c = kernels::matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-13);
    }
  EXPECT_THROW(kernels::matmul(a, a), ShapeError);
}

TEST(Tensor, TransposedProductsAgreeWithExplicitTranspose) {
  Philox rng(2);
  const Tensor a = random_tensor({4, 6}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({3, 6}, rng);
  auto transpose = [](const Tensor& m) {
    Tensor t(Shape{m.cols(), m.rows()});
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) t.at(j, i) = m.at(i, j);
    return t;
  };
  EXPECT_LE(max_abs_diff(kernels::matmul_tn(a, b), kernels::matmul(transpose(a), b)), 1e-13);
  EXPECT_LE(max_abs_diff(kernels::matmul_nt(a, c), kernels::matmul(a, transpose(c))), 1e-13);
}

TEST(Tensor, RowAndColumnReductions) {
  const Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor rs = kernels::row_sum(a);
  EXPECT_EQ(rs.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(rs[0], 6.0);
  EXPECT_DOUBLE_EQ(rs[1], 15.0);
  const Tensor cs = kernels::sum_rows(a, Shape{3});
  EXPECT_DOUBLE_EQ(cs[0], 5.0);
  EXPECT_DOUBLE_EQ(cs[2], 9.0);
  EXPECT_DOUBLE_EQ(kernels::sum_all(a), 21.0);
  const Tensor col(Shape{2, 1}, std::vector<double>{2, -1});
  const Tensor m = kernels::mul_col(a, col);
  EXPECT_DOUBLE_EQ(m.at(0, 2), 6.0);
  EXPECT_DOUBLE_EQ(m.at(1, 0), -4.0);
}

TEST(Tensor, GatherAndScatterAreAdjoint) {
  Philox rng(3);
  const Tensor table = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> idx = {2, 0, 2, 3};
  const Tensor g = kernels::gather_rows(table, idx);
  EXPECT_DOUBLE_EQ(g.at(0, 1), table.at(2, 1));
  EXPECT_DOUBLE_EQ(g.at(3, 2), table.at(3, 2));
  const Tensor up = random_tensor({4, 3}, rng);
  const Tensor back = kernels::scatter_add_rows(up, idx, table.shape());
  // <gather(T), U> == <T, scatter(U)>
  EXPECT_NEAR(kernels::sum_all(kernels::mul(g, up)), kernels::sum_all(kernels::mul(table, back)), 1e-13);
  const std::vector<std::size_t> bad = {4};
  EXPECT_THROW(kernels::gather_rows(table, bad), ShapeError);
}

TEST(Tensor, SinusoidInterleavesSinAndCos) {
  const Tensor x(Shape{2, 1}, std::vector<double>{0.25, 0.5});
  const std::vector<double> f = {1.0, 3.0};
  const Tensor s = kernels::sinusoid(x, f);
  ASSERT_EQ(s.shape(), (Shape{2, 4}));
  EXPECT_DOUBLE_EQ(s.at(1, 0), std::sin(0.5));
  EXPECT_DOUBLE_EQ(s.at(1, 1), std::cos(0.5));
  EXPECT_DOUBLE_EQ(s.at(0, 2), std::sin(0.75));
  EXPECT_DOUBLE_EQ(s.at(0, 3), std::cos(0.75));
}

TEST(Tensor, ConcatAndSliceRoundTrip) {
  Philox rng(4);
  const Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng);
  const Tensor* parts[] = {&a, &b};
  const Tensor c = kernels::concat_cols(parts);
  EXPECT_TRUE(bitwise_equal(kernels::slice_cols(c, 0, 2), a));
  EXPECT_TRUE(bitwise_equal(kernels::slice_cols(c, 2, 4), b));
}

TEST(Tensor, ActivationSlopesMatchFiniteDifferences) {
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double h = 1e-6;
    EXPECT_NEAR(kernels::silu_grad(x), (kernels::silu(x + h) - kernels::silu(x - h)) / (2 * h), 1e-8);
    EXPECT_NEAR(kernels::gelu_grad(x), (kernels::gelu(x + h) - kernels::gelu(x - h)) / (2 * h), 1e-8);
  }
}

// Known-answer vectors for Philox4x32-10.
TEST(Philox, KnownAnswers) {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  EXPECT_EQ(Philox::block(A4{0, 0, 0, 0}, A2{0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox::block(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, A2{0xffffffff, 0xffffffff}),
            (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox::block(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, A2{0xa4093822, 0x299f31d0}),
            (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, FirstWordsComeFromCounterZero) {
  Philox rng(0, 0);
  EXPECT_EQ(rng.next_u32(), 0x6627e8d5u);
  EXPECT_EQ(rng.next_u32(), 0xe169c58du);
}

TEST(Philox, SeedAndStreamDetermineTheSequence) {
  Philox a(42, 1), b(42, 1), c(42, 2), d(43, 1);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    (void)i;
  }
  EXPECT_NE(Philox(42, 1).next_u64(), c.next_u64());
  EXPECT_NE(Philox(42, 1).next_u64(), d.next_u64());
  EXPECT_EQ(Philox(42, 7).next_u64(), a.split(7).next_u64());
}

TEST(Philox, UniformAndBelowStayInRange) {
  Philox rng(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Philox, NormalMomentsWithinSamplingError) {
  Philox rng(6);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
    s4 += x * x * x * x;
  }
  // Standard errors: mean 1/sqrt(n) ~ 2.2e-3, variance sqrt(2/n) ~ 3.2e-3.
  EXPECT_NEAR(s / n, 0.0, 0.011);
  EXPECT_NEAR(s2 / n, 1.0, 0.016);
  EXPECT_NEAR(s4 / n, 3.0, 0.08);
}
