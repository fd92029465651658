#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtd/model.hpp"

using namespace mtd;

namespace {

// Triple-loop oracle with explicit zero padding.
double at(const Vector& x, long k)
{
  return k >= 0 && k < x.size() ? x[k] : 0.0;
}

double naive_a2(const Vector& x, long l)
{
  double s = 0.0;
  for (long k = 0; k < x.size(); ++k)
    s += at(x, k) * at(x, k + l);
  return s / static_cast<double>(x.size());
}

double naive_a3(const Vector& x, long l1, long l2)
{
  double s = 0.0;
  for (long k = 0; k < x.size(); ++k)
    s += at(x, k) * at(x, k + l1) * at(x, k + l2);
  return s / static_cast<double>(x.size());
}

Vector random_vector(long n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (long i = 0; i < n; ++i)
    v[i] = u(rng);
  return v;
}

} // namespace

TEST(MomentLayout, DimensionAndOrdering)
{
  for (std::size_t L : {1u, 2u, 5u, 21u}) {
    MomentLayout lay(L);
    EXPECT_EQ(lay.dim(), 1 + L + L * (L + 1) / 2);
    std::size_t expected = 1 + L;
    for (std::size_t l1 = 0; l1 < L; ++l1)
      for (std::size_t l2 = l1; l2 < L; ++l2) {
        EXPECT_EQ(lay.pair_index(l1, l2), expected);
        EXPECT_EQ(lay.pair_index(l2, l1), expected);
        EXPECT_EQ(lay.pair_at(expected), std::make_pair(l1, l2));
        ++expected;
      }
    EXPECT_EQ(expected, lay.dim());
  }
  EXPECT_EQ(MomentLayout(21).dim(), 253u);
}

TEST(MomentLayout, MultiplicityCoversFullGrid)
{
  for (std::size_t L : {1u, 3u, 8u}) {
    MomentLayout lay(L);
    const Vector m = lay.multiplicity();
    EXPECT_DOUBLE_EQ(m.head(1 + L).sum(), static_cast<double>(1 + L));
    EXPECT_DOUBLE_EQ(m.tail(lay.third_order_count()).sum(), static_cast<double>(L * L));
  }
}

TEST(MomentLayout, RejectsZeroLength)
{
  EXPECT_THROW(MomentLayout(0), InvalidInput);
}

TEST(MomentVector, GridRoundTrip)
{
  std::mt19937_64 rng(3);
  const std::size_t L = 6;
  MomentLayout lay(L);
  MomentVector v(lay, random_vector(static_cast<long>(lay.dim()), rng));
  const Matrix grid = v.third_order_grid();
  EXPECT_TRUE(grid.isApprox(grid.transpose(), 0.0));
  const auto back = MomentVector::from_parts(v.first(), v.values.segment(1, L), grid);
  EXPECT_EQ(back.values, v.values);
}

TEST(SignalAutocorrelations, ZeroSignal)
{
  const auto ac = signal_autocorrelations(Vector::Zero(3));
  EXPECT_EQ(ac.a1, 0.0);
  EXPECT_TRUE(ac.a2.isZero(0.0));
  EXPECT_TRUE(ac.a3.isZero(0.0));
}

TEST(SignalAutocorrelations, SmallExample)
{
  const Vector x = (Vector(3) << 1, 2, 3).finished();
  const auto ac = signal_autocorrelations(x);
  EXPECT_NEAR(ac.a1, 2.0, 1e-15);
  EXPECT_NEAR(ac.a2[0], 14.0 / 3.0, 1e-15);
  EXPECT_NEAR(ac.a2[1], 8.0 / 3.0, 1e-15);
  EXPECT_NEAR(ac.a2[2], 1.0, 1e-15);
  EXPECT_NEAR(ac.a3(1, 2), 2.0, 1e-15);
  EXPECT_NEAR(ac.a3(2, 1), 2.0, 1e-15);
}

TEST(SignalAutocorrelations, SingleSample)
{
  const double c = -1.7;
  const auto ac = signal_autocorrelations(Vector::Constant(1, c));
  EXPECT_DOUBLE_EQ(ac.a1, c);
  EXPECT_DOUBLE_EQ(ac.a2[0], c * c);
  EXPECT_DOUBLE_EQ(ac.a3(0, 0), c * c * c);
}

TEST(SignalAutocorrelations, EmptyThrows)
{
  EXPECT_THROW(signal_autocorrelations(Vector(0)), InvalidInput);
}

TEST(SignalAutocorrelations, MatchesTripleLoop)
{
  std::mt19937_64 rng(11);
  for (long L = 1; L <= 12; ++L) {
    const Vector x = random_vector(L, rng);
    const auto ac = signal_autocorrelations(x);
    EXPECT_NEAR(ac.a1, x.sum() / static_cast<double>(L), 1e-12);
    for (long l1 = 0; l1 < L; ++l1) {
      EXPECT_NEAR(ac.a2[l1], naive_a2(x, l1), 1e-12);
      for (long l2 = 0; l2 < L; ++l2)
        EXPECT_NEAR(ac.a3(l1, l2), naive_a3(x, l1, l2), 1e-12);
    }
  }
}

TEST(BiasMatrix, Entries)
{
  const double s = 0.7;
  const Matrix B = bias_matrix(s, 4);
  EXPECT_DOUBLE_EQ(B(0, 0), 3 * s);
  EXPECT_DOUBLE_EQ(B(0, 2), s);
  EXPECT_DOUBLE_EQ(B(2, 0), s);
  for (int l = 1; l < 4; ++l)
    EXPECT_DOUBLE_EQ(B(l, l), s);
  EXPECT_DOUBLE_EQ(B(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(B(2, 3), 0.0);
}

TEST(ModelMoments, ZeroSignal)
{
  const double s = 0.3;
  const auto m = model_moments(Params{Vector::Zero(4), 0.4}, NoiseModel(s));
  EXPECT_EQ(m.first(), 0.0);
  EXPECT_EQ(m.second(0), s);
  for (std::size_t l = 1; l < 4; ++l)
    EXPECT_EQ(m.second(l), 0.0);
  EXPECT_TRUE(m.values.tail(m.layout.third_order_count()).isZero(0.0));
}

TEST(ModelMoments, WorkedExample)
{
  const Vector x = (Vector(3) << 1, 2, 3).finished();
  const auto m = model_moments(Params{x, 0.5}, NoiseModel(1.0));
  EXPECT_NEAR(m.first(), 1.0, 1e-15);
  EXPECT_NEAR(m.second(0), 1.0 + 14.0 / 6.0, 1e-14);
  EXPECT_NEAR(m.second(1), 8.0 / 6.0, 1e-14);
  EXPECT_NEAR(m.second(2), 3.0 / 6.0, 1e-14);
  // A3[0,0] = (1 + 8 + 27) / 3 = 12; bias term gamma * A1 * 3 sigma2 = 3.
  EXPECT_NEAR(m.third(0, 0), 0.5 * 12.0 + 0.5 * 2.0 * 3.0, 1e-14);
  EXPECT_NEAR(m.third(1, 1), 0.5 * naive_a3(x, 1, 1) + 0.5 * 2.0 * 1.0, 1e-14);
  EXPECT_NEAR(m.third(1, 2), 0.5 * 2.0, 1e-14);
}

TEST(ModelMoments, NoiselessIsScaledAutocorrelation)
{
  std::mt19937_64 rng(5);
  const Vector x = random_vector(7, rng);
  const auto ac = signal_autocorrelations(x);
  const double g = 0.37;
  const auto m = model_moments(Params{x, g}, NoiseModel(0.0));
  const auto expected = MomentVector::from_parts(g * ac.a1, g * ac.a2, g * ac.a3);
  EXPECT_TRUE(m.values.isApprox(expected.values, 1e-15));
}

TEST(ModelMoments, HomogeneousInGamma)
{
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = random_vector(5, rng);
    const auto m1 = model_moments(Params{x, 0.21}, NoiseModel(0.0));
    const auto m2 = model_moments(Params{x, 0.42}, NoiseModel(0.0));
    EXPECT_TRUE(m2.values.isApprox(2.0 * m1.values, 1e-14));
  }
}

TEST(ModelJacobian, FirstRowAndGammaColumn)
{
  const Vector x = (Vector(3) << 1, 2, 3).finished();
  const double g = 0.3;
  const Matrix J = model_jacobian(Params{x, g}, NoiseModel(0.5));
  EXPECT_NEAR(J(0, 3), 2.0, 1e-15);
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(J(0, k), g / 3.0, 1e-15);
  const auto m = model_moments(Params{x, 1.0}, NoiseModel(0.5));
  // gamma-column equals m at gamma = 1 minus the noise-only second-order spike.
  Vector expected = m.values;
  expected[1] -= 0.5;
  EXPECT_TRUE(J.col(3).isApprox(expected, 1e-14));
}

class JacobianFiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(JacobianFiniteDifference, MatchesCentralDifferences)
{
  const long L = GetParam();
  std::mt19937_64 rng(100 + static_cast<unsigned>(L));
  std::uniform_real_distribution<double> ug(0.05, 0.5), us(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Params theta{random_vector(L, rng), ug(rng)};
    const NoiseModel noise(us(rng));
    const Matrix J = model_jacobian(theta, noise);
    ASSERT_EQ(J.rows(), static_cast<long>(MomentLayout(L).dim()));
    ASSERT_EQ(J.cols(), L + 1);
    const Vector t0 = theta.packed();
    const double h = 1e-6 * std::max(1.0, t0.cwiseAbs().maxCoeff());
    Matrix fd(J.rows(), J.cols());
    for (long c = 0; c <= L; ++c) {
      Vector tp = t0, tm = t0;
      tp[c] += h;
      tm[c] -= h;
      fd.col(c) = (model_moments(Params::unpack(tp), noise).values - model_moments(Params::unpack(tm), noise).values) /
                  (2.0 * h);
    }
    const double rel = (J - fd).cwiseAbs().maxCoeff() / std::max(1.0, fd.cwiseAbs().maxCoeff());
    EXPECT_LE(rel, 1e-6) << "L=" << L << " trial=" << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(Lengths, JacobianFiniteDifference, ::testing::Values(3, 5, 8));

TEST(NoiseModel, RejectsNegative)
{
  EXPECT_THROW(NoiseModel(-1.0), InvalidInput);
  EXPECT_THROW(NoiseModel(std::nan("")), InvalidInput);
}

TEST(Params, PackRoundTrip)
{
  const Params p{(Vector(3) << 1, 2, 3).finished(), 0.2};
  const Params q = Params::unpack(p.packed());
  EXPECT_EQ(q.x, p.x);
  EXPECT_EQ(q.gamma, p.gamma);
}
