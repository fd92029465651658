#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mtd/simulate.hpp"

using namespace mtd;

namespace {

void expect_well_separated(const std::vector<std::size_t>& t, const MeasurementSpec& spec)
{
  ASSERT_EQ(t.size(), spec.p);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_GE(t[i], spec.L + 1);
    EXPECT_LE(t[i], spec.N - spec.L);
    if (i > 0)
      EXPECT_GE(t[i] - t[i - 1], 2 * spec.L - 1);
  }
}

} // namespace

TEST(MeasurementSpec, PaperExampleDensity)
{
  const MeasurementSpec spec{120, 8, 6, 0.25, 1};
  EXPECT_NO_THROW(spec.validate());
  EXPECT_DOUBLE_EQ(spec.gamma(), 0.4);
}

TEST(MeasurementSpec, Infeasible)
{
  EXPECT_THROW((MeasurementSpec{100, 10, 6, 0.0, 1}.validate()), InvalidInput);
  EXPECT_THROW((MeasurementSpec{10, 5, 1, 0.0, 1}.validate()), InvalidInput);
  EXPECT_THROW((MeasurementSpec{100, 5, 1, -1.0, 1}.validate()), InvalidInput);
  EXPECT_THROW((MeasurementSpec{100, 5, 0, 0.0, 1}.validate()), InvalidInput);
  Rng rng(1);
  EXPECT_THROW(sample_translations(MeasurementSpec{100, 10, 6, 0.0, 1}, rng), InvalidInput);
}

TEST(MeasurementSpec, FromDensity)
{
  const auto spec = MeasurementSpec::from_density(100000, 8, 0.2, 0.0, 1);
  EXPECT_EQ(spec.p, 2500u);
  EXPECT_DOUBLE_EQ(spec.gamma(), 0.2);
}

TEST(SampleTranslations, SingleCopyTightFit)
{
  for (std::size_t L : {1u, 3u, 8u}) {
    const MeasurementSpec spec{2 * L + 2, L, 1, 0.0, 1};
    Rng rng(L);
    for (int i = 0; i < 200; ++i)
      expect_well_separated(sample_translations(spec, rng), spec);
  }
}

TEST(SampleTranslations, SeparationOverManyDraws)
{
  const MeasurementSpec spec{200, 5, 8, 0.0, 1};
  Rng rng(42);
  std::size_t min_gap = spec.N;
  for (int draw = 0; draw < 10000; ++draw) {
    const auto t = sample_translations(spec, rng);
    expect_well_separated(t, spec);
    for (std::size_t i = 1; i < t.size(); ++i)
      min_gap = std::min(min_gap, t[i] - t[i - 1]);
  }
  EXPECT_GE(min_gap, 9u);
  // The tightest spacing is reachable.
  EXPECT_EQ(min_gap, 9u);
}

TEST(SampleTranslations, ZeroBudgetIsDeterministic)
{
  // budget = (N - 2L - 1) - (p - 1)(2L - 1) = 0
  const std::size_t L = 4, p = 3;
  const std::size_t N = 2 * L + 1 + (p - 1) * (2 * L - 1);
  const MeasurementSpec spec{N, L, p, 0.0, 1};
  Rng rng(9);
  const auto t = sample_translations(spec, rng);
  EXPECT_EQ(t, (std::vector<std::size_t>{5, 12, 19}));
}

TEST(SampleTranslations, UniformOverConfigurations)
{
  // N = 2L + 3, p = 1: three admissible positions.
  const MeasurementSpec spec{11, 4, 1, 0.0, 1};
  Rng rng(7);
  std::vector<int> counts(3, 0);
  const int draws = 30000;
  for (int i = 0; i < draws; ++i)
    ++counts[sample_translations(spec, rng)[0] - 5];
  for (int c : counts)
    EXPECT_NEAR(c / static_cast<double>(draws), 1.0 / 3.0, 0.015);
}

TEST(Synthesize, NoiselessSingleCopy)
{
  const Vector x = (Vector(4) << 0.1, 0.5, -0.2, 0.9).finished();
  const MeasurementSpec spec{40, 4, 1, 0.0, 17};
  const Measurement m = synthesize(x, spec);
  const auto t = static_cast<long>(m.translations[0]);
  EXPECT_EQ(m.y.segment(t, 4), x);
  EXPECT_TRUE(m.y.head(t).isZero(0.0));
  EXPECT_TRUE(m.y.tail(40 - t - 4).isZero(0.0));
}

TEST(Synthesize, NoiselessMassConservation)
{
  Rng rng(8);
  const Vector x = random_unit_signal(6, rng);
  const MeasurementSpec spec{1000, 6, 30, 0.0, 3};
  const Measurement m = synthesize(x, spec);
  EXPECT_NEAR(m.y.sum(), 30 * x.sum(), 1e-12);
}

TEST(Synthesize, NoiselessCopiesMatchTranslations)
{
  Rng rng(18);
  const Vector x = random_unit_signal(5, rng);
  const MeasurementSpec spec{500, 5, 20, 0.0, 4};
  const Measurement m = synthesize(x, spec);
  Vector rebuilt = Vector::Zero(500);
  for (auto t : m.translations)
    rebuilt.segment(static_cast<long>(t), 5) = x;
  EXPECT_EQ(m.y, rebuilt);
}

TEST(Synthesize, SeedDeterminism)
{
  Rng rng(1);
  const Vector x = random_unit_signal(8, rng);
  const MeasurementSpec spec{5000, 8, 100, 0.3, 99};
  const Measurement a = synthesize(x, spec);
  const Measurement b = synthesize(x, spec);
  EXPECT_EQ(a.translations, b.translations);
  EXPECT_EQ(a.y, b.y);
  std::ostringstream sa, sb;
  write_measurement(sa, a);
  write_measurement(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  const Measurement c = synthesize(x, MeasurementSpec{5000, 8, 100, 0.3, 100});
  EXPECT_NE(a.y, c.y);
}

TEST(Synthesize, NoiseVariance)
{
  const MeasurementSpec spec{200000, 4, 1, 0.49, 5};
  const Vector x = Vector::Zero(4);
  const Measurement m = synthesize(x, spec);
  const double mean = m.y.mean();
  const double var = (m.y.array() - mean).square().sum() / static_cast<double>(m.y.size() - 1);
  EXPECT_NEAR(var, 0.49, 0.05 * 0.49);
  EXPECT_NEAR(mean, 0.0, 0.01);
}

TEST(Synthesize, LengthMismatch)
{
  EXPECT_THROW(synthesize(Vector::Zero(3), MeasurementSpec{100, 4, 1, 0.0, 1}), InvalidInput);
}

TEST(SigmaForSnr, Examples)
{
  Vector x = Vector::Zero(21);
  x[0] = 1.0;
  EXPECT_NEAR(sigma_for_snr(x, 21, 50.0), 1.0 / 1050.0, 1e-18);
  Vector y = Vector::Constant(8, 1.0 / std::sqrt(8.0));
  EXPECT_NEAR(sigma_for_snr(y, 8, 0.5), 0.25, 1e-15);
  EXPECT_EQ(sigma_for_snr(y, 8, std::numeric_limits<double>::infinity()), 0.0);
  EXPECT_LT(sigma_for_snr(y, 8, 1e12), 1e-12);
  EXPECT_THROW(sigma_for_snr(y, 8, 0.0), InvalidInput);
  EXPECT_THROW(sigma_for_snr(y, 8, -1.0), InvalidInput);
}

TEST(RandomUnitSignal, UnitNormNonNegative)
{
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vector x = random_unit_signal(11, rng);
    EXPECT_NEAR(x.norm(), 1.0, 1e-14);
    EXPECT_GE(x.minCoeff(), 0.0);
  }
}

TEST(MeasurementFile, RoundTrip)
{
  Rng rng(3);
  const Vector x = random_unit_signal(8, rng);
  const Measurement m = synthesize(x, MeasurementSpec{120, 8, 6, 0.25, 1});
  std::stringstream buf;
  write_measurement(buf, m);
  const std::string text = buf.str();
  EXPECT_NE(text.find("\n120,8,6,0.25,1,0.4\n"), std::string::npos);
  const Measurement back = read_measurement(buf);
  EXPECT_EQ(back.y, m.y);
  EXPECT_EQ(back.translations, m.translations);
  EXPECT_EQ(back.spec.N, 120u);
  EXPECT_EQ(back.spec.sigma2, 0.25);
}

TEST(MeasurementFile, Malformed)
{
  std::istringstream bad_magic("nope\n");
  EXPECT_THROW(read_measurement(bad_magic), InvalidInput);
  std::istringstream truncated("mtd-measurement 1\nN,L,p,sigma2,seed,gamma\n20,4,1,0,1,0.2\nsamples\n1\n");
  EXPECT_THROW(read_measurement(truncated), InvalidInput);
  std::istringstream garbage("mtd-measurement 1\nN,L,p,sigma2,seed,gamma\n10,4,1,0,1,0.4\nsamples\n"
                             "1\n2\n3\nx\n5\n6\n7\n8\n9\n10\ntranslations\n5\n");
  EXPECT_THROW(read_measurement(garbage), InvalidInput);
}
