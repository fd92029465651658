#ifndef MTD_SIMULATE_HPP
#define MTD_SIMULATE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mtd/common.hpp"

namespace mtd {

/// Parameters of one synthetic measurement.
struct MeasurementSpec {
  std::size_t N = 0;
  std::size_t L = 0;
  std::size_t p = 0;
  double sigma2 = 0.0;
  std::uint64_t seed = 0;

  double gamma() const { return static_cast<double>(p * L) / static_cast<double>(N); }

  /// Free positions left after the mandatory 2L-1 spacing; negative when
  /// no well-separated placement exists.
  std::int64_t slack_budget() const
  {
    const auto n = static_cast<std::int64_t>(N);
    const auto l = static_cast<std::int64_t>(L);
    const auto count = static_cast<std::int64_t>(p);
    return (n - 2 * l - 1) - (count - 1) * (2 * l - 1);
  }

  void validate() const
  {
    require(L >= 1, "MeasurementSpec: L must be >= 1");
    require(p >= 1, "MeasurementSpec: p must be >= 1");
    require(N >= 2 * L + 1, "MeasurementSpec: N must leave room for one translation in [L+1, N-L]");
    require(std::isfinite(sigma2) && sigma2 >= 0.0, "MeasurementSpec: sigma2 must be finite and >= 0");
    require(slack_budget() >= 0, "MeasurementSpec: no well-separated placement of p copies exists");
  }

  /// p = round(gamma_target * N / L).
  static MeasurementSpec from_density(std::size_t N, std::size_t L, double gamma_target, double sigma2,
                                      std::uint64_t seed)
  {
    require(L >= 1 && N >= 1, "MeasurementSpec::from_density: N and L must be positive");
    require(gamma_target > 0.0, "MeasurementSpec::from_density: gamma must be positive");
    const auto p = static_cast<std::size_t>(std::llround(gamma_target * static_cast<double>(N) / static_cast<double>(L)));
    return MeasurementSpec{N, L, std::max<std::size_t>(p, 1), sigma2, seed};
  }
};

struct Measurement {
  Vector y;
  std::vector<std::size_t> translations;
  MeasurementSpec spec;
};

/// Draws p sorted, well-separated start positions in [L+1, N-L],
/// uniformly over all admissible configurations.
///
/// Stars and bars: a uniform p-subset of {0, ..., budget + p - 1} encodes
/// the p + 1 slack gaps; each gap is then padded with the 2L-1 minimum
/// spacing.
inline std::vector<std::size_t> sample_translations(const MeasurementSpec& spec, Rng& rng)
{
  spec.validate();
  const auto budget = static_cast<std::size_t>(spec.slack_budget());
  const std::size_t slots = budget + spec.p;

  // Floyd's subset sampling.
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(spec.p * 2);
  for (std::size_t j = slots - spec.p; j < slots; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    if (!chosen.insert(t).second)
      chosen.insert(j);
  }
  std::vector<std::size_t> picks(chosen.begin(), chosen.end());
  std::sort(picks.begin(), picks.end());

  std::vector<std::size_t> positions(spec.p);
  for (std::size_t i = 0; i < spec.p; ++i)
    positions[i] = (spec.L + 1) + (picks[i] - i) + i * (2 * spec.L - 1);
  return positions;
}

/// y = sum of shifted copies of x plus i.i.d. N(0, sigma2) noise.
/// Translations are drawn first, then the noise, from the same stream.
inline Measurement synthesize(const Eigen::Ref<const Vector>& x, const MeasurementSpec& spec, Rng& rng)
{
  require(static_cast<std::size_t>(x.size()) == spec.L, "synthesize: signal length does not match spec.L");
  Measurement m;
  m.spec = spec;
  m.translations = sample_translations(spec, rng);
  m.y = Vector::Zero(static_cast<Eigen::Index>(spec.N));
  const auto L = static_cast<Eigen::Index>(spec.L);
  for (auto t : m.translations)
    m.y.segment(static_cast<Eigen::Index>(t), L) += x;
  if (spec.sigma2 > 0.0) {
    std::normal_distribution<double> noise(0.0, std::sqrt(spec.sigma2));
    for (Eigen::Index i = 0; i < m.y.size(); ++i)
      m.y[i] += noise(rng);
  }
  return m;
}

inline Measurement synthesize(const Eigen::Ref<const Vector>& x, const MeasurementSpec& spec)
{
  Rng rng(spec.seed);
  return synthesize(x, spec, rng);
}

/// sigma2 = ||x||^2 / (L * snr).
inline double sigma_for_snr(const Eigen::Ref<const Vector>& x, std::size_t L, double snr)
{
  require(snr > 0.0, "sigma_for_snr: snr must be positive");
  require(L >= 1, "sigma_for_snr: L must be >= 1");
  if (std::isinf(snr))
    return 0.0;
  return x.squaredNorm() / (static_cast<double>(L) * snr);
}

/// Entries i.i.d. uniform on [0, 1], then scaled to unit Euclidean norm.
inline Vector random_unit_signal(std::size_t L, Rng& rng)
{
  require(L >= 1, "random_unit_signal: L must be >= 1");
  Vector x(static_cast<Eigen::Index>(L));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    x[i] = uniform01(rng);
  const double n = x.norm();
  if (n > 0.0)
    x /= n;
  return x;
}

// Measurement text format:
//
//   mtd-measurement 1
//   N,L,p,sigma2,seed,gamma
//   <N>,<L>,<p>,<sigma2>,<seed>,<gamma>
//   samples
//   <N lines>
//   translations
//   <p lines>

inline void write_measurement(std::ostream& out, const Measurement& m)
{
  std::ostringstream buf;
  buf << "mtd-measurement 1\n";
  buf << "N,L,p,sigma2,seed,gamma\n";
  buf << m.spec.N << ',' << m.spec.L << ',' << m.spec.p << ',' << format_double(m.spec.sigma2) << ','
      << m.spec.seed << ',' << format_double(m.spec.gamma()) << '\n';
  buf << "samples\n";
  for (Eigen::Index i = 0; i < m.y.size(); ++i)
    buf << format_double(m.y[i]) << '\n';
  buf << "translations\n";
  for (auto t : m.translations)
    buf << t << '\n';
  out << buf.str();
}

inline Measurement read_measurement(std::istream& in)
{
  std::string line;
  auto next = [&](const char* what) {
    require(static_cast<bool>(std::getline(in, line)), std::string("read_measurement: unexpected end of input at ") + what);
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
  };

  next("magic");
  require(line == "mtd-measurement 1", "read_measurement: not a measurement file");
  next("header");
  require(line == "N,L,p,sigma2,seed,gamma", "read_measurement: unexpected header columns");
  next("header values");

  Measurement m;
  {
    std::istringstream row(line);
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    row >> m.spec.N >> c1 >> m.spec.L >> c2 >> m.spec.p >> c3 >> m.spec.sigma2 >> c4 >> m.spec.seed;
    require(!row.fail() && c1 == ',' && c2 == ',' && c3 == ',' && c4 == ',', "read_measurement: malformed header values");
  }
  m.spec.validate();

  next("samples marker");
  require(line == "samples", "read_measurement: expected 'samples'");
  m.y.resize(static_cast<Eigen::Index>(m.spec.N));
  for (Eigen::Index i = 0; i < m.y.size(); ++i) {
    next("sample");
    m.y[i] = parse_number(line);
  }
  next("translations marker");
  require(line == "translations", "read_measurement: expected 'translations'");
  m.translations.resize(m.spec.p);
  for (auto& t : m.translations) {
    next("translation");
    try {
      t = static_cast<std::size_t>(std::stoull(line));
    } catch (const std::exception&) {
      throw InvalidInput("read_measurement: malformed translation '" + line + "'");
    }
  }
  return m;
}

} // namespace mtd

#endif // MTD_SIMULATE_HPP
