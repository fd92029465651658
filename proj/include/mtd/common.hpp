#ifndef MTD_COMMON_HPP
#define MTD_COMMON_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace mtd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for arguments that violate a documented precondition.
class InvalidInput : public std::invalid_argument {
public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

inline void require(bool condition, const std::string& message)
{
  if (!condition)
    throw InvalidInput(message);
}

/// SplitMix64 finalizer. Used to derive independent stream seeds from a
/// master seed, e.g. one stream per Monte-Carlo trial or per start.
inline std::uint64_t mix_seed(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

/// Uniform [0, 1) double from the top 53 bits; independent of the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v)
{
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Parses a complete decimal number; throws InvalidInput otherwise.
inline double parse_number(std::string_view text)
{
  if (text == "nan")
    return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf")
    return std::numeric_limits<double>::infinity();
  if (text == "-inf")
    return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* first = text.data();
  if (!text.empty() && text.front() == '+')
    ++first;
  const auto res = std::from_chars(first, text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw InvalidInput("malformed number '" + std::string(text) + "'");
  return v;
}

} // namespace mtd

#endif // MTD_COMMON_HPP
