#ifndef MTD_MODEL_HPP
#define MTD_MODEL_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mtd/common.hpp"

namespace mtd {

/// Unknowns of the estimation problem: the signal and its density.
struct Params {
  Vector x;
  double gamma = 0.0;

  std::size_t length() const { return static_cast<std::size_t>(x.size()); }

  /// Packs [x; gamma] into one vector of size L + 1.
  Vector packed() const
  {
    Vector theta(x.size() + 1);
    theta.head(x.size()) = x;
    theta[x.size()] = gamma;
    return theta;
  }

  static Params unpack(const Eigen::Ref<const Vector>& theta)
  {
    require(theta.size() >= 2, "Params::unpack: need at least one signal sample plus gamma");
    return Params{theta.head(theta.size() - 1), theta[theta.size() - 1]};
  }

  bool finite() const { return x.allFinite() && std::isfinite(gamma); }
};

struct NoiseModel {
  double sigma2 = 0.0;

  NoiseModel() = default;
  explicit NoiseModel(double s2) : sigma2(s2)
  {
    require(std::isfinite(s2) && s2 >= 0.0, "NoiseModel: sigma2 must be finite and >= 0");
  }
};

/// Canonical flattening of the first three autocorrelations.
///
/// Index 0 holds the first order term, 1..L the second order terms by
/// shift, and the rest the third order pairs (l1, l2) with l1 <= l2 in
/// lexicographic order. Mirror entries (l2, l1) are not stored; the
/// multiplicity of each stored entry records how many cells of the full
/// L x L grid it stands for.
class MomentLayout {
public:
  MomentLayout() = default;

  explicit MomentLayout(std::size_t L) : L_(L)
  {
    require(L >= 1, "MomentLayout: L must be >= 1");
  }

  std::size_t signal_length() const { return L_; }
  std::size_t dim() const { return 1 + L_ + L_ * (L_ + 1) / 2; }
  std::size_t third_order_offset() const { return 1 + L_; }
  std::size_t third_order_count() const { return L_ * (L_ + 1) / 2; }

  static constexpr std::size_t first_order_index() { return 0; }
  std::size_t second_order_index(std::size_t shift) const { return 1 + shift; }

  /// Index of the third-order entry for the unordered pair {l1, l2}.
  std::size_t pair_index(std::size_t l1, std::size_t l2) const
  {
    if (l1 > l2)
      std::swap(l1, l2);
    const std::size_t row_start = l1 * L_ - (l1 == 0 ? 0 : l1 * (l1 - 1) / 2);
    return third_order_offset() + row_start + (l2 - l1);
  }

  /// Inverse of pair_index over the third-order block.
  std::pair<std::size_t, std::size_t> pair_at(std::size_t index) const
  {
    require(index >= third_order_offset() && index < dim(), "MomentLayout::pair_at: not a third-order index");
    std::size_t rel = index - third_order_offset();
    std::size_t l1 = 0;
    while (rel >= L_ - l1) {
      rel -= L_ - l1;
      ++l1;
    }
    return {l1, l1 + rel};
  }

  /// Number of full-grid cells represented by each stored entry.
  Vector multiplicity() const
  {
    Vector m = Vector::Ones(static_cast<Eigen::Index>(dim()));
    for (std::size_t l1 = 0; l1 < L_; ++l1)
      for (std::size_t l2 = l1 + 1; l2 < L_; ++l2)
        m[static_cast<Eigen::Index>(pair_index(l1, l2))] = 2.0;
    return m;
  }

  bool operator==(const MomentLayout& other) const { return L_ == other.L_; }

private:
  std::size_t L_ = 1;
};

struct MomentVector {
  MomentLayout layout;
  Vector values;

  MomentVector() = default;
  MomentVector(MomentLayout lay, Vector v) : layout(lay), values(std::move(v))
  {
    require(static_cast<std::size_t>(values.size()) == layout.dim(), "MomentVector: size does not match layout");
  }

  static MomentVector zeros(std::size_t L)
  {
    MomentLayout lay(L);
    return MomentVector(lay, Vector::Zero(static_cast<Eigen::Index>(lay.dim())));
  }

  double first() const { return values[0]; }
  double second(std::size_t shift) const { return values[static_cast<Eigen::Index>(layout.second_order_index(shift))]; }
  double third(std::size_t l1, std::size_t l2) const
  {
    return values[static_cast<Eigen::Index>(layout.pair_index(l1, l2))];
  }

  /// Full symmetric L x L third-order grid.
  Matrix third_order_grid() const
  {
    const auto L = layout.signal_length();
    Matrix grid(L, L);
    for (std::size_t l1 = 0; l1 < L; ++l1)
      for (std::size_t l2 = l1; l2 < L; ++l2) {
        const double v = third(l1, l2);
        grid(static_cast<Eigen::Index>(l1), static_cast<Eigen::Index>(l2)) = v;
        grid(static_cast<Eigen::Index>(l2), static_cast<Eigen::Index>(l1)) = v;
      }
    return grid;
  }

  /// Builds a vector from unflattened parts. Only the upper triangle of
  /// `a3` is read.
  static MomentVector from_parts(double a1, const Vector& a2, const Matrix& a3)
  {
    const auto L = static_cast<std::size_t>(a2.size());
    require(L >= 1 && a3.rows() == a2.size() && a3.cols() == a2.size(), "MomentVector::from_parts: shape mismatch");
    MomentLayout lay(L);
    Vector v(static_cast<Eigen::Index>(lay.dim()));
    v[0] = a1;
    v.segment(1, a2.size()) = a2;
    for (std::size_t l1 = 0; l1 < L; ++l1)
      for (std::size_t l2 = l1; l2 < L; ++l2)
        v[static_cast<Eigen::Index>(lay.pair_index(l1, l2))] =
            a3(static_cast<Eigen::Index>(l1), static_cast<Eigen::Index>(l2));
    return MomentVector(lay, std::move(v));
  }
};

/// First three autocorrelations of a finite signal, 1/L normalized and
/// zero padded. `a3` is filled symmetrically.
struct SignalAutocorrelations {
  double a1 = 0.0;
  Vector a2;
  Matrix a3;
};

inline SignalAutocorrelations signal_autocorrelations(const Eigen::Ref<const Vector>& x)
{
  require(x.size() >= 1, "signal_autocorrelations: empty signal");
  const Eigen::Index L = x.size();
  const double inv = 1.0 / static_cast<double>(L);

  SignalAutocorrelations ac;
  ac.a1 = x.sum() * inv;
  ac.a2 = Vector::Zero(L);
  ac.a3 = Matrix::Zero(L, L);
  for (Eigen::Index l1 = 0; l1 < L; ++l1) {
    ac.a2[l1] = x.head(L - l1).dot(x.tail(L - l1)) * inv;
    for (Eigen::Index l2 = l1; l2 < L; ++l2) {
      double s = 0.0;
      for (Eigen::Index k = 0; k + l2 < L; ++k)
        s += x[k] * x[k + l1] * x[k + l2];
      ac.a3(l1, l2) = ac.a3(l2, l1) = s * inv;
    }
  }
  return ac;
}

/// Third-order noise bias: B[l1,l2] = sigma2 * (d[l1] + d[l2] + d[l1-l2]).
inline Matrix bias_matrix(double sigma2, std::size_t L)
{
  require(L >= 1, "bias_matrix: L must be >= 1");
  require(sigma2 >= 0.0, "bias_matrix: sigma2 must be >= 0");
  const auto n = static_cast<Eigen::Index>(L);
  Matrix B = Matrix::Zero(n, n);
  for (Eigen::Index l1 = 0; l1 < n; ++l1)
    for (Eigen::Index l2 = 0; l2 < n; ++l2)
      B(l1, l2) = sigma2 * ((l1 == 0) + (l2 == 0) + (l1 == l2));
  return B;
}

/// Population moments of the measurement implied by (x, gamma) and the
/// noise level, in canonical layout.
inline MomentVector model_moments(const Params& theta, const NoiseModel& noise)
{
  const auto L = theta.length();
  require(L >= 1, "model_moments: empty signal");
  const auto ac = signal_autocorrelations(theta.x);
  const MomentLayout lay(L);
  Vector m(static_cast<Eigen::Index>(lay.dim()));

  m[0] = theta.gamma * ac.a1;
  for (std::size_t l = 0; l < L; ++l)
    m[static_cast<Eigen::Index>(1 + l)] =
        theta.gamma * ac.a2[static_cast<Eigen::Index>(l)] + (l == 0 ? noise.sigma2 : 0.0);
  for (std::size_t l1 = 0; l1 < L; ++l1)
    for (std::size_t l2 = l1; l2 < L; ++l2) {
      const double bias = noise.sigma2 * ((l1 == 0) + (l2 == 0) + (l1 == l2));
      m[static_cast<Eigen::Index>(lay.pair_index(l1, l2))] =
          theta.gamma * (ac.a3(static_cast<Eigen::Index>(l1), static_cast<Eigen::Index>(l2)) + ac.a1 * bias);
    }
  return MomentVector(lay, std::move(m));
}

/// Analytic Jacobian of model_moments with respect to [x; gamma], shape
/// dim x (L + 1).
inline Matrix model_jacobian(const Params& theta, const NoiseModel& noise)
{
  const auto L = static_cast<Eigen::Index>(theta.length());
  require(L >= 1, "model_jacobian: empty signal");
  const MomentLayout lay(static_cast<std::size_t>(L));
  const double inv = 1.0 / static_cast<double>(L);
  const double g = theta.gamma;
  const Vector& x = theta.x;
  const auto ac = signal_autocorrelations(x);

  Matrix J = Matrix::Zero(static_cast<Eigen::Index>(lay.dim()), L + 1);

  // First order.
  J.row(0).head(L).setConstant(g * inv);
  J(0, L) = ac.a1;

  // Second order: d/dx[m] sum_k x[k] x[k+l] = x[m+l] + x[m-l].
  for (Eigen::Index l = 0; l < L; ++l) {
    const Eigen::Index row = 1 + l;
    for (Eigen::Index k = 0; k + l < L; ++k) {
      J(row, k) += g * inv * x[k + l];
      J(row, k + l) += g * inv * x[k];
    }
    J(row, L) = ac.a2[l];
  }

  // Third order, plus the bias coupling through A1.
  for (Eigen::Index l1 = 0; l1 < L; ++l1)
    for (Eigen::Index l2 = l1; l2 < L; ++l2) {
      const auto row = static_cast<Eigen::Index>(lay.pair_index(static_cast<std::size_t>(l1), static_cast<std::size_t>(l2)));
      for (Eigen::Index k = 0; k + l2 < L; ++k) {
        J(row, k) += g * inv * x[k + l1] * x[k + l2];
        J(row, k + l1) += g * inv * x[k] * x[k + l2];
        J(row, k + l2) += g * inv * x[k] * x[k + l1];
      }
      const double bias = noise.sigma2 * ((l1 == 0) + (l2 == 0) + (l1 == l2));
      if (bias != 0.0)
        J.row(row).head(L).array() += g * inv * bias;
      J(row, L) = ac.a3(l1, l2) + ac.a1 * bias;
    }
  return J;
}

} // namespace mtd

#endif // MTD_MODEL_HPP
