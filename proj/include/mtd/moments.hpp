#ifndef MTD_MOMENTS_HPP
#define MTD_MOMENTS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "mtd/common.hpp"
#include "mtd/model.hpp"

namespace mtd {

/// How a per-window moment observation reads the measurement.
///
/// Extended: anchor i averages products starting at i .. i+L-1 and may
/// read up to y[i + 2L - 2], so every shift sees L full products and the
/// window mean is an unbiased estimate of the measurement moments.
///
/// Truncated: the literal length-L window y[i .. i+L-1], zero padded
/// inside the window. Shift l then only sees L - l products, which biases
/// the window mean by (L - l) / L. Kept for comparison.
enum class WindowConvention { Extended, Truncated };

inline const char* to_string(WindowConvention c)
{
  return c == WindowConvention::Extended ? "extended" : "truncated";
}

struct EmpiricalMoments {
  MomentVector vector;
  /// Number of terms each average was divided by (N for the full-sum
  /// moments, the window count for window means).
  std::size_t normalization = 0;
};

/// Measurement autocorrelations with 1/N normalization and zero padding.
inline EmpiricalMoments empirical_moments(const Eigen::Ref<const Vector>& y, std::size_t L)
{
  require(L >= 1, "empirical_moments: L must be >= 1");
  const auto N = static_cast<Eigen::Index>(y.size());
  require(static_cast<std::size_t>(N) >= 2 * L, "empirical_moments: need N >= 2L");
  const MomentLayout lay(L);
  const auto n = static_cast<Eigen::Index>(L);
  const double inv = 1.0 / static_cast<double>(N);

  Vector v(static_cast<Eigen::Index>(lay.dim()));
  v[0] = y.sum() * inv;
  Vector prod(N);
  for (Eigen::Index l1 = 0; l1 < n; ++l1) {
    const Eigen::Index len1 = N - l1;
    prod.head(len1) = y.head(len1).cwiseProduct(y.tail(len1));
    v[1 + l1] = prod.head(len1).sum() * inv;
    for (Eigen::Index l2 = l1; l2 < n; ++l2) {
      const Eigen::Index len2 = N - l2;
      v[static_cast<Eigen::Index>(lay.pair_index(static_cast<std::size_t>(l1), static_cast<std::size_t>(l2)))] =
          prod.head(len2).dot(y.segment(l2, len2)) * inv;
    }
  }
  return EmpiricalMoments{MomentVector(lay, std::move(v)), static_cast<std::size_t>(N)};
}

/// Number of valid window anchors for a measurement of length N.
inline std::size_t window_anchor_count(std::size_t N, std::size_t L, WindowConvention convention)
{
  const std::size_t extent = convention == WindowConvention::Extended ? 2 * L - 1 : L;
  return N >= extent ? N - extent + 1 : 0;
}

namespace detail {

// Writes the moment observation of the window anchored at `i` into `out`.
inline void window_moments_into(const Eigen::Ref<const Vector>& y, std::size_t i, std::size_t L,
                                WindowConvention convention, const MomentLayout& lay, Eigen::Ref<Vector> out)
{
  const auto n = static_cast<Eigen::Index>(L);
  const double inv = 1.0 / static_cast<double>(L);
  const auto anchor = static_cast<Eigen::Index>(i);

  if (convention == WindowConvention::Extended) {
    const auto w = y.segment(anchor, 2 * n - 1);
    const auto head = w.head(n);
    out[0] = head.sum() * inv;
    Eigen::Matrix<double, Eigen::Dynamic, 1> prod(n);
    for (Eigen::Index l1 = 0; l1 < n; ++l1) {
      prod = head.cwiseProduct(w.segment(l1, n));
      out[1 + l1] = prod.sum() * inv;
      for (Eigen::Index l2 = l1; l2 < n; ++l2)
        out[static_cast<Eigen::Index>(lay.pair_index(static_cast<std::size_t>(l1), static_cast<std::size_t>(l2)))] =
            prod.dot(w.segment(l2, n)) * inv;
    }
    return;
  }

  const auto w = y.segment(anchor, n);
  out[0] = w.sum() * inv;
  for (Eigen::Index l1 = 0; l1 < n; ++l1) {
    const Eigen::Index len1 = n - l1;
    out[1 + l1] = w.head(len1).dot(w.tail(len1)) * inv;
    for (Eigen::Index l2 = l1; l2 < n; ++l2) {
      double s = 0.0;
      for (Eigen::Index k = 0; k + l2 < n; ++k)
        s += w[k] * w[k + l1] * w[k + l2];
      out[static_cast<Eigen::Index>(lay.pair_index(static_cast<std::size_t>(l1), static_cast<std::size_t>(l2)))] =
          s * inv;
    }
  }
}

} // namespace detail

/// Moment observation a_i of the window anchored at i.
inline MomentVector window_moment_vector(const Eigen::Ref<const Vector>& y, std::size_t i, std::size_t L,
                                         WindowConvention convention = WindowConvention::Extended)
{
  require(L >= 1, "window_moment_vector: L must be >= 1");
  const std::size_t anchors = window_anchor_count(static_cast<std::size_t>(y.size()), L, convention);
  require(i < anchors, "window_moment_vector: anchor out of range");
  const MomentLayout lay(L);
  Vector v(static_cast<Eigen::Index>(lay.dim()));
  detail::window_moments_into(y, i, L, convention, lay, v);
  return MomentVector(lay, std::move(v));
}

/// Mean of the window observations over every valid anchor; the data
/// term of the sample moment function.
inline EmpiricalMoments window_mean_moments(const Eigen::Ref<const Vector>& y, std::size_t L,
                                            WindowConvention convention = WindowConvention::Extended)
{
  require(L >= 1, "window_mean_moments: L must be >= 1");
  const auto N = static_cast<std::size_t>(y.size());
  require(N >= 2 * L, "window_mean_moments: need N >= 2L");
  const std::size_t anchors = window_anchor_count(N, L, convention);
  const MomentLayout lay(L);

  if (convention == WindowConvention::Truncated) {
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(lay.dim()));
    Vector a(static_cast<Eigen::Index>(lay.dim()));
    for (std::size_t i = 0; i < anchors; ++i) {
      detail::window_moments_into(y, i, L, convention, lay, a);
      sum += a;
    }
    return EmpiricalMoments{MomentVector(lay, sum / static_cast<double>(anchors)), anchors};
  }

  // Each product starting at position k is counted by every (anchor, j)
  // with anchor + j = k, so the mean is a weighted full sum.
  const auto last = static_cast<Eigen::Index>(anchors + L - 1);
  Vector weight(last);
  for (Eigen::Index k = 0; k < last; ++k) {
    const auto lo = std::max<Eigen::Index>(0, k - static_cast<Eigen::Index>(anchors) + 1);
    const auto hi = std::min<Eigen::Index>(k, static_cast<Eigen::Index>(L) - 1);
    weight[k] = static_cast<double>(hi - lo + 1);
  }
  const double inv = 1.0 / (static_cast<double>(L) * static_cast<double>(anchors));
  const auto n = static_cast<Eigen::Index>(L);

  Vector v(static_cast<Eigen::Index>(lay.dim()));
  const Vector wy = weight.cwiseProduct(y.head(last));
  v[0] = wy.sum() * inv;
  Vector prod(last);
  for (Eigen::Index l1 = 0; l1 < n; ++l1) {
    prod = wy.cwiseProduct(y.segment(l1, last));
    v[1 + l1] = prod.sum() * inv;
    for (Eigen::Index l2 = l1; l2 < n; ++l2)
      v[static_cast<Eigen::Index>(lay.pair_index(static_cast<std::size_t>(l1), static_cast<std::size_t>(l2)))] =
          prod.dot(y.segment(l2, last)) * inv;
  }
  return EmpiricalMoments{MomentVector(lay, std::move(v)), anchors};
}

/// Streaming mean / co-moment accumulator over d-dimensional samples.
/// Batches are folded in with the pairwise (Chan et al.) update, so two
/// accumulators over disjoint data merge exactly like one pass would.
/// Only the lower triangle of the co-moment is maintained.
class CovarianceAccumulator {
public:
  explicit CovarianceAccumulator(std::size_t dim)
      : mean_(Vector::Zero(static_cast<Eigen::Index>(dim))),
        comoment_(Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)))
  {
  }

  std::size_t count() const { return count_; }
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const Vector& mean() const { return mean_; }

  /// Adds the columns of `batch` as samples.
  void add_batch(const Eigen::Ref<const Matrix>& batch)
  {
    require(batch.rows() == mean_.size(), "CovarianceAccumulator: batch dimension mismatch");
    const auto nb = static_cast<std::size_t>(batch.cols());
    if (nb == 0)
      return;
    const Vector batch_mean = batch.rowwise().mean();
    const Matrix centered = batch.colwise() - batch_mean;
    Matrix batch_comoment = Matrix::Zero(mean_.size(), mean_.size());
    batch_comoment.selfadjointView<Eigen::Lower>().rankUpdate(centered);
    fold(nb, batch_mean, batch_comoment);
  }

  void merge(const CovarianceAccumulator& other)
  {
    require(other.dim() == dim(), "CovarianceAccumulator: merge dimension mismatch");
    if (other.count_ == 0)
      return;
    fold(other.count_, other.mean_, other.comoment_);
  }

  /// Unbiased sample covariance (divisor count - 1), full symmetric.
  Matrix covariance() const
  {
    require(count_ >= 2, "CovarianceAccumulator: need at least two samples");
    Matrix S = comoment_.selfadjointView<Eigen::Lower>();
    return S / static_cast<double>(count_ - 1);
  }

private:
  void fold(std::size_t nb, const Vector& batch_mean, const Matrix& batch_comoment)
  {
    if (count_ == 0) {
      count_ = nb;
      mean_ = batch_mean;
      comoment_.triangularView<Eigen::Lower>() = batch_comoment;
      return;
    }
    const double na = static_cast<double>(count_);
    const double nbd = static_cast<double>(nb);
    const double n = na + nbd;
    const Vector delta = batch_mean - mean_;
    comoment_.triangularView<Eigen::Lower>() += batch_comoment;
    comoment_.selfadjointView<Eigen::Lower>().rankUpdate(delta, na * nbd / n);
    mean_ += delta * (nbd / n);
    count_ += nb;
  }

  std::size_t count_ = 0;
  Vector mean_;
  Matrix comoment_;
};

struct CovarianceEstimate {
  Matrix S;
  /// Mean of the window observations that entered S.
  Vector mean;
  std::size_t window_count = 0;
  std::size_t stride = 1;
  double regularization = 0.0;
  std::size_t L = 0;
  WindowConvention convention = WindowConvention::Extended;
};

struct CovarianceOptions {
  std::size_t stride = 1;
  WindowConvention convention = WindowConvention::Extended;
  /// 1 = strictly sequential (bit-reproducible); >1 splits the anchors
  /// into contiguous chunks whose accumulators are merged in order.
  std::size_t workers = 1;
  std::size_t batch_size = 256;
};

/// Accumulates the window observations at anchors first, first+stride,
/// ... below `end`.
inline void accumulate_windows(const Eigen::Ref<const Vector>& y, std::size_t L, std::size_t first, std::size_t end,
                               std::size_t stride, WindowConvention convention, std::size_t batch_size,
                               CovarianceAccumulator& acc)
{
  const MomentLayout lay(L);
  const auto d = static_cast<Eigen::Index>(lay.dim());
  Matrix batch(d, static_cast<Eigen::Index>(std::max<std::size_t>(batch_size, 1)));
  Eigen::Index filled = 0;
  for (std::size_t i = first; i < end; i += stride) {
    detail::window_moments_into(y, i, L, convention, lay, batch.col(filled));
    if (++filled == batch.cols()) {
      acc.add_batch(batch);
      filled = 0;
    }
  }
  if (filled > 0)
    acc.add_batch(batch.leftCols(filled));
}

/// Sample covariance of the window observations {a_i}.
inline CovarianceEstimate estimate_covariance(const Eigen::Ref<const Vector>& y, std::size_t L,
                                              const CovarianceOptions& opts = {})
{
  require(L >= 1, "estimate_covariance: L must be >= 1");
  require(opts.stride >= 1, "estimate_covariance: stride must be positive");
  const MomentLayout lay(L);
  const std::size_t anchors = window_anchor_count(static_cast<std::size_t>(y.size()), L, opts.convention);
  const std::size_t windows = anchors == 0 ? 0 : (anchors - 1) / opts.stride + 1;
  require(windows >= lay.dim() + 1, "estimate_covariance: too few windows (" + std::to_string(windows) +
                                        ") for moment dimension " + std::to_string(lay.dim()));

  CovarianceAccumulator total(lay.dim());
  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, windows);
  if (workers == 1) {
    accumulate_windows(y, L, 0, anchors, opts.stride, opts.convention, opts.batch_size, total);
  } else {
    std::vector<CovarianceAccumulator> parts(workers, CovarianceAccumulator(lay.dim()));
    std::vector<std::thread> threads;
    const std::size_t per = (windows + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t first = std::min(w * per, windows) * opts.stride;
      const std::size_t end = std::min(std::min((w + 1) * per, windows) * opts.stride, anchors);
      threads.emplace_back([&, w, first, end] {
        accumulate_windows(y, L, first, end, opts.stride, opts.convention, opts.batch_size, parts[w]);
      });
    }
    for (auto& t : threads)
      t.join();
    for (const auto& part : parts)
      total.merge(part);
  }

  CovarianceEstimate est;
  est.S = total.covariance();
  est.mean = total.mean();
  est.window_count = total.count();
  est.stride = opts.stride;
  est.L = L;
  est.convention = opts.convention;
  return est;
}

enum class WeightSource { IdentityScaled, InverseCovariance };

struct WeightMatrix {
  Matrix W;
  WeightSource source = WeightSource::InverseCovariance;
  /// Eigenvalue floor applied to S before inversion; 0 when no
  /// eigenvalue needed clipping.
  double regularization = 0.0;
  /// Condition number of the floored S (equivalently of W).
  double condition_number = 1.0;
};

/// W = S^-1 with the eigenvalues of S floored at 1e-10 * lambda_max.
inline WeightMatrix weight_matrix(const Eigen::Ref<const Matrix>& S, double relative_floor = 1e-10)
{
  require(S.rows() == S.cols() && S.rows() > 0, "weight_matrix: S must be square and non-empty");
  require(S.allFinite(), "weight_matrix: S has non-finite entries");
  const Matrix sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  require(eig.info() == Eigen::Success, "weight_matrix: eigendecomposition failed");
  const Vector& lambda = eig.eigenvalues();
  const double lmax = lambda.maxCoeff();
  require(lmax > 0.0, "weight_matrix: covariance is identically zero");

  const double floor = lmax * relative_floor;
  const Vector clipped = lambda.cwiseMax(floor);

  WeightMatrix w;
  w.W = eig.eigenvectors() * clipped.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  w.W = 0.5 * (w.W + w.W.transpose());
  w.source = WeightSource::InverseCovariance;
  w.regularization = lambda.minCoeff() < floor ? floor : 0.0;
  w.condition_number = clipped.maxCoeff() / clipped.minCoeff();
  return w;
}

inline WeightMatrix weight_matrix(const CovarianceEstimate& cov, double relative_floor = 1e-10)
{
  return weight_matrix(cov.S, relative_floor);
}

/// Diagonal weights that reproduce the least-squares objective:
/// 1 for the first order term, w2 per second-order term, w3 times the
/// multiplicity per stored third-order term.
inline WeightMatrix ls_weight_matrix(const MomentLayout& lay, double w2, double w3)
{
  require(w2 > 0.0 && w3 > 0.0, "ls_weight_matrix: weights must be positive");
  Vector diag = lay.multiplicity();
  diag.segment(1, static_cast<Eigen::Index>(lay.signal_length())).setConstant(w2);
  diag.tail(static_cast<Eigen::Index>(lay.third_order_count())) *= w3;
  WeightMatrix w;
  w.W = diag.asDiagonal();
  w.source = WeightSource::IdentityScaled;
  w.condition_number = diag.maxCoeff() / diag.minCoeff();
  return w;
}

// Dense matrix file: 8-byte magic "MTDMAT01", then little-endian uint64
// d, L, stride, then d*d row-major float64 values.

struct MatrixFile {
  Matrix matrix;
  std::size_t L = 0;
  std::size_t stride = 0;
};

namespace detail {

inline constexpr char kMatrixMagic[8] = {'M', 'T', 'D', 'M', 'A', 'T', '0', '1'};

inline void put_u64(std::ostream& out, std::uint64_t v)
{
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b)
    bytes[b] = static_cast<unsigned char>(v >> (8 * b));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline std::uint64_t get_u64(std::istream& in)
{
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  require(in.gcount() == 8, "read_matrix_file: truncated input");
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b)
    v = (v << 8) | bytes[b];
  return v;
}

inline void put_f64(std::ostream& out, double value)
{
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  put_u64(out, bits);
}

inline double get_f64(std::istream& in)
{
  const std::uint64_t bits = get_u64(in);
  double value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}

} // namespace detail

inline void write_matrix_file(std::ostream& out, const Eigen::Ref<const Matrix>& m, std::size_t L, std::size_t stride)
{
  require(m.rows() == m.cols(), "write_matrix_file: matrix must be square");
  out.write(detail::kMatrixMagic, sizeof detail::kMatrixMagic);
  detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
  detail::put_u64(out, L);
  detail::put_u64(out, stride);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      detail::put_f64(out, m(r, c));
}

inline MatrixFile read_matrix_file(std::istream& in)
{
  char magic[8];
  in.read(magic, sizeof magic);
  require(in.gcount() == 8 && std::memcmp(magic, detail::kMatrixMagic, 8) == 0, "read_matrix_file: bad magic");
  const auto d = detail::get_u64(in);
  MatrixFile f;
  f.L = static_cast<std::size_t>(detail::get_u64(in));
  f.stride = static_cast<std::size_t>(detail::get_u64(in));
  require(d > 0 && d < (1u << 16), "read_matrix_file: implausible dimension");
  require(MomentLayout(std::max<std::size_t>(f.L, 1)).dim() == d, "read_matrix_file: d does not match L");
  f.matrix.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < f.matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < f.matrix.cols(); ++c)
      f.matrix(r, c) = detail::get_f64(in);
  return f;
}

// Moment vectors as CSV: index,order,l1,l2,value.

inline void write_moments_csv(std::ostream& out, const EmpiricalMoments& em)
{
  const auto& lay = em.vector.layout;
  out << "# normalization=" << em.normalization << '\n';
  out << "index,order,l1,l2,value\n";
  out << "0,1,0,0," << format_double(em.vector.values[0]) << '\n';
  for (std::size_t l = 0; l < lay.signal_length(); ++l)
    out << lay.second_order_index(l) << ",2," << l << ",0," << format_double(em.vector.second(l)) << '\n';
  for (std::size_t idx = lay.third_order_offset(); idx < lay.dim(); ++idx) {
    const auto [l1, l2] = lay.pair_at(idx);
    out << idx << ",3," << l1 << ',' << l2 << ',' << format_double(em.vector.values[static_cast<Eigen::Index>(idx)])
        << '\n';
  }
}

} // namespace mtd

#endif // MTD_MOMENTS_HPP
