#ifndef MTD_BFGS_HPP
#define MTD_BFGS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "mtd/common.hpp"

namespace mtd {

struct BfgsOptions {
  std::size_t max_iterations = 10000;
  double gradient_tolerance = 1e-8;
  /// Armijo and curvature constants of the strong Wolfe line search.
  double c1 = 1e-4;
  double c2 = 0.9;
  std::size_t max_line_search_evaluations = 60;
  /// Keep the objective value after every accepted step.
  bool record_history = false;
};

enum class BfgsStatus {
  Converged,     ///< gradient infinity norm below tolerance
  MaxIterations, ///< iteration cap reached
  Stalled,       ///< no step satisfying sufficient decrease could be found
  Diverged       ///< non-finite objective or gradient
};

inline const char* to_string(BfgsStatus s)
{
  switch (s) {
  case BfgsStatus::Converged: return "converged";
  case BfgsStatus::MaxIterations: return "max_iterations";
  case BfgsStatus::Stalled: return "stalled";
  case BfgsStatus::Diverged: return "diverged";
  }
  return "unknown";
}

struct BfgsResult {
  Vector x;
  double value = std::numeric_limits<double>::quiet_NaN();
  Vector gradient;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  BfgsStatus status = BfgsStatus::Diverged;
  std::vector<double> history;

  bool converged() const { return status == BfgsStatus::Converged; }
};

namespace detail {

// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db),
// safeguarded to stay inside the bracket.
inline double cubic_minimizer(double a, double fa, double da, double b, double fb, double db)
{
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  const double lo = std::min(a, b), hi = std::max(a, b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    const double margin = 0.1 * (hi - lo);
    if (std::isfinite(t) && t > lo + margin && t < hi - margin)
      return t;
  }
  return 0.5 * (a + b);
}

} // namespace detail

/// Quasi-Newton minimization with a dense inverse-Hessian BFGS update and
/// a strong Wolfe line search (bracketing + cubic zoom).
///
/// `fg(x, grad)` must return the objective at x and write its gradient
/// into `grad`. `curvature(x)` returns a symmetric positive-definite
/// approximation of the Hessian; its inverse seeds the inverse-Hessian
/// estimate at the start and after every reset. Accepted iterates never
/// increase the objective.
template <typename Objective, typename Curvature>
BfgsResult bfgs_minimize(Objective&& fg, Curvature&& curvature, Vector x0, const BfgsOptions& opts = {})
{
  const auto n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.gradient = Vector::Zero(n);
  res.value = fg(res.x, res.gradient);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    res.status = BfgsStatus::Diverged;
    return res;
  }
  if (opts.record_history)
    res.history.push_back(res.value);

  Matrix H(n, n);
  bool fresh_hessian = true;
  bool seeded = false;
  auto reset = [&] {
    const Matrix B = curvature(res.x);
    Eigen::LLT<Matrix> llt(B);
    seeded = B.allFinite() && llt.info() == Eigen::Success;
    if (seeded)
      H = llt.solve(Matrix::Identity(n, n));
    if (!seeded || !H.allFinite()) {
      H.setIdentity();
      seeded = false;
    }
    fresh_hessian = true;
  };
  reset();
  Vector x_trial(n), g_trial(n);
  std::size_t no_progress = 0;

  while (true) {
    if (res.gradient.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      res.status = BfgsStatus::Converged;
      return res;
    }
    if (res.iterations >= opts.max_iterations) {
      res.status = BfgsStatus::MaxIterations;
      return res;
    }

    Vector dir = -H * res.gradient;
    double slope = res.gradient.dot(dir);
    if (!(slope < 0.0)) {
      H.setIdentity();
      seeded = false;
      fresh_hessian = true;
      dir = -res.gradient;
      slope = -res.gradient.squaredNorm();
    }

    // Unscaled steepest descent has no natural length, so the first try
    // moves a tenth of the iterate's scale.
    double alpha = 1.0;
    if (fresh_hessian && !seeded)
      alpha = 0.1 * std::max(1.0, res.x.norm()) / dir.norm();

    const double f0 = res.value;
    double a_lo = 0.0, f_lo = f0, d_lo = slope;
    double a_hi = 0.0, f_hi = 0.0, d_hi = 0.0;
    bool bracketed = false;
    bool accepted = false;
    double f_new = f0;

    for (std::size_t ev = 0; ev < opts.max_line_search_evaluations; ++ev) {
      x_trial = res.x + alpha * dir;
      const double f = fg(x_trial, g_trial);
      ++res.evaluations;
      if (!std::isfinite(f) || !g_trial.allFinite()) {
        // Overshot into a non-finite region; back off toward a_lo.
        a_hi = alpha;
        f_hi = std::numeric_limits<double>::infinity();
        d_hi = 0.0;
        bracketed = true;
        alpha = 0.5 * (a_lo + a_hi);
        continue;
      }
      const double d = g_trial.dot(dir);
      // Within roundoff of f0 the Armijo test carries no information;
      // the curvature test alone decides.
      const bool flat = f <= f0 && f0 - f <= 1e-12 * std::abs(f0);
      const bool armijo = f <= f0 + opts.c1 * alpha * slope || flat;
      if (!armijo || (f >= f_lo && ev > 0 && !flat)) {
        a_hi = alpha;
        f_hi = f;
        d_hi = d;
        bracketed = true;
      } else {
        if (std::abs(d) <= -opts.c2 * slope) {
          accepted = true;
          f_new = f;
          break;
        }
        if (bracketed ? d * (a_hi - a_lo) >= 0.0 : d >= 0.0) {
          a_hi = a_lo;
          f_hi = f_lo;
          d_hi = d_lo;
          bracketed = true;
        }
        a_lo = alpha;
        f_lo = f;
        d_lo = d;
      }

      if (bracketed) {
        if (std::abs(a_hi - a_lo) <= 1e-16 * std::max(1.0, std::abs(a_lo)))
          break;
        alpha = std::isfinite(f_hi) ? detail::cubic_minimizer(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
                                    : 0.5 * (a_lo + a_hi);
      } else {
        alpha *= 4.0;
      }
    }

    // Fall back to the best sufficient-decrease point seen, if any.
    if (!accepted && a_lo > 0.0 && f_lo < f0) {
      x_trial = res.x + a_lo * dir;
      f_new = fg(x_trial, g_trial);
      ++res.evaluations;
      accepted = std::isfinite(f_new) && f_new < f0 && g_trial.allFinite();
    }

    if (!accepted) {
      if (!fresh_hessian) {
        reset();
        continue;
      }
      res.status = BfgsStatus::Stalled;
      return res;
    }

    no_progress = f_new < f0 ? 0 : no_progress + 1;
    if (no_progress >= 10) {
      res.status = BfgsStatus::Stalled;
      return res;
    }

    const Vector s = x_trial - res.x;
    const Vector yv = g_trial - res.gradient;
    res.x = x_trial;
    res.gradient = g_trial;
    res.value = f_new;
    ++res.iterations;
    if (opts.record_history)
      res.history.push_back(res.value);

    const double sy = s.dot(yv);
    if (sy > 1e-300 && std::isfinite(sy)) {
      if (fresh_hessian && !seeded)
        H *= sy / yv.squaredNorm();
      fresh_hessian = false;
      const double rho = 1.0 / sy;
      const Vector Hy = H * yv;
      const double yHy = yv.dot(Hy);
      // H+ = H - rho (s Hy' + Hy s') + (rho^2 yHy + rho) s s'
      H.noalias() -= rho * (s * Hy.transpose() + Hy * s.transpose());
      H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose());
    }
  }
}

/// Plain BFGS starting from a scaled identity.
template <typename Objective>
BfgsResult bfgs_minimize(Objective&& fg, Vector x0, const BfgsOptions& opts = {})
{
  const auto n = x0.size();
  auto no_curvature = [n](const Vector&) { return Matrix(Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN())); };
  return bfgs_minimize(std::forward<Objective>(fg), no_curvature, std::move(x0), opts);
}

} // namespace mtd

#endif // MTD_BFGS_HPP
