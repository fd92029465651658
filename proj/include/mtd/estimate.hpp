#ifndef MTD_ESTIMATE_HPP
#define MTD_ESTIMATE_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtd/bfgs.hpp"
#include "mtd/common.hpp"
#include "mtd/model.hpp"
#include "mtd/moments.hpp"
#include "mtd/simulate.hpp"

namespace mtd {

enum class ObjectiveKind { LeastSquares, Gmm };

inline const char* to_string(ObjectiveKind k)
{
  return k == ObjectiveKind::LeastSquares ? "ls" : "gmm";
}

inline ObjectiveKind parse_objective_kind(const std::string& s)
{
  if (s == "ls")
    return ObjectiveKind::LeastSquares;
  if (s == "gmm")
    return ObjectiveKind::Gmm;
  throw InvalidInput("unknown method '" + s + "' (expected ls or gmm)");
}

/// Per-block weights of the least-squares objective.
struct LsWeights {
  double w2 = 1.0;
  double w3 = 1.0;
};

/// w2 = 1/L and w3 = 1/L^2: each block is normalized by its number of
/// full-grid terms.
inline LsWeights default_ls_weights(std::size_t L)
{
  require(L >= 1, "default_ls_weights: L must be >= 1");
  const double l = static_cast<double>(L);
  return {1.0 / l, 1.0 / (l * l)};
}

inline LsWeights default_ls_weights(const EmpiricalMoments& empirical)
{
  return default_ls_weights(empirical.vector.layout.signal_length());
}

/// Everything the objective needs besides theta. Only the fields of the
/// active kind are consulted.
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::LeastSquares;
  LsWeights ls_weights;
  WeightMatrix weights;
  EmpiricalMoments empirical;
  NoiseModel noise;

  static ObjectiveSpec least_squares(EmpiricalMoments empirical, NoiseModel noise, LsWeights w)
  {
    require(w.w2 > 0.0 && w.w3 > 0.0, "ObjectiveSpec: LS weights must be positive");
    ObjectiveSpec spec;
    spec.kind = ObjectiveKind::LeastSquares;
    spec.ls_weights = w;
    spec.empirical = std::move(empirical);
    spec.noise = noise;
    spec.ls_diagonal_ = ls_weight_matrix(spec.empirical.vector.layout, w.w2, w.w3).W.diagonal();
    return spec;
  }

  static ObjectiveSpec least_squares(EmpiricalMoments empirical, NoiseModel noise)
  {
    const auto w = default_ls_weights(empirical);
    return least_squares(std::move(empirical), noise, w);
  }

  static ObjectiveSpec gmm(EmpiricalMoments empirical, NoiseModel noise, WeightMatrix W)
  {
    const auto d = static_cast<Eigen::Index>(empirical.vector.layout.dim());
    require(W.W.rows() == d && W.W.cols() == d, "ObjectiveSpec: weight matrix does not match moment dimension");
    ObjectiveSpec spec;
    spec.kind = ObjectiveKind::Gmm;
    spec.weights = std::move(W);
    spec.empirical = std::move(empirical);
    spec.noise = noise;
    return spec;
  }

  std::size_t signal_length() const { return empirical.vector.layout.signal_length(); }

  /// Diagonal of the LS weighting (1, w2, w3 * multiplicity).
  const Vector& ls_diagonal() const { return ls_diagonal_; }

private:
  Vector ls_diagonal_;
};

/// g(theta) = m(theta) - empirical moments.
inline MomentVector residual(const Params& theta, const ObjectiveSpec& spec)
{
  require(theta.length() == spec.signal_length(), "residual: signal length does not match the moment layout");
  MomentVector m = model_moments(theta, spec.noise);
  m.values -= spec.empirical.vector.values;
  return m;
}

struct ObjectiveValue {
  double value = 0.0;
  Vector gradient;
};

/// LS: sum over the full grid of weighted squared residuals, evaluated on
/// the deduplicated vector through multiplicities. GMM: g' W g.
/// Gradient is 2 J' (weights * g) with J the model Jacobian.
inline ObjectiveValue objective_and_gradient(const Params& theta, const ObjectiveSpec& spec)
{
  require(theta.finite(), "objective_and_gradient: non-finite parameters");
  const MomentVector g = residual(theta, spec);
  const Matrix J = model_jacobian(theta, spec.noise);
  Vector weighted;
  if (spec.kind == ObjectiveKind::LeastSquares)
    weighted = spec.ls_diagonal().cwiseProduct(g.values);
  else
    weighted = spec.weights.W * g.values;
  return ObjectiveValue{g.values.dot(weighted), 2.0 * J.transpose() * weighted};
}

struct OptimizerOptions {
  std::size_t max_iterations = 10000;
  double gradient_tolerance = 1e-8;
  std::size_t n_starts = 5;
  double gamma_init = 0.18;
  /// For gmm, run each start through the LS objective first and refine
  /// the result under W. An ill-conditioned W otherwise tends to pull
  /// random starts toward gamma = 0.
  bool ls_warm_start = true;
  /// Keep the objective history of every start (tests and diagnostics).
  bool record_history = false;

  void validate() const
  {
    require(n_starts >= 1, "OptimizerOptions: n_starts must be >= 1");
    require(gradient_tolerance > 0.0, "OptimizerOptions: gradient_tolerance must be positive");
    require(std::isfinite(gamma_init), "OptimizerOptions: gamma_init must be finite");
  }
};

struct MinimizeResult {
  Params theta;
  double value = 0.0;
  std::size_t iterations = 0;
  BfgsStatus status = BfgsStatus::Diverged;
  std::vector<double> history;
};

/// BFGS on the objective, gamma left unconstrained.
inline MinimizeResult minimize(const Params& theta0, const ObjectiveSpec& spec, const OptimizerOptions& opts)
{
  require(theta0.finite(), "minimize: non-finite initial parameters");
  require(theta0.length() == spec.signal_length(), "minimize: signal length does not match the moment layout");
  BfgsOptions bo;
  bo.max_iterations = opts.max_iterations;
  bo.gradient_tolerance = opts.gradient_tolerance;
  bo.record_history = opts.record_history;

  auto fg = [&spec](const Vector& packed, Vector& grad) {
    const Params p = Params::unpack(packed);
    if (!p.finite())
      return std::numeric_limits<double>::infinity();
    auto ov = objective_and_gradient(p, spec);
    grad = std::move(ov.gradient);
    return ov.value;
  };
  // Gauss-Newton curvature 2 J' W J, lightly ridged.
  auto curvature = [&spec](const Vector& packed) {
    const Params p = Params::unpack(packed);
    const Matrix J = model_jacobian(p, spec.noise);
    Matrix B = spec.kind == ObjectiveKind::LeastSquares
        ? Matrix(2.0 * J.transpose() * spec.ls_diagonal().asDiagonal() * J)
        : Matrix(2.0 * J.transpose() * spec.weights.W * J);
    const double ridge = 1e-8 * B.diagonal().cwiseAbs().maxCoeff();
    B.diagonal().array() += ridge > 0.0 ? ridge : 1.0;
    return B;
  };
  BfgsResult r = bfgs_minimize(fg, curvature, theta0.packed(), bo);

  MinimizeResult out;
  out.theta = Params::unpack(r.x);
  out.value = r.value;
  out.iterations = r.iterations;
  out.status = r.status;
  out.history = std::move(r.history);
  return out;
}

/// ||x - x_true|| / ||x_true||, no alignment.
inline double relative_error(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x_true)
{
  require(x.size() == x_true.size(), "relative_error: length mismatch");
  const double n = x_true.norm();
  require(n > 0.0, "relative_error: ground truth is zero");
  return (x - x_true).norm() / n;
}

/// Smallest relative error over circular shifts and reflections of x.
/// Diagnostic only.
inline double aligned_relative_error(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x_true)
{
  require(x.size() == x_true.size(), "aligned_relative_error: length mismatch");
  const auto L = x.size();
  double best = relative_error(x, x_true);
  Vector cand(L);
  for (int reflect = 0; reflect < 2; ++reflect)
    for (Eigen::Index s = 0; s < L; ++s) {
      for (Eigen::Index k = 0; k < L; ++k) {
        const Eigen::Index src = (k + s) % L;
        cand[k] = reflect ? x[L - 1 - src] : x[src];
      }
      best = std::min(best, relative_error(cand, x_true));
    }
  return best;
}

struct StartRecord {
  std::uint64_t seed = 0;
  Params initial;
  Params final_theta;
  double final_objective = 0.0;
  std::size_t iterations = 0;
  BfgsStatus status = BfgsStatus::Diverged;
  std::vector<double> history;

  bool converged() const { return status == BfgsStatus::Converged; }
};

struct Estimate {
  ObjectiveKind method = ObjectiveKind::LeastSquares;
  Params theta_hat;
  double objective_value = 0.0;
  std::optional<double> relative_error;
  std::size_t best_start = 0;
  std::vector<StartRecord> starts;
};

/// Thrown when no start produced a finite objective.
class RecoveryError : public std::runtime_error {
public:
  RecoveryError(const std::string& what, std::vector<StartRecord> starts)
      : std::runtime_error(what), starts_(std::move(starts))
  {
  }
  const std::vector<StartRecord>& starts() const { return starts_; }

private:
  std::vector<StartRecord> starts_;
};

/// Random unit-norm uniform signal paired with gamma_init.
inline Params initial_guess(std::size_t L, std::uint64_t start_seed, double gamma_init)
{
  Rng rng(start_seed);
  return Params{random_unit_signal(L, rng), gamma_init};
}

/// Multi-start recovery: n_starts minimizations from random unit-norm
/// uniform signals and gamma_init; the start with the smallest final
/// objective wins (lowest index on ties).
///
/// Start s draws its signal from derive_seed(seed, s), so ls and gmm runs
/// with the same seed start from identical points.
inline Estimate recover(const ObjectiveSpec& spec, const OptimizerOptions& opts, std::uint64_t seed,
                        const std::optional<Vector>& truth = std::nullopt)
{
  opts.validate();
  const std::size_t L = spec.signal_length();
  std::optional<ObjectiveSpec> warm;
  if (spec.kind == ObjectiveKind::Gmm && opts.ls_warm_start)
    warm = ObjectiveSpec::least_squares(spec.empirical, spec.noise);

  Estimate est;
  est.method = spec.kind;
  bool found = false;
  for (std::size_t s = 0; s < opts.n_starts; ++s) {
    StartRecord rec;
    rec.seed = derive_seed(seed, s);
    rec.initial = initial_guess(L, rec.seed, opts.gamma_init);
    std::size_t warm_iterations = 0;
    Params start = rec.initial;
    if (warm) {
      MinimizeResult pre = minimize(rec.initial, *warm, opts);
      if (pre.status != BfgsStatus::Diverged && pre.theta.finite()) {
        start = pre.theta;
        warm_iterations = pre.iterations;
      }
    }
    MinimizeResult r = minimize(start, spec, opts);
    rec.final_theta = r.theta;
    rec.final_objective = r.value;
    rec.iterations = warm_iterations + r.iterations;
    rec.status = r.status;
    rec.history = std::move(r.history);
    const bool usable = rec.status != BfgsStatus::Diverged && std::isfinite(rec.final_objective);
    if (usable && (!found || rec.final_objective < est.objective_value)) {
      found = true;
      est.best_start = s;
      est.objective_value = rec.final_objective;
      est.theta_hat = rec.final_theta;
    }
    est.starts.push_back(std::move(rec));
  }
  if (!found)
    throw RecoveryError("recover: every start diverged", std::move(est.starts));
  if (truth)
    est.relative_error = relative_error(est.theta_hat.x, *truth);
  return est;
}

struct RecoverOptions {
  OptimizerOptions optimizer;
  CovarianceOptions covariance;
  /// Override of the LS block weights; default_ls_weights when empty.
  std::optional<LsWeights> ls_weights;
};

/// Builds the objective for `method` from a raw measurement. The data
/// term is the mean of the window observations, so both methods see the
/// same moments and gmm additionally weights by the inverse covariance
/// of those observations.
inline ObjectiveSpec objective_from_measurement(const Eigen::Ref<const Vector>& y, std::size_t L, double sigma2,
                                                ObjectiveKind method, const RecoverOptions& opts)
{
  EmpiricalMoments em = window_mean_moments(y, L, opts.covariance.convention);
  const NoiseModel noise(sigma2);
  if (method == ObjectiveKind::LeastSquares)
    return ObjectiveSpec::least_squares(std::move(em), noise, opts.ls_weights.value_or(default_ls_weights(L)));
  const CovarianceEstimate cov = estimate_covariance(y, L, opts.covariance);
  return ObjectiveSpec::gmm(std::move(em), noise, weight_matrix(cov));
}

inline Estimate recover(const Measurement& m, ObjectiveKind method, const RecoverOptions& opts, std::uint64_t seed,
                        const std::optional<Vector>& truth = std::nullopt)
{
  const ObjectiveSpec spec = objective_from_measurement(m.y, m.spec.L, m.spec.sigma2, method, opts);
  return recover(spec, opts.optimizer, seed, truth);
}

/// Asymptotic covariance M S M' of sqrt(N)(theta_hat - theta_0) with
/// M = (G' W G)^-1 G' W.
inline Matrix asymptotic_covariance(const Eigen::Ref<const Matrix>& G0, const Eigen::Ref<const Matrix>& S,
                                    const Eigen::Ref<const Matrix>& W)
{
  require(S.rows() == G0.rows() && S.cols() == G0.rows(), "asymptotic_covariance: S shape mismatch");
  require(W.rows() == G0.rows() && W.cols() == G0.rows(), "asymptotic_covariance: W shape mismatch");
  const Matrix A = G0.transpose() * W * G0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double lmin = eig.eigenvalues().cwiseAbs().minCoeff();
  const double cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(cond < 1e14))
    throw InvalidInput("asymptotic_covariance: G'WG is singular (condition number " + std::to_string(cond) + ")");
  const Matrix M = A.fullPivLu().solve(G0.transpose() * W);
  const Matrix V = M * S * M.transpose();
  return 0.5 * (V + V.transpose());
}

/// (G' S^-1 G)^-1, the smallest attainable asymptotic covariance.
inline Matrix optimal_asymptotic_covariance(const Eigen::Ref<const Matrix>& G0, const Eigen::Ref<const Matrix>& S)
{
  const Eigen::LDLT<Matrix> ldlt(S);
  require(ldlt.info() == Eigen::Success, "optimal_asymptotic_covariance: S is not invertible");
  const Matrix A = G0.transpose() * ldlt.solve(G0);
  const Matrix V = A.inverse();
  return 0.5 * (V + V.transpose());
}

} // namespace mtd

#endif // MTD_ESTIMATE_HPP
