#ifndef MTD_EXPERIMENT_HPP
#define MTD_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mtd/common.hpp"
#include "mtd/estimate.hpp"
#include "mtd/moments.hpp"
#include "mtd/simulate.hpp"

namespace mtd {

enum class SweepVariable { N, Snr };

inline const char* to_string(SweepVariable v)
{
  return v == SweepVariable::N ? "N" : "snr";
}

inline SweepVariable parse_sweep_variable(const std::string& s)
{
  if (s == "N" || s == "n")
    return SweepVariable::N;
  if (s == "snr" || s == "SNR")
    return SweepVariable::Snr;
  throw InvalidInput("unknown sweep variable '" + s + "' (expected N or snr)");
}

inline std::vector<double> default_grid(SweepVariable sweep)
{
  if (sweep == SweepVariable::N)
    return {1e4, 3e4, 1e5, 3e5, 1e6};
  return {0.1, 0.3, 1, 3, 10, 50};
}

struct ExperimentConfig {
  SweepVariable sweep = SweepVariable::N;
  std::vector<double> grid = default_grid(SweepVariable::N);
  /// Set once a grid is given explicitly; until then the grid follows
  /// the sweep variable.
  bool grid_set = false;
  std::size_t L = 21;
  double gamma = 0.2;
  /// Fixed SNR for N sweeps; infinity means noiseless.
  double snr = 50.0;
  /// Fixed measurement length for SNR sweeps.
  std::size_t N = 1000000;
  std::size_t trials = 50;
  OptimizerOptions optimizer;
  std::uint64_t seed = 1;
  std::vector<ObjectiveKind> methods{ObjectiveKind::LeastSquares, ObjectiveKind::Gmm};
  std::size_t stride = 1;
  WindowConvention convention = WindowConvention::Extended;
  /// Reuse one signal for every trial instead of drawing a fresh one.
  bool fixed_signal = false;
  std::size_t workers = 1;
  std::string output;

  void validate() const
  {
    require(!grid.empty(), "ExperimentConfig: grid must not be empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      require(std::isfinite(grid[i]) && grid[i] > 0.0, "ExperimentConfig: grid values must be positive");
      require(i == 0 || grid[i] > grid[i - 1], "ExperimentConfig: grid must be strictly increasing");
    }
    require(trials >= 1, "ExperimentConfig: trials must be >= 1");
    require(L >= 1, "ExperimentConfig: L must be >= 1");
    require(gamma > 0.0, "ExperimentConfig: gamma must be positive");
    require(snr > 0.0, "ExperimentConfig: snr must be positive");
    require(stride >= 1, "ExperimentConfig: stride must be >= 1");
    require(!methods.empty(), "ExperimentConfig: at least one method is required");
    optimizer.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s)
{
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    out.push_back(trim(item));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v)
{
  try {
    return parse_number(v == "infinity" ? "inf" : v);
  } catch (const InvalidInput&) {
    throw InvalidInput("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v)
{
  // Accepts integral values written as 1e6.
  const double d = parse_double(key, v);
  require(d >= 0.0 && std::floor(d) == d && d < 1.8e19, "config: key '" + key + "' expects a non-negative integer");
  if (v.find_first_of(".eE") == std::string::npos)
    return std::stoull(v);
  return static_cast<std::uint64_t>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
  if (v == "true" || v == "1" || v == "yes")
    return true;
  if (v == "false" || v == "0" || v == "no")
    return false;
  throw InvalidInput("config: key '" + key + "' expects true/false, got '" + v + "'");
}

} // namespace detail

/// Applies one `key = value` setting. Unknown keys are rejected.
inline void apply_config_value(ExperimentConfig& cfg, const std::string& key_in, const std::string& value_in)
{
  const std::string key = detail::trim(key_in);
  const std::string v = detail::trim(value_in);
  using namespace detail;
  if (key == "sweep") {
    cfg.sweep = parse_sweep_variable(v);
    if (!cfg.grid_set)
      cfg.grid = default_grid(cfg.sweep);
  } else if (key == "grid") {
    cfg.grid_set = true;
    cfg.grid.clear();
    for (const auto& item : split(v, ','))
      if (!item.empty())
        cfg.grid.push_back(parse_double(key, item));
  } else if (key == "L")
    cfg.L = parse_uint(key, v);
  else if (key == "gamma")
    cfg.gamma = parse_double(key, v);
  else if (key == "snr")
    cfg.snr = parse_double(key, v);
  else if (key == "N")
    cfg.N = parse_uint(key, v);
  else if (key == "trials")
    cfg.trials = parse_uint(key, v);
  else if (key == "starts")
    cfg.optimizer.n_starts = parse_uint(key, v);
  else if (key == "gamma_init")
    cfg.optimizer.gamma_init = parse_double(key, v);
  else if (key == "max_iterations")
    cfg.optimizer.max_iterations = parse_uint(key, v);
  else if (key == "gradient_tolerance")
    cfg.optimizer.gradient_tolerance = parse_double(key, v);
  else if (key == "ls_warm_start")
    cfg.optimizer.ls_warm_start = parse_bool(key, v);
  else if (key == "seed")
    cfg.seed = parse_uint(key, v);
  else if (key == "methods") {
    cfg.methods.clear();
    for (const auto& item : split(v, ','))
      if (!item.empty())
        cfg.methods.push_back(parse_objective_kind(item));
  } else if (key == "stride")
    cfg.stride = parse_uint(key, v);
  else if (key == "window") {
    if (v == "extended")
      cfg.convention = WindowConvention::Extended;
    else if (v == "truncated")
      cfg.convention = WindowConvention::Truncated;
    else
      throw InvalidInput("config: window must be 'extended' or 'truncated'");
  } else if (key == "fixed_signal")
    cfg.fixed_signal = parse_bool(key, v);
  else if (key == "workers")
    cfg.workers = parse_uint(key, v);
  else if (key == "output")
    cfg.output = v;
  else
    throw InvalidInput("config: unknown key '" + key + "'");
}

/// Flat `key = value` file; '#' starts a comment.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {})
{
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = detail::trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

struct ResultRow {
  ObjectiveKind method = ObjectiveKind::LeastSquares;
  double sweep_value = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double relative_error = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;
  bool converged = false;
  /// ok | infeasible | diverged
  std::string status = "ok";
};

struct SummaryRow {
  ObjectiveKind method = ObjectiveKind::LeastSquares;
  double sweep_value = 0.0;
  double median_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t trials = 0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;
};

inline double median(std::vector<double> v)
{
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Medians of the finite errors per (method, grid value), in method then
/// grid order.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows)
{
  std::vector<SummaryRow> out;
  std::vector<ObjectiveKind> methods;
  std::vector<double> values;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(values.begin(), values.end(), r.sweep_value) == values.end())
      values.push_back(r.sweep_value);
  }
  std::sort(values.begin(), values.end());
  for (auto m : methods)
    for (double v : values) {
      std::vector<double> errs;
      for (const auto& r : rows)
        if (r.method == m && r.sweep_value == v && r.status == "ok")
          errs.push_back(r.relative_error);
      out.push_back(SummaryRow{m, v, median(errs), errs.size()});
    }
  return out;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
  require(x.size() == y.size() && x.size() >= 2, "loglog_slope: need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, "loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// Seed of the signal used in `trial`; shared by every grid point so the
/// sweep compares the same signals across N or SNR.
inline std::uint64_t trial_signal_seed(const ExperimentConfig& cfg, std::size_t trial)
{
  return derive_seed(cfg.seed, cfg.fixed_signal ? 0xFFFFFFFFULL : trial);
}

/// Seed of the measurement (placement and noise) and of the random starts
/// at grid point `point`, trial `trial`.
inline std::uint64_t trial_seed(const ExperimentConfig& cfg, std::size_t point, std::size_t trial)
{
  return derive_seed(derive_seed(cfg.seed, 0x5EED0000ULL + point), trial);
}

/// Runs one (grid point, trial) cell for every enabled method on a single
/// shared measurement. Rows come back in method order.
inline std::vector<ResultRow> run_trial(const ExperimentConfig& cfg, std::size_t point, std::size_t trial)
{
  const double value = cfg.grid[point];
  const std::uint64_t seed = trial_seed(cfg, point, trial);
  std::vector<ResultRow> rows;
  auto fill = [&](const std::string& status) {
    rows.clear();
    for (auto m : cfg.methods) {
      ResultRow r;
      r.method = m;
      r.sweep_value = value;
      r.trial = trial;
      r.seed = seed;
      r.status = status;
      rows.push_back(r);
    }
  };

  Rng signal_rng(trial_signal_seed(cfg, trial));
  const Vector x = random_unit_signal(cfg.L, signal_rng);
  const std::size_t N = cfg.sweep == SweepVariable::N ? static_cast<std::size_t>(std::llround(value)) : cfg.N;
  const double snr = cfg.sweep == SweepVariable::Snr ? value : cfg.snr;
  const double sigma2 = std::isinf(snr) ? 0.0 : sigma_for_snr(x, cfg.L, snr);

  MeasurementSpec spec;
  Measurement meas;
  try {
    spec = MeasurementSpec::from_density(N, cfg.L, cfg.gamma, sigma2, seed);
    meas = synthesize(x, spec);
  } catch (const InvalidInput&) {
    fill("infeasible");
    return rows;
  }

  RecoverOptions ro;
  ro.optimizer = cfg.optimizer;
  ro.covariance.stride = cfg.stride;
  ro.covariance.convention = cfg.convention;
  const std::uint64_t start_seed = derive_seed(seed, 0x57A127ULL);

  fill("ok");
  for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
    auto& row = rows[k];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Estimate est = recover(meas, row.method, ro, start_seed, x);
      row.relative_error = *est.relative_error;
      row.objective = est.objective_value;
      row.converged = est.starts[est.best_start].converged();
    } catch (const RecoveryError&) {
      row.status = "diverged";
    } catch (const InvalidInput&) {
      row.status = "infeasible";
    }
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return rows;
}

/// Every (grid point, trial) cell, optionally spread over worker threads.
/// Rows are returned in (grid point, trial, method) order whatever the
/// completion order.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(std::size_t, std::size_t)>& progress = {})
{
  cfg.validate();
  const std::size_t cells = cfg.grid.size() * cfg.trials;
  std::vector<std::vector<ResultRow>> out(cells);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  auto work = [&] {
    for (std::size_t c = next++; c < cells; c = next++) {
      out[c] = run_trial(cfg, c / cfg.trials, c % cfg.trials);
      const std::size_t finished = ++done;
      if (progress)
        progress(finished, cells);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(cfg.workers, 1, cells);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(work);
    for (auto& t : pool)
      t.join();
  }

  ExperimentResult res;
  for (auto& cell : out)
    for (auto& r : cell)
      res.rows.push_back(std::move(r));
  res.summary = summarize(res.rows);
  return res;
}

// CSV schema (fixed order):
//   results: method,sweep,sweep_value,trial,seed,relative_error,objective,converged,status
//   timing:  method,sweep_value,trial,wall_time_s
//   summary: method,sweep,sweep_value,median_error,trials
// Wall times live in their own file so the results file is reproducible
// byte for byte.

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, SweepVariable sweep)
{
  out << "method,sweep,sweep_value,trial,seed,relative_error,objective,converged,status\n";
  for (const auto& r : rows)
    out << to_string(r.method) << ',' << to_string(sweep) << ',' << format_double(r.sweep_value) << ',' << r.trial
        << ',' << r.seed << ',' << format_double(r.relative_error) << ',' << format_double(r.objective) << ','
        << (r.converged ? 1 : 0) << ',' << r.status << '\n';
}

inline void write_timing_csv(std::ostream& out, const std::vector<ResultRow>& rows)
{
  out << "method,sweep_value,trial,wall_time_s\n";
  for (const auto& r : rows)
    out << to_string(r.method) << ',' << format_double(r.sweep_value) << ',' << r.trial << ','
        << format_double(r.wall_time) << '\n';
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows, SweepVariable sweep)
{
  out << "method,sweep,sweep_value,median_error,trials\n";
  for (const auto& r : rows)
    out << to_string(r.method) << ',' << to_string(sweep) << ',' << format_double(r.sweep_value) << ','
        << format_double(r.median_error) << ',' << r.trials << '\n';
}

/// Reads a results CSV back; used to recompute summaries.
inline std::vector<ResultRow> read_results_csv(std::istream& in, SweepVariable* sweep = nullptr)
{
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "read_results_csv: empty input");
  require(detail::trim(line) == "method,sweep,sweep_value,trial,seed,relative_error,objective,converged,status",
          "read_results_csv: unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty())
      continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 9, "read_results_csv: expected 9 columns");
    ResultRow r;
    r.method = parse_objective_kind(f[0]);
    if (sweep)
      *sweep = parse_sweep_variable(f[1]);
    r.sweep_value = detail::parse_double("sweep_value", f[2]);
    r.trial = detail::parse_uint("trial", f[3]);
    r.seed = std::stoull(f[4]);
    r.relative_error = parse_number(f[5]);
    r.objective = parse_number(f[6]);
    r.converged = f[7] == "1";
    r.status = f[8];
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<SummaryRow> read_summary_csv(std::istream& in, SweepVariable& sweep)
{
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "read_summary_csv: empty input");
  require(detail::trim(line) == "method,sweep,sweep_value,median_error,trials", "read_summary_csv: unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty())
      continue;
    const auto f = detail::split(line, ',');
    require(f.size() == 5, "read_summary_csv: expected 5 columns");
    SummaryRow r;
    r.method = parse_objective_kind(f[0]);
    sweep = parse_sweep_variable(f[1]);
    r.sweep_value = detail::parse_double("sweep_value", f[2]);
    r.median_error = parse_number(f[3]);
    r.trials = detail::parse_uint("trials", f[4]);
    rows.push_back(r);
  }
  return rows;
}

/// Line chart of median error against the sweep variable, one polyline
/// per method. The x axis is logarithmic; the y axis is logarithmic for N
/// sweeps and linear for SNR sweeps.
inline std::string render_svg(const std::vector<SummaryRow>& rows, SweepVariable sweep, const std::string& title = {})
{
  const double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 50;
  const bool log_y = sweep == SweepVariable::N;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& r : rows) {
    if (!(r.sweep_value > 0) || !std::isfinite(r.median_error) || (log_y && !(r.median_error > 0)))
      continue;
    xmin = std::min(xmin, std::log10(r.sweep_value));
    xmax = std::max(xmax, std::log10(r.sweep_value));
    const double y = log_y ? std::log10(r.median_error) : r.median_error;
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (!log_y)
    ymin = std::min(ymin, 0.0);
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto px = [&](double v) { return left + (std::log10(v) - xmin) / (xmax - xmin) * (width - left - right); };
  auto py = [&](double e) {
    const double y = log_y ? std::log10(e) : e;
    return top + (ymax - y) / (ymax - ymin) * (height - top - bottom);
  };

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
    << (title.empty() ? std::string("median relative error") : title) << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
    << height - bottom << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\" font-size=\"13\">"
    << (sweep == SweepVariable::N ? "N (log)" : "SNR (log)") << "</text>\n";
  s << "<text x=\"16\" y=\"" << height / 2 << "\" transform=\"rotate(-90 16 " << height / 2
    << ")\" text-anchor=\"middle\" font-size=\"13\">" << (log_y ? "median error (log)" : "median error") << "</text>\n";
  for (int t = static_cast<int>(std::ceil(xmin)); t <= static_cast<int>(std::floor(xmax)); ++t) {
    const double x = px(std::pow(10.0, t));
    s << "<text x=\"" << x << "\" y=\"" << height - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">1e"
      << t << "</text>\n";
  }

  const char* colors[] = {"#c0392b", "#2c5fa8", "#27ae60", "#8e44ad"};
  std::vector<ObjectiveKind> methods;
  for (const auto& r : rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
  for (std::size_t k = 0; k < methods.size(); ++k) {
    std::vector<SummaryRow> pts;
    for (const auto& r : rows)
      if (r.method == methods[k] && r.sweep_value > 0 && std::isfinite(r.median_error) &&
          (!log_y || r.median_error > 0))
        pts.push_back(r);
    std::sort(pts.begin(), pts.end(), [](const SummaryRow& a, const SummaryRow& b) { return a.sweep_value < b.sweep_value; });
    const char* color = colors[k % 4];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts)
      s << px(p.sweep_value) << ',' << py(p.median_error) << ' ';
    s << "\"/>\n";
    for (const auto& p : pts)
      s << "<circle cx=\"" << px(p.sweep_value) << "\" cy=\"" << py(p.median_error) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
    s << "<text x=\"" << width - right - 60 << "\" y=\"" << top + 16 * (k + 1) << "\" fill=\"" << color
      << "\" font-size=\"13\">" << to_string(methods[k]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

} // namespace mtd

#endif // MTD_EXPERIMENT_HPP
