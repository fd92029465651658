// mtd: command-line front end for simulation, moment estimation, signal
// recovery and Monte-Carlo experiments.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mtd/estimate.hpp"
#include "mtd/experiment.hpp"
#include "mtd/io.hpp"
#include "mtd/moments.hpp"
#include "mtd/simulate.hpp"

namespace fs = std::filesystem;

namespace {

std::string output_dir()
{
  const char* env = std::getenv("MTD_OUTPUT_DIR");
  return env && *env ? env : ".";
}

std::string default_path(const std::string& name)
{
  return (fs::path(output_dir()) / name).string();
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in)
{
  std::ifstream in(path, mode);
  if (!in)
    throw mtd::InvalidInput("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out)
{
  const fs::path p(path);
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  std::ofstream out(path, mode);
  if (!out)
    throw mtd::InvalidInput("cannot open '" + path + "' for writing");
  return out;
}

// Signal files hold one sample per line, optionally under an "x" header.
mtd::Vector read_signal(const std::string& path)
{
  auto in = open_in(path);
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line == "x" || line[0] == '#')
      continue;
    values.push_back(mtd::parse_number(line));
  }
  mtd::require(!values.empty(), "signal file '" + path + "' is empty");
  return Eigen::Map<mtd::Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void write_signal(const std::string& path, const mtd::Vector& x)
{
  auto out = open_out(path);
  out << "x\n";
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out << mtd::format_double(x[i]) << '\n';
}

mtd::Measurement load_measurement(const std::string& path)
{
  auto in = open_in(path);
  return mtd::read_measurement(in);
}

mtd::WindowConvention parse_window(const std::string& s)
{
  if (s == "extended")
    return mtd::WindowConvention::Extended;
  if (s == "truncated")
    return mtd::WindowConvention::Truncated;
  throw mtd::InvalidInput("window must be 'extended' or 'truncated'");
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Multi-target detection: autocorrelation analysis and its generalized (GMM) variant"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Synthesize a measurement with well-separated signal copies");
  std::size_t sim_N = 0, sim_L = 0, sim_p = 0;
  double sim_gamma = 0.0, sim_snr = 0.0, sim_sigma2 = -1.0;
  std::uint64_t sim_seed = 1;
  std::string sim_signal, sim_out, sim_signal_out;
  sim->add_option("--N", sim_N, "Measurement length")->required();
  sim->add_option("--L", sim_L, "Signal length")->required();
  auto* opt_p = sim->add_option("--p", sim_p, "Number of signal copies");
  auto* opt_gamma = sim->add_option("--gamma", sim_gamma, "Target density; p = round(gamma N / L)");
  opt_p->excludes(opt_gamma);
  auto* opt_snr = sim->add_option("--snr", sim_snr, "SNR = ||x||^2 / (L sigma^2)");
  auto* opt_sigma2 = sim->add_option("--sigma2", sim_sigma2, "Noise variance");
  opt_snr->excludes(opt_sigma2);
  sim->add_option("--seed", sim_seed, "Seed of placement, noise and (if drawn) signal");
  sim->add_option("--signal", sim_signal, "Signal file; default draws a unit-norm uniform signal");
  sim->add_option("--out", sim_out, "Measurement file (default $MTD_OUTPUT_DIR/measurement.txt)");
  sim->add_option("--signal-out", sim_signal_out, "Where to write the signal (default $MTD_OUTPUT_DIR/signal.csv)");

  // moments
  auto* mom = app.add_subcommand("moments", "Empirical autocorrelations of a measurement");
  std::string mom_in, mom_out, mom_kind = "full", mom_window = "extended";
  mom->add_option("--in", mom_in, "Measurement file")->required();
  mom->add_option("--kind", mom_kind, "full (1/N sums) or window (mean of window observations)")
      ->check(CLI::IsMember({"full", "window"}));
  mom->add_option("--window", mom_window, "Window convention")->check(CLI::IsMember({"extended", "truncated"}));
  mom->add_option("--out", mom_out, "CSV output (default stdout)");

  // covariance
  auto* cov = app.add_subcommand("covariance", "Covariance S of window observations and weight matrix W");
  std::string cov_in, cov_S_out, cov_W_out, cov_window = "extended";
  std::size_t cov_stride = 1, cov_workers = 1;
  cov->add_option("--in", cov_in, "Measurement file")->required();
  cov->add_option("--stride", cov_stride, "Anchor stride")->check(CLI::PositiveNumber);
  cov->add_option("--workers", cov_workers, "Worker threads")->check(CLI::PositiveNumber);
  cov->add_option("--window", cov_window, "Window convention")->check(CLI::IsMember({"extended", "truncated"}));
  cov->add_option("--S-out", cov_S_out, "S matrix file (default $MTD_OUTPUT_DIR/S.bin)");
  cov->add_option("--W-out", cov_W_out, "W matrix file (default $MTD_OUTPUT_DIR/W.bin)");

  // recover
  auto* rec = app.add_subcommand("recover", "Estimate the signal from a measurement");
  std::string rec_in, rec_method = "gmm", rec_truth, rec_W, rec_out, rec_window = "extended";
  std::size_t rec_starts = 5, rec_stride = 1, rec_max_iter = 10000, rec_workers = 1;
  double rec_gamma_init = 0.18, rec_tol = 1e-8;
  std::uint64_t rec_seed = 1;
  bool rec_no_warm = false;
  rec->add_option("--in", rec_in, "Measurement file")->required();
  rec->add_option("--method", rec_method, "ls or gmm")->check(CLI::IsMember({"ls", "gmm"}));
  rec->add_option("--starts", rec_starts, "Number of random starts")->check(CLI::PositiveNumber);
  rec->add_option("--gamma-init", rec_gamma_init, "Initial density");
  rec->add_option("--seed", rec_seed, "Seed of the random starts");
  rec->add_option("--stride", rec_stride, "Covariance anchor stride")->check(CLI::PositiveNumber);
  rec->add_option("--workers", rec_workers, "Covariance worker threads")->check(CLI::PositiveNumber);
  rec->add_option("--window", rec_window, "Window convention")->check(CLI::IsMember({"extended", "truncated"}));
  rec->add_option("--max-iterations", rec_max_iter, "BFGS iteration cap");
  rec->add_option("--gradient-tolerance", rec_tol, "BFGS gradient tolerance");
  rec->add_flag("--no-ls-warm-start", rec_no_warm, "gmm: start BFGS directly under W");
  rec->add_option("--W", rec_W, "Precomputed weight matrix file (gmm)");
  rec->add_option("--truth", rec_truth, "Ground-truth signal file; enables the error report");
  rec->add_option("--out", rec_out, "JSON estimate record (default stdout)");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Monte-Carlo sweep over N or SNR");
  std::string exp_config, exp_out;
  std::vector<std::string> exp_set;
  std::size_t exp_workers = 0;
  bool exp_quiet = false;
  exp->add_option("--config", exp_config, "key = value configuration file")->required();
  exp->add_option("--set", exp_set, "Override a config key (key=value); repeatable");
  exp->add_option("--out", exp_out, "Output prefix (default: config 'output' or $MTD_OUTPUT_DIR/experiment)");
  exp->add_option("--workers", exp_workers, "Worker threads (overrides config)");
  exp->add_flag("--quiet", exp_quiet, "No progress output");

  // plot
  auto* plot = app.add_subcommand("plot", "Render a summary CSV to an SVG line chart");
  std::string plot_in, plot_out, plot_title;
  plot->add_option("--in", plot_in, "Summary CSV from 'experiment'")->required();
  plot->add_option("--out", plot_out, "SVG output (default: input path with .svg)");
  plot->add_option("--title", plot_title, "Chart title");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      mtd::MeasurementSpec spec;
      mtd::Vector x;
      if (!sim_signal.empty()) {
        x = read_signal(sim_signal);
        mtd::require(static_cast<std::size_t>(x.size()) == sim_L, "signal length does not match --L");
      } else {
        mtd::Rng rng(mtd::derive_seed(sim_seed, 0x516E41ULL));
        x = mtd::random_unit_signal(sim_L, rng);
      }
      double sigma2 = 0.0;
      if (*opt_snr)
        sigma2 = mtd::sigma_for_snr(x, sim_L, sim_snr);
      else if (*opt_sigma2)
        sigma2 = sim_sigma2;
      if (*opt_gamma)
        spec = mtd::MeasurementSpec::from_density(sim_N, sim_L, sim_gamma, sigma2, sim_seed);
      else {
        mtd::require(static_cast<bool>(*opt_p), "one of --p or --gamma is required");
        spec = mtd::MeasurementSpec{sim_N, sim_L, sim_p, sigma2, sim_seed};
      }
      const auto m = mtd::synthesize(x, spec);
      const std::string out_path = sim_out.empty() ? default_path("measurement.txt") : sim_out;
      const std::string sig_path = sim_signal_out.empty() ? default_path("signal.csv") : sim_signal_out;
      {
        auto out = open_out(out_path);
        mtd::write_measurement(out, m);
      }
      write_signal(sig_path, x);
      std::cout << "N=" << spec.N << " L=" << spec.L << " p=" << spec.p << " gamma=" << spec.gamma()
                << " sigma2=" << spec.sigma2 << " seed=" << spec.seed << "\n"
                << "measurement: " << out_path << "\nsignal: " << sig_path << "\n";
    } else if (*mom) {
      const auto m = load_measurement(mom_in);
      const auto em = mom_kind == "full" ? mtd::empirical_moments(m.y, m.spec.L)
                                         : mtd::window_mean_moments(m.y, m.spec.L, parse_window(mom_window));
      if (mom_out.empty()) {
        mtd::write_moments_csv(std::cout, em);
      } else {
        auto out = open_out(mom_out);
        mtd::write_moments_csv(out, em);
      }
    } else if (*cov) {
      const auto m = load_measurement(cov_in);
      mtd::CovarianceOptions co;
      co.stride = cov_stride;
      co.workers = cov_workers;
      co.convention = parse_window(cov_window);
      const auto est = mtd::estimate_covariance(m.y, m.spec.L, co);
      const auto W = mtd::weight_matrix(est);
      const std::string s_path = cov_S_out.empty() ? default_path("S.bin") : cov_S_out;
      const std::string w_path = cov_W_out.empty() ? default_path("W.bin") : cov_W_out;
      {
        auto out = open_out(s_path, std::ios::binary);
        mtd::write_matrix_file(out, est.S, m.spec.L, cov_stride);
      }
      {
        auto out = open_out(w_path, std::ios::binary);
        mtd::write_matrix_file(out, W.W, m.spec.L, cov_stride);
      }
      Eigen::SelfAdjointEigenSolver<mtd::Matrix> eig(est.S, Eigen::EigenvaluesOnly);
      std::cout << "d=" << est.S.rows() << " windows=" << est.window_count << " stride=" << est.stride
                << " min_eigenvalue=" << eig.eigenvalues().minCoeff()
                << " max_eigenvalue=" << eig.eigenvalues().maxCoeff() << " regularization=" << W.regularization
                << " condition=" << W.condition_number << "\nS: " << s_path << "\nW: " << w_path << "\n";
    } else if (*rec) {
      const auto m = load_measurement(rec_in);
      mtd::RecoverOptions ro;
      ro.optimizer.n_starts = rec_starts;
      ro.optimizer.gamma_init = rec_gamma_init;
      ro.optimizer.max_iterations = rec_max_iter;
      ro.optimizer.gradient_tolerance = rec_tol;
      ro.optimizer.ls_warm_start = !rec_no_warm;
      ro.covariance.stride = rec_stride;
      ro.covariance.workers = rec_workers;
      ro.covariance.convention = parse_window(rec_window);
      const auto method = mtd::parse_objective_kind(rec_method);
      std::optional<mtd::Vector> truth;
      if (!rec_truth.empty()) {
        truth = read_signal(rec_truth);
        mtd::require(static_cast<std::size_t>(truth->size()) == m.spec.L, "truth length does not match L");
      }

      mtd::Estimate est;
      if (method == mtd::ObjectiveKind::Gmm && !rec_W.empty()) {
        auto in = open_in(rec_W, std::ios::binary);
        auto wf = mtd::read_matrix_file(in);
        mtd::require(wf.L == m.spec.L, "weight matrix L does not match the measurement");
        mtd::WeightMatrix W;
        W.W = wf.matrix;
        auto spec = mtd::ObjectiveSpec::gmm(mtd::window_mean_moments(m.y, m.spec.L, ro.covariance.convention),
                                            mtd::NoiseModel(m.spec.sigma2), std::move(W));
        est = mtd::recover(spec, ro.optimizer, rec_seed, truth);
      } else {
        est = mtd::recover(m, method, ro, rec_seed, truth);
      }
      const auto j = mtd::estimate_to_json(est);
      if (rec_out.empty()) {
        std::cout << j.dump(2) << "\n";
      } else {
        auto out = open_out(rec_out);
        out << j.dump(2) << "\n";
      }
      std::cerr << "method=" << rec_method << " objective=" << est.objective_value
                << " gamma=" << est.theta_hat.gamma;
      if (est.relative_error)
        std::cerr << " relative_error=" << *est.relative_error;
      std::cerr << "\n";
      if (est.relative_error)
        std::cout << "relative_error=" << *est.relative_error << "\n";
    } else if (*exp) {
      auto in = open_in(exp_config);
      auto cfg = mtd::parse_config(in);
      for (const auto& kv : exp_set) {
        const auto eq = kv.find('=');
        mtd::require(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
        mtd::apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (exp_workers > 0)
        cfg.workers = exp_workers;
      std::string prefix = exp_out.empty() ? cfg.output : exp_out;
      if (prefix.empty())
        prefix = default_path("experiment");

      const auto res = mtd::run_experiment(cfg, [&](std::size_t done, std::size_t total) {
        if (!exp_quiet)
          std::cerr << "\r" << done << "/" << total << " cells" << std::flush;
      });
      if (!exp_quiet)
        std::cerr << "\n";
      {
        auto out = open_out(prefix + ".csv");
        mtd::write_results_csv(out, res.rows, cfg.sweep);
      }
      {
        auto out = open_out(prefix + ".summary.csv");
        mtd::write_summary_csv(out, res.summary, cfg.sweep);
      }
      {
        auto out = open_out(prefix + ".timing.csv");
        mtd::write_timing_csv(out, res.rows);
      }
      mtd::write_summary_csv(std::cout, res.summary, cfg.sweep);
    } else if (*plot) {
      auto in = open_in(plot_in);
      mtd::SweepVariable sweep = mtd::SweepVariable::N;
      const auto rows = mtd::read_summary_csv(in, sweep);
      std::string path = plot_out;
      if (path.empty())
        path = fs::path(plot_in).replace_extension(".svg").string();
      auto out = open_out(path);
      out << mtd::render_svg(rows, sweep, plot_title);
      std::cout << "plot: " << path << "\n";
    }
  } catch (const mtd::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mtd::RecoveryError& e) {
    std::cerr << "error: " << e.what() << " (" << e.starts().size() << " starts)\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
