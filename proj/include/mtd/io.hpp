#ifndef MTD_IO_HPP
#define MTD_IO_HPP

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtd/estimate.hpp"

namespace mtd {

namespace detail {

inline nlohmann::json number_or_null(double v)
{
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json_array(const Eigen::Ref<const Vector>& v)
{
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    arr.push_back(number_or_null(v[i]));
  return arr;
}

inline nlohmann::json params_json(const Params& p)
{
  return {{"x", to_json_array(p.x)}, {"gamma", number_or_null(p.gamma)}};
}

} // namespace detail

/// JSON record of an estimate with its per-start table.
inline nlohmann::json estimate_to_json(const Estimate& e)
{
  nlohmann::json j;
  j["method"] = to_string(e.method);
  j["theta_hat"] = detail::params_json(e.theta_hat);
  j["objective"] = detail::number_or_null(e.objective_value);
  j["relative_error"] = e.relative_error ? detail::number_or_null(*e.relative_error) : nlohmann::json(nullptr);
  j["best_start"] = e.best_start;
  auto starts = nlohmann::json::array();
  for (const auto& s : e.starts)
    starts.push_back({{"seed", s.seed},
                      {"initial", detail::params_json(s.initial)},
                      {"final", detail::params_json(s.final_theta)},
                      {"final_objective", detail::number_or_null(s.final_objective)},
                      {"iterations", s.iterations},
                      {"status", to_string(s.status)},
                      {"converged", s.converged()}});
  j["starts"] = std::move(starts);
  return j;
}

inline Params params_from_json(const nlohmann::json& j)
{
  const auto& xs = j.at("x");
  Params p;
  p.x.resize(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    p.x[static_cast<Eigen::Index>(i)] = xs[i].is_null() ? std::nan("") : xs[i].get<double>();
  p.gamma = j.at("gamma").is_null() ? std::nan("") : j.at("gamma").get<double>();
  return p;
}

inline Estimate estimate_from_json(const nlohmann::json& j)
{
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  Estimate e;
  e.method = parse_objective_kind(j.at("method").get<std::string>());
  e.theta_hat = params_from_json(j.at("theta_hat"));
  e.objective_value = num(j.at("objective"));
  if (!j.at("relative_error").is_null())
    e.relative_error = j.at("relative_error").get<double>();
  e.best_start = j.at("best_start").get<std::size_t>();
  for (const auto& s : j.at("starts")) {
    StartRecord r;
    r.seed = s.at("seed").get<std::uint64_t>();
    r.initial = params_from_json(s.at("initial"));
    r.final_theta = params_from_json(s.at("final"));
    r.final_objective = num(s.at("final_objective"));
    r.iterations = s.at("iterations").get<std::size_t>();
    const auto status = s.at("status").get<std::string>();
    for (auto st : {BfgsStatus::Converged, BfgsStatus::MaxIterations, BfgsStatus::Stalled, BfgsStatus::Diverged})
      if (status == to_string(st))
        r.status = st;
    e.starts.push_back(std::move(r));
  }
  return e;
}

} // namespace mtd

#endif // MTD_IO_HPP
