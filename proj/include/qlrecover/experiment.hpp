#ifndef QLRECOVER_EXPERIMENT_HPP
#define QLRECOVER_EXPERIMENT_HPP

// Orchestration behind the command-line verbs: build the model, obtain the
// data M, run the requested operation and write the artifacts.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "qlrecover/config.hpp"
#include "qlrecover/io.hpp"

namespace qlr {

using Json = nlohmann::ordered_json;

enum class Verb { Recover, Forward, Scan, Probe, Validate };

inline std::string to_string(Verb v) {
  switch (v) {
  case Verb::Recover: return "recover";
  case Verb::Forward: return "forward";
  case Verb::Scan: return "scan";
  case Verb::Probe: return "probe";
  case Verb::Validate: return "validate";
  }
  return "?";
}

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitIo = 4 };

struct RunArtifacts {
  int exit_code = kExitOk;
  std::string status = "ok";
  fs::path report;
  std::optional<fs::path> trajectory;
  std::optional<fs::path> u0;
  std::optional<fs::path> convergence;
  std::optional<fs::path> scan;
  std::optional<fs::path> probe;
  std::vector<fs::path> plots;
};

/// JSON text of a number that is NaN/inf safe (null for non-finite).
inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json json_vector(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

inline std::string render_json(const Json& j) { return j.dump(2) + "\n"; }

/// Structured failure record; `category` is config, numerical or io.
inline Json failure_report(const std::string& verb, const std::string& category, const std::string& message,
                           std::optional<double> sigma_min = std::nullopt) {
  Json j;
  j["status"] = "failure";
  j["verb"] = verb;
  j["category"] = category;
  j["message"] = message;
  if (sigma_min) j["sigma_min"] = json_number(*sigma_min);
  return j;
}

inline std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

/// cos(mode pi x / length): Neumann eigenvector shape.
inline Field cosine_profile(const Grid1D& grid, int mode) {
  const Field x = grid.nodes();
  return (mode * std::numbers::pi * x.array() / grid.length).cos().matrix();
}

inline Field manufactured_u0(const ExperimentConfig& c, const QuasilinearModel& model) {
  if (c.data.profile == DataProfile::RandomSmooth) {
    std::mt19937_64 rng(c.seed);
    return (random_smooth_field(model, rng, c.data.amplitude).array() + c.data.offset).matrix();
  }
  return (c.data.amplitude * cosine_profile(model.grid(), c.data.mode).array() + c.data.offset).matrix();
}

struct ObservedData {
  Field M;
  std::optional<Field> truth;
};

inline ObservedData observed_data(const ExperimentConfig& c, const QuasilinearModel& model,
                                  const AveragingCondition& cond) {
  ObservedData d;
  switch (c.data.source) {
  case DataSource::Zero: d.M = Field::Zero(model.size()); break;
  case DataSource::File: {
    d.M = read_field_csv(c.base_dir / c.data.path);
    if (d.M.size() != model.size())
      throw ConfigError("data.path: file holds " + std::to_string(d.M.size()) + " values, grid has " +
                        std::to_string(model.size()));
    break;
  }
  case DataSource::Manufactured: {
    const Field u0 = manufactured_u0(c, model);
    d.M = manufacture(model, cond, u0).M;
    d.truth = u0;
    break;
  }
  }
  return d;
}

/// Geometric amplitudes min..max (min = 0 gives a leading zero row and a
/// geometric tail starting at max * 1e-4).
inline std::vector<double> scan_amplitudes(const ScanSection& s) {
  std::vector<double> a;
  double lo = s.min;
  int count = s.count;
  if (lo == 0.0) {
    a.push_back(0.0);
    lo = s.max * 1e-4;
    --count;
  }
  for (int k = 0; k < count; ++k)
    a.push_back(count == 1 ? s.max : lo * std::pow(s.max / lo, static_cast<double>(k) / (count - 1)));
  a.back() = s.max;
  return a;
}

/// Scan direction: the data profile itself, or its image under the averaging
/// operator of the frozen generator A(0), scaled.
inline Field scan_direction(const ExperimentConfig& c, const QuasilinearModel& model, const AveragingCondition& cond) {
  const Field shape = cosine_profile(model.grid(), c.data.mode);
  if (c.scan.direction == ScanDirection::Raw) return c.scan.direction_scale * shape;
  const auto U = build_propagator(OperatorPath::constant(cond.grid, model.assemble_A(Field::Zero(model.size()))),
                                  c.solver.method, c.solver.scheme);
  return c.scan.direction_scale * (condition_matrix(U, cond) * shape);
}

inline Json config_summary(const ExperimentConfig& c) {
  Json j;
  j["model"] = to_string(c.model.kind);
  j["n"] = c.grid.n;
  j["length"] = c.grid.length;
  j["bc"] = to_string(c.grid.bc);
  j["T"] = c.time.T;
  j["K"] = c.time.K;
  j["variant"] = to_string(c.condition.variant);
  j["weight"] = to_string(c.condition.weight);
  j["w0"] = c.condition.w0;
  j["method"] = to_string(c.solver.method);
  j["data"] = to_string(c.data.source);
  j["seed"] = c.seed;
  return j;
}

inline Json solve_report_json(const SolveReport& r) {
  Json j;
  j["converged"] = r.converged;
  j["iterates"] = r.iterates;
  j["residual"] = json_number(r.residual);
  j["ball_exits"] = r.ball_exits;
  j["failure"] = r.failure;
  j["distances"] = json_vector(r.distances);
  j["contraction_estimates"] = json_vector(r.contraction_estimates);
  j["sigma_min"] = json_vector(r.sigma_min_history);
  return j;
}

inline CsvTable convergence_table(const SolveReport& r) {
  CsvTable t;
  t.header = {"iteration", "distance", "contraction", "sigma_min"};
  for (std::size_t k = 0; k < r.distances.size(); ++k) {
    const std::string q = k == 0 || k - 1 >= r.contraction_estimates.size() ? "nan" : csv_number(r.contraction_estimates[k - 1]);
    const std::string s = k < r.sigma_min_history.size() ? csv_number(r.sigma_min_history[k]) : "nan";
    t.rows.push_back({std::to_string(k + 1), csv_number(r.distances[k]), q, s});
  }
  return t;
}

inline CsvTable scan_table_csv(const ScanTable& s) {
  CsvTable t;
  t.header = {"amplitude", "converged", "iterations", "final_contraction", "failure"};
  for (const auto& r : s.rows)
    t.rows.push_back({csv_number(r.amplitude), r.converged ? "1" : "0", std::to_string(r.iterations),
                      std::isfinite(r.final_contraction) ? csv_number(r.final_contraction) : "nan",
                      sanitize_cell(r.failure)});
  return t;
}

namespace detail {

inline void emit_plot(RunArtifacts& a, const fs::path& dir, PlotKind kind, const std::string& csv_name, int n = 0,
                      int K = 0) {
  if (!fs::exists(dir / csv_name)) throw IoError("plot script: missing artifact " + (dir / csv_name).string());
  const std::string stem = fs::path(csv_name).stem().string();
  const fs::path p = dir / ("plot_" + stem + ".py");
  write_atomic(p, plot_script(kind, csv_name, n, K));
  a.plots.push_back(p);
}

inline void finish(RunArtifacts& a, const fs::path& dir, const Json& report) {
  a.report = dir / "report.json";
  write_atomic(a.report, render_json(report));
}

} // namespace detail

/// Runs one verb. Solver and model failures become a failure report with
/// exit code 3; configuration errors propagate as ConfigError and I/O errors
/// as IoError.
inline RunArtifacts run_experiment(const ExperimentConfig& c, Verb verb, const fs::path& out_dir) {
  RunArtifacts a;
  const ModelPtr model = build_model(c);
  const AveragingCondition cond = build_condition(c);
  const TimeGrid& g = cond.grid;
  Json report;
  report["status"] = "ok";
  report["verb"] = to_string(verb);
  report["config"] = config_summary(c);

  try {
    switch (verb) {
    case Verb::Validate: {
      Json checks = Json::array();
      for (const auto& e : validate_exponents(*model).entries) checks.push_back({{"check", e.name}, {"pass", e.pass}});
      report["exponent_checks"] = checks;
      break;
    }
    case Verb::Forward: {
      if (c.data.source != DataSource::Manufactured)
        throw ConfigError("data.source: forward needs a manufactured u0 specification");
      const Field u0 = manufactured_u0(c, *model);
      const Trajectory u = forward_solve(*model, u0, g);
      a.trajectory = out_dir / "trajectory.csv";
      write_trajectory_csv(u, *a.trajectory);
      detail::emit_plot(a, out_dir, PlotKind::Trajectory, "trajectory.csv", model->size(), g.K);
      report["self_convergence_error"] = json_number(self_convergence_error(*model, u0, g));
      const Field M = apply_condition(cond, u);
      report["M"] = json_vector(std::vector<double>(M.data(), M.data() + M.size()));
      break;
    }
    case Verb::Recover: {
      const ObservedData d = observed_data(c, *model, cond);
      const RecoveryResult r = fixed_point_recover(*model, cond, d.M, c.solver);
      a.u0 = out_dir / "u0.csv";
      write_field_csv(model->grid(), r.u0, "u0", *a.u0);
      a.trajectory = out_dir / "trajectory.csv";
      write_trajectory_csv(r.trajectory, *a.trajectory);
      a.convergence = out_dir / "convergence.csv";
      write_atomic(*a.convergence, convergence_table(r.report).render());
      detail::emit_plot(a, out_dir, PlotKind::Trajectory, "trajectory.csv", model->size(), g.K);
      detail::emit_plot(a, out_dir, PlotKind::Convergence, "convergence.csv");
      report["solve"] = solve_report_json(r.report);
      if (d.truth) {
        const double nt = d.truth->norm();
        report["truth_error"] = json_number(nt > 0.0 ? (r.u0 - *d.truth).norm() / nt : (r.u0 - *d.truth).norm());
        report["self_convergence_error"] = json_number(self_convergence_error(*model, *d.truth, g));
      }
      if (!r.report.converged) {
        report["status"] = "failure";
        report["category"] = "numerical";
        report["message"] = r.report.failure;
        a.exit_code = kExitNumerical;
      }
      break;
    }
    case Verb::Scan: {
      const Field dir = scan_direction(c, *model, cond);
      const ScanTable t = smallness_scan(*model, cond, dir, scan_amplitudes(c.scan), c.solver);
      a.scan = out_dir / "scan.csv";
      write_atomic(*a.scan, scan_table_csv(t).render());
      detail::emit_plot(a, out_dir, PlotKind::Scan, "scan.csv");
      report["monotone"] = t.monotone();
      const auto best = t.largest_converged();
      report["largest_converged"] = best ? Json(*best) : Json(nullptr);
      break;
    }
    case Verb::Probe: {
      const ObservedData d = observed_data(c, *model, cond);
      const ContractionReport p = contraction_probe(*model, cond, d.M, c.solver, c.probe_trials, c.seed);
      CsvTable t;
      t.header = {"trial", "last_ratio", "u0_norm"};
      for (int k = 0; k < p.trials; ++k)
        t.rows.push_back({std::to_string(k + 1), csv_number(p.last_ratios[k]), csv_number(p.limits[k].norm())});
      a.probe = out_dir / "probe.csv";
      write_atomic(*a.probe, t.render());
      report["all_converged"] = p.all_converged;
      report["max_pairwise_distance"] = json_number(p.max_pairwise_distance);
      report["last_ratios"] = json_vector(p.last_ratios);
      if (!p.all_converged) {
        report["status"] = "failure";
        report["category"] = "numerical";
        report["message"] = "contraction_probe: at least one trial did not converge";
        a.exit_code = kExitNumerical;
      }
      break;
    }
    }
  } catch (const SingularOperatorError& e) {
    report = failure_report(to_string(verb), "numerical", e.what(), e.sigma_min());
    report["config"] = config_summary(c);
    a.exit_code = kExitNumerical;
  } catch (const NumericalError& e) {
    report = failure_report(to_string(verb), "numerical", e.what());
    report["config"] = config_summary(c);
    a.exit_code = kExitNumerical;
  } catch (const ModelError& e) {
    report = failure_report(to_string(verb), "numerical", e.what());
    report["config"] = config_summary(c);
    a.exit_code = kExitNumerical;
  }
  a.status = report["status"].get<std::string>();
  detail::finish(a, out_dir, report);
  return a;
}

} // namespace qlr

#endif // QLRECOVER_EXPERIMENT_HPP
