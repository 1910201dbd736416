#ifndef QLRECOVER_SOLVER_HPP
#define QLRECOVER_SOLVER_HPP

// Fixed-point recovery of u(0) from a nonlocal observation, the IMEX forward
// solver used to manufacture data, and the convergence diagnostics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qlrecover/evolution.hpp"
#include "qlrecover/models.hpp"
#include "qlrecover/nonlocal.hpp"
#include "qlrecover/trajectory.hpp"

namespace qlr {

/// Orders are H-orders: order_xi = 2 xi, order_beta = 2 beta.
struct WeightedNormSpec {
  double mu = 0.0;
  double order_xi = 0.0;
  double order_beta = 0.0;
  double rho = 0.5;

  static WeightedNormSpec from_book(const ExponentBook& b) { return {b.mu, 2.0 * b.xi, 2.0 * b.beta, b.rho}; }
};

struct RecoveryConfig {
  int max_iters = 50;
  double tol = 1e-10;
  double relaxation = 1.0;
  double ball_L = 0.5;
  double sigma_floor = kDefaultSigmaFloor;
  PropagatorMethod method = PropagatorMethod::Stepper;
  StepScheme scheme = StepScheme::CrankNicolson;
  double path_rho = 0.5;  // Hoelder exponent declared on A(u(.)) for the series quadrature

  void validate(const QuasilinearModel& model) const {
    if (max_iters < 1) throw ConfigError("solver.max_iters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("solver.tol must be positive");
    if (!(relaxation > 0.0 && relaxation <= 1.0)) throw ConfigError("solver.relaxation must lie in (0, 1]");
    if (!(ball_L > 0.0 && ball_L < std::min(model.ball_radius(), 1.0)))
      throw ConfigError("solver.ball_L must lie in (0, min{r0, 1})");
    if (!(sigma_floor > 0.0)) throw ConfigError("solver.sigma_floor must be positive");
    if (!(path_rho > 0.0 && path_rho < 1.0)) throw ConfigError("solver.path_rho must lie in (0, 1)");
  }
};

struct SolveReport {
  int iterates = 0;
  std::vector<double> distances;
  std::vector<double> contraction_estimates;
  std::vector<double> sigma_min_history;
  double residual = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int ball_exits = 0;  // iterates whose sup beta-norm exceeded ball_L
  std::string failure;
};

struct RecoveryResult {
  Field u0;
  Trajectory trajectory;
  SolveReport report;
};

/// d(u, v) = max_{j>=1} t_j^mu |d_j|_xi + Hoelder quotient of d in the beta
/// order over adjacent and dyadic node pairs + max_j |d_j|_beta, d = u - v.
inline double weighted_distance(const Trajectory& u, const Trajectory& v, const WeightedNormSpec& spec,
                                const SobolevScale& scale) {
  require_same_grid(u.grid, v.grid, "weighted_distance");
  if (u.size() != v.size() || u.size() != scale.base->size())
    throw ContractViolation("weighted_distance: dimension mismatch");
  const BaseOperator& b = *scale.base;
  const Matrix coeff = b.eigenvectors.transpose() * (u.states - v.states);
  const double sq = std::sqrt(b.grid.spacing);
  const Field wx = ((scale.shift - b.eigenvalues.array()).pow(0.5 * spec.order_xi) * sq).matrix();
  const Field wb = ((scale.shift - b.eigenvalues.array()).pow(0.5 * spec.order_beta) * sq).matrix();
  const Matrix cb = wb.asDiagonal() * coeff;
  const TimeGrid& g = u.grid;

  double cmu = 0.0, sup_beta = 0.0, holder = 0.0;
  for (int j = 0; j <= g.K; ++j) {
    sup_beta = std::max(sup_beta, cb.col(j).norm());
    if (j >= 1) cmu = std::max(cmu, std::pow(g.node(j), spec.mu) * wx.cwiseProduct(coeff.col(j)).norm());
  }
  for (int stride = 1; stride <= g.K; stride *= 2)
    for (int j = 0; j + stride <= g.K; ++j) {
      const double dt = g.node(j + stride) - g.node(j);
      holder = std::max(holder, (cb.col(j + stride) - cb.col(j)).norm() / std::pow(dt, spec.rho));
    }
  return cmu + holder + sup_beta;
}

inline double weighted_distance(const Trajectory& u, const Trajectory& v, const QuasilinearModel& model) {
  return weighted_distance(u, v, WeightedNormSpec::from_book(model.exponents()), model.scale());
}

inline OperatorPath operator_path(const QuasilinearModel& model, const Trajectory& u, double rho) {
  std::vector<Matrix> mats;
  mats.reserve(u.grid.K + 1);
  for (int j = 0; j <= u.grid.K; ++j) mats.push_back(model.assemble_A(u.state(j)));
  return OperatorPath(u.grid, std::move(mats), rho);
}

inline Trajectory forcing_trajectory(const QuasilinearModel& model, const Trajectory& u) {
  Trajectory f(u.grid, u.size());
  for (int j = 0; j <= u.grid.K; ++j) f.state(j) = model.evaluate_f(u.state(j));
  return f;
}

struct IterateResult {
  Trajectory next;
  Field xi;
  double sigma_min = 0.0;
};

/// One application of the fixed-point map:
/// u -> U(t,0) Xi(u) + int_0^t U(t,s) f(u(s)) ds, relaxed by theta.
inline IterateResult iterate_step(const QuasilinearModel& model, const AveragingCondition& cond, const Field& M,
                                  const Trajectory& u, const RecoveryConfig& config) {
  require_same_grid(u.grid, cond.grid, "iterate_once");
  if (u.size() != model.size() || M.size() != model.size())
    throw ContractViolation("iterate_once: dimension mismatch");
  const OperatorPath path = operator_path(model, u, config.path_rho);
  const PropagatorTable U = build_propagator(path, config.method, config.scheme);
  const Trajectory N = duhamel_terms(U, forcing_trajectory(model, u));
  const InitialState xi = initial_state_from_duhamel(cond, U, M, N, config.sigma_floor);
  Trajectory next = assemble_trajectory(U, xi.value, N);
  if (config.relaxation != 1.0) next.states = config.relaxation * next.states + (1.0 - config.relaxation) * u.states;
  return {std::move(next), xi.value, xi.sigma_min};
}

inline Trajectory iterate_once(const QuasilinearModel& model, const AveragingCondition& cond, const Field& M,
                               const Trajectory& u, const RecoveryConfig& config) {
  return iterate_step(model, cond, M, u, config).next;
}

/// Relative defect of the discretised condition (absolute when M = 0).
inline double averaging_residual(const AveragingCondition& cond, const Trajectory& u, const Field& M) {
  const double defect = (apply_condition(cond, u) - M).norm();
  const double m = M.norm();
  return m > 0.0 ? defect / m : defect;
}

inline double sup_beta_norm(const QuasilinearModel& model, const Trajectory& u) {
  double s = 0.0;
  for (int j = 0; j <= u.grid.K; ++j) s = std::max(s, model.beta_norm(u.state(j)));
  return s;
}

/// Picard iteration from `start` until the weighted distance of successive
/// iterates drops below config.tol. Singular condition operators are fatal;
/// leaving the model's domain, blow-up or max_iters end the run unconverged.
inline RecoveryResult fixed_point_recover(const QuasilinearModel& model, const AveragingCondition& cond,
                                          const Field& M, const RecoveryConfig& config, const Trajectory& start) {
  config.validate(model);
  require_same_grid(start.grid, cond.grid, "fixed_point_recover");
  const WeightedNormSpec spec = WeightedNormSpec::from_book(model.exponents());
  RecoveryResult res;
  res.trajectory = start;
  SolveReport& rep = res.report;
  const double blowup = 1e3 * model.ball_radius();

  for (int k = 1; k <= config.max_iters; ++k) {
    IterateResult step;
    try {
      step = iterate_step(model, cond, M, res.trajectory, config);
    } catch (const SingularOperatorError&) {
      throw;
    } catch (const ModelError& e) {
      rep.failure = std::string("left model domain: ") + e.what();
      break;
    } catch (const NumericalError& e) {
      rep.failure = std::string("numerical failure: ") + e.what();
      break;
    }
    rep.iterates = k;
    rep.sigma_min_history.push_back(step.sigma_min);
    if (!step.next.states.allFinite()) {
      rep.failure = "non-finite iterate";
      break;
    }
    const double d = weighted_distance(step.next, res.trajectory, spec, model.scale());
    if (!rep.distances.empty() && rep.distances.back() > 0.0)
      rep.contraction_estimates.push_back(d / rep.distances.back());
    rep.distances.push_back(d);
    res.trajectory = std::move(step.next);
    const double sb = sup_beta_norm(model, res.trajectory);
    if (sb > config.ball_L) ++rep.ball_exits;
    if (d <= config.tol) {
      rep.converged = true;
      break;
    }
    if (!std::isfinite(d) || sb > blowup) {
      rep.failure = "iterates diverged";
      break;
    }
  }
  if (!rep.converged && rep.failure.empty()) rep.failure = "max_iters reached";
  res.u0 = res.trajectory.state(0);
  rep.residual = averaging_residual(cond, res.trajectory, M);
  return res;
}

inline RecoveryResult fixed_point_recover(const QuasilinearModel& model, const AveragingCondition& cond,
                                          const Field& M, const RecoveryConfig& config) {
  return fixed_point_recover(model, cond, M, config, Trajectory(cond.grid, model.size()));
}

/// Lagged-coefficient IMEX Euler: u_{j+1} = (I - h A(u_j))^{-1} (u_j + h f(u_j)).
inline Trajectory forward_solve(const QuasilinearModel& model, const Field& u0, const TimeGrid& grid) {
  if (u0.size() != model.size()) throw ContractViolation("forward_solve: u0 dimension mismatch");
  if (!model.in_ball(u0)) throw ModelError("forward_solve: u0 outside the model ball");
  const int n = model.size();
  const double h = grid.step();
  const Matrix I = Matrix::Identity(n, n);
  Trajectory u(grid, n);
  u.state(0) = u0;
  for (int j = 0; j < grid.K; ++j) {
    const Field uj = u.state(j);
    Eigen::PartialPivLU<Matrix> lu(I - h * model.assemble_A(uj));
    const double rc = lu.rcond();
    if (!(rc > 1e-14)) throw NumericalError("forward_solve: singular implicit matrix", rc);
    u.state(j + 1) = lu.solve(uj + h * model.evaluate_f(uj));
    if (!u.state(j + 1).allFinite()) throw NumericalError("forward_solve: non-finite state at step " + std::to_string(j + 1));
  }
  return u;
}

/// Richardson estimate of the relative forward error of the K-step solution:
/// E(h) = 2 max_j |u_K(t_j) - u_2K(t_2j)| / max_j |u_2K(t_j)|. The factor
/// 1 / (1 - 2^-p) with p = 1 is the formal order of the lagged IMEX scheme.
inline double self_convergence_error(const QuasilinearModel& model, const Field& u0, const TimeGrid& grid) {
  const Trajectory coarse = forward_solve(model, u0, grid);
  const Trajectory fine = forward_solve(model, u0, TimeGrid(grid.T, 2 * grid.K));
  double num = 0.0, den = 0.0;
  for (int j = 0; j <= grid.K; ++j) num = std::max(num, (coarse.state(j) - fine.state(2 * j)).norm());
  for (int j = 0; j <= 2 * grid.K; ++j) den = std::max(den, fine.state(j).norm());
  const double raw = den > 0.0 ? num / den : num;
  return 2.0 * raw;
}

struct ManufacturedData {
  Trajectory truth;
  Field M;
};

/// Observation of the forward IMEX solution under the discretised condition.
inline ManufacturedData manufacture(const QuasilinearModel& model, const AveragingCondition& cond, const Field& u0) {
  ManufacturedData d;
  d.truth = forward_solve(model, u0, cond.grid);
  d.M = apply_condition(cond, d.truth);
  return d;
}

struct ScanRow {
  double amplitude = 0.0;
  bool converged = false;
  int iterations = 0;
  double final_contraction = std::numeric_limits<double>::quiet_NaN();
  std::string failure;
};

struct ScanTable {
  std::vector<ScanRow> rows;

  /// Largest converged amplitude (empirical lower bound for the smallness threshold).
  std::optional<double> largest_converged() const {
    std::optional<double> best;
    for (const auto& r : rows)
      if (r.converged) best = r.amplitude;
    return best;
  }
  /// No converged row after an unconverged one.
  bool monotone() const {
    bool failed = false;
    for (const auto& r : rows) {
      if (!r.converged) failed = true;
      else if (failed) return false;
    }
    return true;
  }
};

inline ScanTable smallness_scan(const QuasilinearModel& model, const AveragingCondition& cond, const Field& direction,
                                const std::vector<double>& amplitudes, const RecoveryConfig& config) {
  for (std::size_t k = 0; k < amplitudes.size(); ++k) {
    if (!(amplitudes[k] >= 0.0)) throw ContractViolation("smallness_scan: amplitudes must be non-negative");
    if (k > 0 && !(amplitudes[k] > amplitudes[k - 1]))
      throw ContractViolation("smallness_scan: amplitudes must be ascending");
  }
  ScanTable t;
  for (double a : amplitudes) {
    ScanRow row;
    row.amplitude = a;
    try {
      const auto r = fixed_point_recover(model, cond, Field(a * direction), config);
      row.converged = r.report.converged;
      row.iterations = r.report.iterates;
      if (!r.report.contraction_estimates.empty()) row.final_contraction = r.report.contraction_estimates.back();
      row.failure = r.report.failure;
    } catch (const NumericalError& e) {
      row.failure = e.what();
    }
    t.rows.push_back(row);
  }
  return t;
}

/// Random start trajectory t -> (1 - t/T) p + (t/T) q with p, q smooth and
/// beta-norms at most half of `radius`.
inline Trajectory random_start(const QuasilinearModel& model, const TimeGrid& grid, double radius,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> frac(0.1, 0.5);
  const Field p = random_smooth_field(model, rng, radius * frac(rng));
  const Field q = random_smooth_field(model, rng, radius * frac(rng));
  Trajectory u(grid, model.size());
  for (int j = 0; j <= grid.K; ++j) {
    const double s = grid.node(j) / grid.T;
    u.state(j) = (1.0 - s) * p + s * q;
  }
  return u;
}

struct ContractionReport {
  int trials = 0;
  bool all_converged = true;
  double max_pairwise_distance = 0.0;
  std::vector<double> last_ratios;           // final contraction estimate per trial
  std::vector<std::vector<double>> ratios;   // full contraction history per trial
  std::vector<Field> limits;                 // recovered u0 per trial
};

inline ContractionReport contraction_probe(const QuasilinearModel& model, const AveragingCondition& cond,
                                           const Field& M, const RecoveryConfig& config, int trials,
                                           std::uint64_t seed = 0) {
  if (trials < 1) throw ContractViolation("contraction_probe: trials must be >= 1");
  std::mt19937_64 rng(seed);
  ContractionReport rep;
  rep.trials = trials;
  std::vector<Trajectory> limits;
  for (int k = 0; k < trials; ++k) {
    const Trajectory start = random_start(model, cond.grid, config.ball_L, rng);
    const auto r = fixed_point_recover(model, cond, M, config, start);
    rep.all_converged = rep.all_converged && r.report.converged;
    rep.ratios.push_back(r.report.contraction_estimates);
    rep.last_ratios.push_back(r.report.contraction_estimates.empty() ? 0.0 : r.report.contraction_estimates.back());
    rep.limits.push_back(r.u0);
    limits.push_back(r.trajectory);
  }
  for (std::size_t a = 0; a < limits.size(); ++a)
    for (std::size_t b = a + 1; b < limits.size(); ++b)
      rep.max_pairwise_distance = std::max(rep.max_pairwise_distance, weighted_distance(limits[a], limits[b], model));
  return rep;
}

} // namespace qlr

#endif // QLRECOVER_SOLVER_HPP
