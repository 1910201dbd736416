#ifndef QLRECOVER_NONLOCAL_HPP
#define QLRECOVER_NONLOCAL_HPP

// Observation operators for the nonlocal-in-time conditions and the maps
// that turn an observation M back into an initial state.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "qlrecover/evolution.hpp"
#include "qlrecover/trajectory.hpp"

namespace qlr {

enum class ConditionVariant { TimeAverage, InitialPlusAverage, TerminalDifference };

inline std::string to_string(ConditionVariant v) {
  switch (v) {
  case ConditionVariant::TimeAverage: return "time_average";
  case ConditionVariant::InitialPlusAverage: return "initial_plus_average";
  case ConditionVariant::TerminalDifference: return "terminal_difference";
  }
  return "?";
}

inline ConditionVariant parse_variant(const std::string& s) {
  if (s == "time_average") return ConditionVariant::TimeAverage;
  if (s == "initial_plus_average") return ConditionVariant::InitialPlusAverage;
  if (s == "terminal_difference") return ConditionVariant::TerminalDifference;
  throw ConfigError("unknown condition variant '" + s + "'");
}

inline const std::vector<ConditionVariant>& all_variants() {
  static const std::vector<ConditionVariant> v{ConditionVariant::TimeAverage, ConditionVariant::InitialPlusAverage,
                                               ConditionVariant::TerminalDifference};
  return v;
}

/// Named time weights. Ramp is w(t) = t/T; cosine is cos(2 pi t / T).
enum class WeightPreset { Constant, ExpDecay, Ramp, Cosine };

inline std::string to_string(WeightPreset p) {
  switch (p) {
  case WeightPreset::Constant: return "constant";
  case WeightPreset::ExpDecay: return "exp_decay";
  case WeightPreset::Ramp: return "ramp";
  case WeightPreset::Cosine: return "cosine";
  }
  return "?";
}

inline WeightPreset parse_weight_preset(const std::string& s) {
  if (s == "constant") return WeightPreset::Constant;
  if (s == "exp_decay") return WeightPreset::ExpDecay;
  if (s == "ramp") return WeightPreset::Ramp;
  if (s == "cosine") return WeightPreset::Cosine;
  throw ConfigError("unknown weight preset '" + s + "'");
}

inline Field sample_weight(WeightPreset p, const TimeGrid& g, double scale = 1.0) {
  Field w(g.K + 1);
  for (int j = 0; j <= g.K; ++j) {
    const double t = g.node(j);
    switch (p) {
    case WeightPreset::Constant: w(j) = 1.0; break;
    case WeightPreset::ExpDecay: w(j) = std::exp(-t); break;
    case WeightPreset::Ramp: w(j) = t / g.T; break;
    case WeightPreset::Cosine: w(j) = std::cos(2.0 * std::numbers::pi * t / g.T); break;
    }
  }
  return scale * w;
}

/// Weight samples, terminal weight and quadrature for one nonlocal condition.
struct AveragingCondition {
  ConditionVariant variant = ConditionVariant::TimeAverage;
  TimeGrid grid;
  Field weight;
  double w0 = 0.0;
  Field quad_weights;

  AveragingCondition() = default;
  AveragingCondition(ConditionVariant v, const TimeGrid& g, Field w, double terminal = 0.0)
      : variant(v), grid(g), weight(std::move(w)), w0(terminal), quad_weights(trapezoid_weights(g)) {
    if (weight.size() != g.K + 1) throw ConfigError("condition: weight needs K+1 samples");
    if (!weight.allFinite() || !std::isfinite(w0)) throw ConfigError("condition: non-finite weight");
    if (v == ConditionVariant::TimeAverage && weight(0) == 0.0)
      throw ConfigError("condition.weight: (a1) w(0) != 0 is required for time_average");
  }

  static AveragingCondition preset(ConditionVariant v, const TimeGrid& g, WeightPreset p, double w0 = 0.0) {
    return AveragingCondition(v, g, sample_weight(p, g), w0);
  }

  /// qw(j) w(t_j)
  Field effective_weights() const { return quad_weights.cwiseProduct(weight); }
};

inline void require_table_grid(const PropagatorTable& U, const AveragingCondition& c, const char* where) {
  require_same_grid(U.grid(), c.grid, where);
}

struct PhiOperator {
  Matrix matrix;
  AveragingCondition condition;
  double sigma_min = 0.0;

  static PhiOperator from_matrix(Matrix m, const AveragingCondition& c) {
    PhiOperator p;
    p.sigma_min = smallest_singular_value(m);
    p.matrix = std::move(m);
    p.condition = c;
    return p;
  }
};

namespace detail {

inline Matrix weighted_sum(const PropagatorTable& U, const Field& ew) {
  const int n = U.size();
  Matrix S = Matrix::Zero(n, n);
  for (int j = 0; j <= U.steps(); ++j)
    if (ew(j) != 0.0) S.noalias() += ew(j) * U.at(j, 0);
  return S;
}

} // namespace detail

/// Phi = sum_j qw(j) w(t_j) U(t_j, 0).
inline PhiOperator assemble_phi(const PropagatorTable& U, const AveragingCondition& c) {
  if (c.variant == ConditionVariant::TerminalDifference)
    throw ContractViolation("assemble_phi: terminal_difference has no averaging operator");
  require_table_grid(U, c, "assemble_phi");
  return PhiOperator::from_matrix(detail::weighted_sum(U, c.effective_weights()), c);
}

/// w0 U(T, 0) + sum_j qw(j) w(t_j) U(t_j, 0), for any variant.
inline PhiOperator assemble_phi_tilde(const PropagatorTable& U, const AveragingCondition& c) {
  require_table_grid(U, c, "assemble_phi_tilde");
  Matrix m = detail::weighted_sum(U, c.effective_weights());
  if (c.w0 != 0.0) m.noalias() += c.w0 * U.at(U.steps(), 0);
  return PhiOperator::from_matrix(std::move(m), c);
}

/// N(t_i) = sum_{j<=i} qw_i(j) U(t_i, t_j) g(t_j) with trapezoid weights on
/// [0, t_i]; column i of the result.
inline Trajectory duhamel_terms(const PropagatorTable& U, const Trajectory& g) {
  require_same_grid(U.grid(), g.grid, "duhamel_terms");
  if (g.size() != U.size()) throw ContractViolation("duhamel_terms: state dimension mismatch");
  const int K = U.steps();
  const double h = U.grid().step();
  Trajectory N(U.grid(), U.size());
  for (int i = 1; i <= K; ++i) {
    auto col = N.state(i);
    col.noalias() = 0.5 * h * (U.at(i, 0) * g.state(0));
    for (int j = 1; j < i; ++j) col.noalias() += h * (U.at(i, j) * g.state(j));
    col.noalias() += 0.5 * h * g.state(i);
  }
  return N;
}

inline Field psi_from_duhamel(const Trajectory& N, const AveragingCondition& c) {
  require_same_grid(N.grid, c.grid, "apply_psi");
  return N.states * c.effective_weights();
}

/// Psi g = sum_i qw(i) w(t_i) N(t_i).
inline Field apply_psi(const Trajectory& g, const PropagatorTable& U, const AveragingCondition& c) {
  require_table_grid(U, c, "apply_psi");
  return psi_from_duhamel(duhamel_terms(U, g), c);
}

/// Matrix whose inverse defines the initial-state map of each variant:
/// Phi, I + Phi, or I - w0 U(T, 0).
inline Matrix condition_matrix(const PropagatorTable& U, const AveragingCondition& c) {
  require_table_grid(U, c, "condition_matrix");
  const int n = U.size();
  switch (c.variant) {
  case ConditionVariant::TimeAverage: return detail::weighted_sum(U, c.effective_weights());
  case ConditionVariant::InitialPlusAverage:
    return Matrix::Identity(n, n) + detail::weighted_sum(U, c.effective_weights());
  case ConditionVariant::TerminalDifference: return Matrix::Identity(n, n) - c.w0 * U.at(U.steps(), 0);
  }
  return {};
}

inline constexpr double kDefaultSigmaFloor = 1e-10;

struct InitialState {
  Field value;
  double sigma_min = 0.0;
};

/// Xi from precomputed Duhamel terms N:
///   time_average          Phi^{-1} (M - Psi f)
///   initial_plus_average  (I + Phi)^{-1} (M - Psi f)
///   terminal_difference   (I - w0 U(T,0))^{-1} (M + w0 N(T))
/// Throws SingularOperatorError when sigma_min <= floor * ||R||_2.
inline InitialState initial_state_from_duhamel(const AveragingCondition& c, const PropagatorTable& U, const Field& M,
                                               const Trajectory& N, double sigma_floor = kDefaultSigmaFloor) {
  if (M.size() != U.size()) throw ContractViolation("initial_state_map: M dimension mismatch");
  const Matrix R = condition_matrix(U, c);
  Eigen::BDCSVD<Matrix> svd(R);
  const auto& sv = svd.singularValues();
  const double smax = sv(0), smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || !(smin > sigma_floor * smax)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, " operator is numerically singular (sigma_min = %.3e, sigma_max = %.3e)", smin, smax);
    throw SingularOperatorError("initial_state_map: " + to_string(c.variant) + buf, smin);
  }
  Field rhs;
  if (c.variant == ConditionVariant::TerminalDifference)
    rhs = M + c.w0 * N.state(N.steps());
  else
    rhs = M - psi_from_duhamel(N, c);
  return {R.partialPivLu().solve(rhs), smin};
}

inline Field initial_state_map(const AveragingCondition& c, const PropagatorTable& U, const Field& M,
                               const Trajectory& f_traj, double sigma_floor = kDefaultSigmaFloor) {
  return initial_state_from_duhamel(c, U, M, duhamel_terms(U, f_traj), sigma_floor).value;
}

/// u(t_j) = U(t_j, 0) x0 + N(t_j).
inline Trajectory assemble_trajectory(const PropagatorTable& U, const Field& x0, const Trajectory& N) {
  Trajectory u(U.grid(), U.size());
  for (int j = 0; j <= U.steps(); ++j) u.state(j) = U.at(j, 0) * x0 + N.state(j);
  return u;
}

/// Left-hand side of the discretised condition evaluated on a trajectory:
/// sum qw w u, u(0) + sum qw w u, or u(0) - w0 u(T).
inline Field apply_condition(const AveragingCondition& c, const Trajectory& u) {
  require_same_grid(u.grid, c.grid, "apply_condition");
  switch (c.variant) {
  case ConditionVariant::TimeAverage: return u.states * c.effective_weights();
  case ConditionVariant::InitialPlusAverage: return u.state(0) + u.states * c.effective_weights();
  case ConditionVariant::TerminalDifference: return u.state(0) - c.w0 * u.state(u.steps());
  }
  return {};
}

struct InvertibilityReport {
  double sigma_min = 0.0;
  double sigma_floor = 0.0;
  double norm = 0.0;
  double symmetry_defect = 0.0; // ||Phi - Phi^T||_max / ||Phi||_max
  bool symmetric = false;
  bool positive_definite = false;
  double min_eigenvalue = 0.0;  // of the symmetric part
  bool below_floor = false;
  std::vector<double> sigma_trend;
};

inline InvertibilityReport invertibility_report(const PhiOperator& phi, const std::vector<PhiOperator>& refinements = {},
                                                double sigma_floor = kDefaultSigmaFloor) {
  InvertibilityReport r;
  const Matrix& m = phi.matrix;
  r.sigma_min = phi.sigma_min;
  r.norm = operator_norm(m);
  r.sigma_floor = sigma_floor * r.norm;
  const double mx = m.cwiseAbs().maxCoeff();
  r.symmetry_defect = mx > 0.0 ? (m - m.transpose()).cwiseAbs().maxCoeff() / mx : 0.0;
  r.symmetric = r.symmetry_defect <= 1e-10;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  r.min_eigenvalue = es.eigenvalues().minCoeff();
  r.positive_definite = r.symmetric && r.min_eigenvalue > 0.0;
  r.below_floor = !(r.norm > 0.0) || r.sigma_min <= r.sigma_floor;
  for (const auto& p : refinements) r.sigma_trend.push_back(p.sigma_min);
  return r;
}

/// phi(lambda) = sum_j qw(j) w(t_j) e^{t_j lambda}, the averaging symbol on one eigenmode.
inline std::vector<double> spectral_phi_oracle(const std::vector<double>& eigs, const AveragingCondition& c) {
  if (c.variant == ConditionVariant::TerminalDifference)
    throw ContractViolation("spectral_phi_oracle: averaging variant required");
  const Field ew = c.effective_weights();
  std::vector<double> out;
  out.reserve(eigs.size());
  for (double lam : eigs) {
    double acc = 0.0;
    for (int j = 0; j <= c.grid.K; ++j) acc += ew(j) * std::exp(c.grid.node(j) * lam);
    out.push_back(acc);
  }
  return out;
}

/// ||(shift - Delta)(Phi_A - Phi_B)||_2 / |||A - B|||_rho.
inline double phi_lipschitz_probe(const OperatorPath& a, const OperatorPath& b, const AveragingCondition& c,
                                  const SobolevScale& scale, PropagatorMethod method = PropagatorMethod::Stepper) {
  require_same_grid(a.grid, b.grid, "phi_lipschitz_probe");
  if (a.size() != b.size()) throw ContractViolation("phi_lipschitz_probe: dimension mismatch");
  std::vector<Matrix> diff;
  diff.reserve(a.matrices.size());
  bool identical = true;
  for (std::size_t j = 0; j < a.matrices.size(); ++j) {
    diff.push_back(a.matrices[j] - b.matrices[j]);
    identical = identical && diff.back().cwiseAbs().maxCoeff() == 0.0;
  }
  if (identical) throw ContractViolation("phi_lipschitz_probe: identical paths");
  const double denom = holder_seminorm(OperatorPath(a.grid, diff, a.holder_rho), a.holder_rho).value();
  const PhiOperator pa = assemble_phi_tilde(build_propagator(a, method), c);
  const PhiOperator pb = assemble_phi_tilde(build_propagator(b, method), c);
  return operator_norm(scale.shifted_operator() * (pa.matrix - pb.matrix)) / denom;
}

} // namespace qlr

#endif // QLRECOVER_NONLOCAL_HPP
