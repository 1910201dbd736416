#ifndef QLRECOVER_EVOLUTION_HPP
#define QLRECOVER_EVOLUTION_HPP

// Discrete evolution operators U(t_i, t_j) for v' = A(t) v on a uniform time
// grid. Two independent constructions are provided:
//
//  * KernelSeries: U = a + a*w with the frozen semigroup a(t,s) = e^{(t-s)A(s)},
//    the commutator kernel k(t,s) = [A(t) - A(s)] a(t,s) and its Volterra
//    resolvent w = k + k*w;
//  * Stepper: products of one-step Backward Euler / Crank-Nicolson matrices.
//
// Time convolutions (F*G)(t_i, t_j) = int_{t_j}^{t_i} F(t_i,s) G(s,t_j) ds use
// weight h on the interior nodes j < m < i (midpoint coverage of
// [t_j + h/2, t_i - h/2]). The two end half-cells are integrated against the
// model singularity ((s - t_j)/h)^{rho-1}, scaled by the nearest interior
// node value, which gives the weight h 2^{-rho}/rho. A regular left factor
// (the frozen semigroup, a(t,t) = I) takes h/2 at its end instead. With no
// interior node (i = j+1) the single cell gets h B(rho,rho) when both factors
// are singular and h/rho when only the right factor is.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "qlrecover/spatial.hpp"
#include "qlrecover/trajectory.hpp"

namespace qlr {

/// Time-indexed generator matrices A(t_j), j = 0..K.
struct OperatorPath {
  TimeGrid grid;
  std::vector<Matrix> matrices;
  double holder_rho = 0.5;

  OperatorPath() = default;
  OperatorPath(const TimeGrid& g, std::vector<Matrix> mats, double rho)
      : grid(g), matrices(std::move(mats)), holder_rho(rho) {
    if (static_cast<int>(matrices.size()) != g.K + 1)
      throw ContractViolation("OperatorPath: need K+1 matrices");
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("OperatorPath: holder exponent must lie in (0,1)");
    const auto n = matrices.front().rows();
    for (const auto& m : matrices)
      if (m.rows() != n || m.cols() != n) throw ContractViolation("OperatorPath: matrices must share dimension");
    if (n > kMaxNodes) throw ConfigError("OperatorPath: dimension exceeds kMaxNodes");
  }

  static OperatorPath constant(const TimeGrid& g, const Matrix& A, double rho = 0.5) {
    return OperatorPath(g, std::vector<Matrix>(g.K + 1, A), rho);
  }

  int size() const { return static_cast<int>(matrices.front().rows()); }
  const Matrix& at(int j) const { return matrices.at(j); }
};

enum class PropagatorMethod { KernelSeries, Stepper };
enum class StepScheme { BackwardEuler, CrankNicolson };

inline std::string to_string(PropagatorMethod m) {
  return m == PropagatorMethod::KernelSeries ? "series" : "stepper";
}

/// U(t_i, t_j) for 0 <= j <= i <= K, stored as a packed lower triangle.
class PropagatorTable {
public:
  PropagatorTable() = default;
  PropagatorTable(const TimeGrid& g, int n, PropagatorMethod tag)
      : grid_(g), n_(n), method_(tag), blocks_(static_cast<std::size_t>(g.K + 1) * (g.K + 2) / 2) {}

  const TimeGrid& grid() const { return grid_; }
  int size() const { return n_; }
  int steps() const { return grid_.K; }
  PropagatorMethod method() const { return method_; }

  const Matrix& at(int i, int j) const { return blocks_[index(i, j)]; }
  Matrix& at(int i, int j) { return blocks_[index(i, j)]; }

private:
  std::size_t index(int i, int j) const {
    if (i < 0 || i > grid_.K || j < 0) throw ContractViolation("PropagatorTable: node index out of range");
    if (j > i) throw ContractViolation("PropagatorTable: U(t_i, t_j) requires j <= i");
    return static_cast<std::size_t>(i) * (i + 1) / 2 + j;
  }

  TimeGrid grid_;
  int n_ = 0;
  PropagatorMethod method_ = PropagatorMethod::Stepper;
  std::vector<Matrix> blocks_;
};

namespace detail {

// Blocks B(i, m) for m < i (or m <= i when `diag`), row i stored as one
// n x (count n) matrix so that a run of blocks is a contiguous column range.
struct RowBlocks {
  int n = 0;
  std::vector<Matrix> rows;
  auto block(int i, int m) const { return rows[i].middleCols(static_cast<Eigen::Index>(m) * n, n); }
  auto block(int i, int m) { return rows[i].middleCols(static_cast<Eigen::Index>(m) * n, n); }
};

// Blocks B(m, j) for m > j, column j stored as one ((K-j) n) x n matrix.
struct ColBlocks {
  int n = 0;
  std::vector<Matrix> cols;
  auto block(int m, int j) const {
    return cols[j].middleRows(static_cast<Eigen::Index>(m - j - 1) * n, n);
  }
  auto block(int m, int j) { return cols[j].middleRows(static_cast<Eigen::Index>(m - j - 1) * n, n); }
};

struct ConvolutionWeights {
  double h = 0.0;
  double end_singular = 0.0; // half-cell next to a singular endpoint
  double end_regular = 0.0;  // half-cell next to a regular endpoint
  double single_both = 0.0;  // i = j+1, both factors singular
  double single_right = 0.0; // i = j+1, only the right factor singular

  ConvolutionWeights(double step, double rho)
      : h(step), end_singular(step * std::pow(2.0, -rho) / rho), end_regular(0.5 * step),
        single_both(step * std::beta(rho, rho)), single_right(step / rho) {}
};

// (F*G)(t_i, t_j) for i > j. F rows must contain blocks m = j+1..i-1 and, if
// F is regular, F(i,i) = I is implied. G(m, j) is singular at m -> j.
inline Matrix convolve(const RowBlocks& F, bool f_singular, const ColBlocks& G, int i, int j,
                       const ConvolutionWeights& w) {
  const int n = F.n;
  const int interior = i - j - 1;
  if (interior == 0) {
    if (f_singular) return w.single_both * (F.block(i, j) * G.block(i, j));
    return w.single_right * Matrix(G.block(i, j));
  }
  const auto len = static_cast<Eigen::Index>(interior) * n;
  Matrix S = w.h * (F.rows[i].middleCols(static_cast<Eigen::Index>(j + 1) * n, len) * G.cols[j].topRows(len));
  S.noalias() += w.end_singular * (F.block(i, j + 1) * G.block(j + 1, j));
  if (f_singular) {
    S.noalias() += w.end_singular * (F.block(i, i - 1) * G.block(i - 1, j));
  } else {
    S += w.end_regular * G.block(i, j);
  }
  return S;
}

// a(i, m) = e^{(t_i - t_m) A(t_m)} for m <= i, built as powers of the
// one-step exponential e^{h A(t_m)} (the grid is uniform).
inline RowBlocks frozen_rows(const OperatorPath& path) {
  const int K = path.grid.K;
  const int n = path.size();
  const double h = path.grid.step();
  RowBlocks a;
  a.n = n;
  a.rows.resize(K + 1);
  for (int i = 0; i <= K; ++i) a.rows[i].resize(n, static_cast<Eigen::Index>(i + 1) * n);
  for (int m = 0; m <= K; ++m) {
    a.block(m, m).setIdentity();
    if (m == K) break;
    const Matrix E = matrix_exponential(path.at(m), h);
    a.block(m + 1, m) = E;
    for (int i = m + 2; i <= K; ++i) a.block(i, m).noalias() = E * a.block(i - 1, m);
  }
  return a;
}

inline RowBlocks kernel_rows(const OperatorPath& path, const RowBlocks& frozen) {
  const int K = path.grid.K;
  const int n = path.size();
  RowBlocks k;
  k.n = n;
  k.rows.resize(K + 1);
  for (int i = 0; i <= K; ++i) {
    k.rows[i].resize(n, static_cast<Eigen::Index>(i) * n);
    for (int m = 0; m < i; ++m) k.block(i, m).noalias() = (path.at(i) - path.at(m)) * frozen.block(i, m);
  }
  return k;
}

} // namespace detail

/// Commutator kernel k(t_i, t_j) and its Volterra resolvent w(t_i, t_j), j < i.
class KernelTable {
public:
  KernelTable() = default;

  const TimeGrid& grid() const { return grid_; }
  int size() const { return kernel_.n; }
  double singularity_exponent() const { return rho_ - 1.0; }
  double holder_rho() const { return rho_; }
  int iterations() const { return iterations_; }
  double last_increment() const { return last_increment_; }
  /// True when the kernel (hence the resolvent) is identically zero.
  bool vanishing() const { return vanishing_; }

  Matrix kernel(int i, int j) const {
    check(i, j);
    return kernel_.block(i, j);
  }
  Matrix resolvent(int i, int j) const {
    check(i, j);
    return resolvent_.block(i, j);
  }

  /// max_{i>j} (t_i - t_j)^{1-rho} ||w(t_i,t_j)||_2
  double weighted_resolvent_bound() const {
    double best = 0.0;
    for (int j = 0; j < grid_.K; ++j)
      for (int i = j + 1; i <= grid_.K; ++i)
        best = std::max(best, std::pow(grid_.node(i) - grid_.node(j), 1.0 - rho_) *
                                  operator_norm(resolvent_.block(i, j)));
    return best;
  }

  /// max_{i>j} (t_i - t_j)^{1-rho} ||k(t_i,t_j)||_2
  double weighted_kernel_bound() const {
    double best = 0.0;
    for (int i = 1; i <= grid_.K; ++i)
      for (int j = 0; j < i; ++j)
        best = std::max(best, std::pow(grid_.node(i) - grid_.node(j), 1.0 - rho_) *
                                  operator_norm(kernel_.block(i, j)));
    return best;
  }

  /// max-entry norm of w - k - k*w under the table's quadrature.
  double residual() const {
    const detail::ConvolutionWeights cw(grid_.step(), rho_);
    double r = 0.0;
    for (int j = 0; j < grid_.K; ++j)
      for (int i = j + 1; i <= grid_.K; ++i) {
        const Matrix d = resolvent_.block(i, j) - kernel_.block(i, j) -
                         detail::convolve(kernel_, true, resolvent_, i, j, cw);
        r = std::max(r, d.cwiseAbs().maxCoeff());
      }
    return r;
  }

private:
  friend KernelTable build_kernel_table(const OperatorPath&, const detail::RowBlocks&, double, int);

  void check(int i, int j) const {
    if (i < 0 || i > grid_.K || j < 0) throw ContractViolation("KernelTable: index out of range");
    if (j >= i) throw ContractViolation("KernelTable: kernel entries need j < i");
  }

  TimeGrid grid_;
  double rho_ = 0.5;
  detail::RowBlocks kernel_;
  detail::ColBlocks resolvent_;
  int iterations_ = 0;
  double last_increment_ = 0.0;
  bool vanishing_ = false;

public:
  const detail::ColBlocks& resolvent_blocks() const { return resolvent_; }
};

inline Matrix frozen_semigroup(const OperatorPath& path, int i, int j) {
  if (j > i) throw ContractViolation("frozen_semigroup: requires j <= i");
  if (i > path.grid.K || j < 0) throw ContractViolation("frozen_semigroup: index out of range");
  return matrix_exponential(path.at(j), path.grid.node(i) - path.grid.node(j));
}

inline Matrix commutator_kernel(const OperatorPath& path, int i, int j) {
  if (j >= i) throw ContractViolation("commutator_kernel: requires j < i");
  return (path.at(i) - path.at(j)) * frozen_semigroup(path, i, j);
}

inline KernelTable build_kernel_table(const OperatorPath& path, const detail::RowBlocks& frozen, double tol,
                                      int max_terms) {
  if (!(tol > 0.0)) throw ContractViolation("volterra_resolvent: tol must be positive");
  const int K = path.grid.K;
  const int n = path.size();
  KernelTable t;
  t.grid_ = path.grid;
  t.rho_ = path.holder_rho;
  t.kernel_ = detail::kernel_rows(path, frozen);

  detail::ColBlocks w;
  w.n = n;
  w.cols.resize(K + 1);
  for (int j = 0; j <= K; ++j) {
    w.cols[j].resize(static_cast<Eigen::Index>(K - j) * n, n);
    for (int i = j + 1; i <= K; ++i) w.block(i, j) = t.kernel_.block(i, j);
  }

  double kmax = 0.0;
  for (const auto& r : t.kernel_.rows)
    if (r.size() > 0) kmax = std::max(kmax, r.cwiseAbs().maxCoeff());
  if (kmax == 0.0) {
    // constant path: every convolution vanishes
    t.iterations_ = 1;
    t.last_increment_ = 0.0;
    t.resolvent_ = std::move(w);
    t.vanishing_ = true;
    return t;
  }

  const detail::ConvolutionWeights cw(path.grid.step(), path.holder_rho);
  detail::ColBlocks next = w;
  double increment = 0.0;
  for (int iter = 1; iter <= max_terms; ++iter) {
    increment = 0.0;
    for (int j = 0; j < K; ++j)
      for (int i = j + 1; i <= K; ++i) {
        auto blk = next.block(i, j);
        blk = t.kernel_.block(i, j) + detail::convolve(t.kernel_, true, w, i, j, cw);
        increment = std::max(increment, (blk - w.block(i, j)).cwiseAbs().maxCoeff());
      }
    std::swap(w, next);
    t.iterations_ = iter;
    t.last_increment_ = increment;
    if (!std::isfinite(increment)) break;
    if (increment <= tol) {
      t.resolvent_ = std::move(w);
      return t;
    }
  }
  throw NumericalError("volterra_resolvent: no convergence after " + std::to_string(max_terms) +
                           " iterations (last increment " + std::to_string(increment) + ")",
                       increment);
}

/// Default absolute tolerance: 1e-10 times the largest kernel entry.
inline double default_resolvent_tol(const detail::RowBlocks& kernel) {
  double scale = 0.0;
  for (const auto& r : kernel.rows)
    if (r.size() > 0) scale = std::max(scale, r.cwiseAbs().maxCoeff());
  return 1e-10 * std::max(scale, 1e-300);
}

inline KernelTable volterra_resolvent(const OperatorPath& path, double tol, int max_terms = 50) {
  return build_kernel_table(path, detail::frozen_rows(path), tol, max_terms);
}

inline KernelTable volterra_resolvent(const OperatorPath& path) {
  const auto frozen = detail::frozen_rows(path);
  return build_kernel_table(path, frozen, default_resolvent_tol(detail::kernel_rows(path, frozen)), 50);
}

namespace detail {

inline PropagatorTable series_from(const OperatorPath& path, const RowBlocks& frozen, const KernelTable& kt) {
  const int K = path.grid.K;
  const int n = path.size();
  PropagatorTable U(path.grid, n, PropagatorMethod::KernelSeries);
  const ConvolutionWeights cw(path.grid.step(), path.holder_rho);
  for (int i = 0; i <= K; ++i) {
    U.at(i, i) = Matrix::Identity(n, n);
    for (int j = 0; j < i; ++j) {
      U.at(i, j) = frozen.block(i, j);
      if (!kt.vanishing()) U.at(i, j) += convolve(frozen, false, kt.resolvent_blocks(), i, j, cw);
    }
  }
  return U;
}

} // namespace detail

/// U = a + a*w with the resolvent computed to absolute tolerance `tol`
/// (non-positive tol selects 1e-10 times the kernel scale).
inline PropagatorTable evolution_series(const OperatorPath& path, double tol = 0.0, int max_terms = 50) {
  const auto frozen = detail::frozen_rows(path);
  const double t = tol > 0.0 ? tol : default_resolvent_tol(detail::kernel_rows(path, frozen));
  const KernelTable kt = build_kernel_table(path, frozen, t, max_terms);
  return detail::series_from(path, frozen, kt);
}

/// One-step matrix S_j advancing t_j -> t_{j+1}.
inline Matrix step_matrix(const OperatorPath& path, int j, StepScheme scheme) {
  const int n = path.size();
  const double h = path.grid.step();
  const Matrix I = Matrix::Identity(n, n);
  const double c = scheme == StepScheme::BackwardEuler ? h : 0.5 * h;
  Eigen::PartialPivLU<Matrix> lu(I - c * path.at(j + 1));
  const double rc = lu.rcond();
  if (!(rc > 1e-14)) throw NumericalError("evolution_stepper: singular one-step matrix", rc);
  if (scheme == StepScheme::BackwardEuler) return lu.solve(I);
  return lu.solve(I + c * path.at(j));
}

inline PropagatorTable evolution_stepper(const OperatorPath& path, StepScheme scheme = StepScheme::CrankNicolson) {
  const int K = path.grid.K;
  const int n = path.size();
  PropagatorTable U(path.grid, n, PropagatorMethod::Stepper);
  std::vector<Matrix> S(K);
  for (int j = 0; j < K; ++j) S[j] = step_matrix(path, j, scheme);
  for (int i = 0; i <= K; ++i) {
    U.at(i, i) = Matrix::Identity(n, n);
    for (int j = 0; j < i; ++j) {
      if (j == i - 1) {
        U.at(i, j) = S[i - 1];
      } else {
        U.at(i, j).noalias() = S[i - 1] * U.at(i - 1, j);
      }
    }
  }
  return U;
}

inline PropagatorTable build_propagator(const OperatorPath& path, PropagatorMethod method,
                                        StepScheme scheme = StepScheme::CrankNicolson) {
  return method == PropagatorMethod::KernelSeries ? evolution_series(path) : evolution_stepper(path, scheme);
}

/// max_{i,j} ||U(t_i,t_j)U(t_j,t_m) - U(t_i,t_m)|| / ||U(t_i,t_m)|| over the given triples.
inline double cocycle_defect(const PropagatorTable& U, int i, int j, int m) {
  const Matrix lhs = U.at(i, j) * U.at(j, m);
  const Matrix& rhs = U.at(i, m);
  return operator_norm(lhs - rhs) / std::max(operator_norm(rhs), 1e-300);
}

struct HolderNorm {
  double seminorm = 0.0; // max ||A(t_i) - A(t_j)|| / (t_i - t_j)^rho
  double sup = 0.0;      // max ||A(t_j)||
  double value() const { return seminorm + sup; }
};

inline HolderNorm holder_seminorm(const OperatorPath& path, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ContractViolation("holder_seminorm: rho must lie in (0,1)");
  HolderNorm out;
  const int K = path.grid.K;
  for (int j = 0; j <= K; ++j) out.sup = std::max(out.sup, operator_norm(path.at(j)));
  for (int i = 1; i <= K; ++i)
    for (int j = 0; j < i; ++j) {
      const double d = operator_norm(path.at(i) - path.at(j));
      if (d > 0.0) out.seminorm = std::max(out.seminorm, d / std::pow(path.grid.node(i) - path.grid.node(j), rho));
    }
  return out;
}

struct PerturbationReport {
  double ratio_e0 = 0.0;         // max_t ||e^{tA} - e^{tB}|| / ||A - B||_{E1->E0}
  double ratio_e1 = 0.0;         // max_t t ||e^{tA} - e^{tB}||_{E0->E1} / ||A - B||_{E1->E0}
  double refined_ratio_e0 = 0.0; // same on the refined sample
  double refined_ratio_e1 = 0.0;
  bool bounded = true;           // refinement grew neither ratio by more than 2x
};

/// Empirical check of t^j ||e^{tA} - e^{tB}||_{L(E0,Ej)} <= M ||A - B||_{L(E1,E0)}, j = 0, 1,
/// with E1-norms realised by premultiplication with (shift - Delta).
inline PerturbationReport semigroup_perturbation_check(const Matrix& A, const Matrix& B, const std::vector<double>& ts,
                                                       const SobolevScale& scale) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw ContractViolation("perturbation check: dimension mismatch");
  if (ts.empty()) throw ContractViolation("perturbation check: empty time sample");
  const Matrix shifted = scale.shifted_operator();
  const double diff = operator_norm((A - B) * shifted.inverse());
  if (diff == 0.0) throw ContractViolation("perturbation check: A == B, ratio undefined");

  auto ratios = [&](const std::vector<double>& sample) {
    double r0 = 0.0, r1 = 0.0;
    for (double t : sample) {
      if (!(t > 0.0)) throw ContractViolation("perturbation check: times must be positive");
      const Matrix d = matrix_exponential(A, t) - matrix_exponential(B, t);
      r0 = std::max(r0, operator_norm(d) / diff);
      r1 = std::max(r1, t * operator_norm(shifted * d) / diff);
    }
    return std::pair{r0, r1};
  };

  std::vector<double> sorted = ts;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> refined{sorted.front() / 4.0, sorted.front() / 2.0};
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    refined.push_back(sorted[k]);
    if (k + 1 < sorted.size()) refined.push_back(0.5 * (sorted[k] + sorted[k + 1]));
  }

  PerturbationReport rep;
  std::tie(rep.ratio_e0, rep.ratio_e1) = ratios(sorted);
  std::tie(rep.refined_ratio_e0, rep.refined_ratio_e1) = ratios(refined);
  rep.bounded = rep.refined_ratio_e0 <= 2.0 * rep.ratio_e0 + 1e-14 && rep.refined_ratio_e1 <= 2.0 * rep.ratio_e1 + 1e-14;
  return rep;
}

// Binary propagator dump: little-endian u64 n, u64 K, f64 T, u64 method tag
// (0 = KernelSeries, 1 = Stepper), then U(t_i,t_j) for i = 0..K, j = 0..i,
// each row-major as f64.
namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((v >> (8 * k)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("propagator dump: truncated stream");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

inline void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

} // namespace detail

inline void write_propagator(std::ostream& os, const PropagatorTable& U) {
  detail::put_u64(os, static_cast<std::uint64_t>(U.size()));
  detail::put_u64(os, static_cast<std::uint64_t>(U.steps()));
  detail::put_f64(os, U.grid().T);
  detail::put_u64(os, U.method() == PropagatorMethod::KernelSeries ? 0u : 1u);
  for (int i = 0; i <= U.steps(); ++i)
    for (int j = 0; j <= i; ++j) {
      const Matrix& m = U.at(i, j);
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_f64(os, m(r, c));
    }
  if (!os) throw IoError("propagator dump: write failed");
}

inline PropagatorTable read_propagator(std::istream& is) {
  const auto n = detail::get_u64(is);
  const auto K = detail::get_u64(is);
  const double T = detail::get_f64(is);
  const auto tag = detail::get_u64(is);
  if (n == 0 || n > static_cast<std::uint64_t>(kMaxNodes) || K == 0 || K > 1u << 20 || tag > 1)
    throw IoError("propagator dump: malformed header");
  PropagatorTable U(TimeGrid(T, static_cast<int>(K)), static_cast<int>(n),
                    tag == 0 ? PropagatorMethod::KernelSeries : PropagatorMethod::Stepper);
  for (int i = 0; i <= static_cast<int>(K); ++i)
    for (int j = 0; j <= i; ++j) {
      Matrix m(n, n);
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = detail::get_f64(is);
      U.at(i, j) = std::move(m);
    }
  return U;
}

} // namespace qlr

#endif // QLRECOVER_EVOLUTION_HPP
