#ifndef QLRECOVER_SPATIAL_HPP
#define QLRECOVER_SPATIAL_HPP

// One-dimensional finite-difference building blocks: grids, the base
// Laplacian with its eigendecomposition, spectral Sobolev norms and the
// dense matrix kernels (exponential, smallest singular value) used by the
// evolution and averaging code.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "qlrecover/errors.hpp"

namespace qlr {

using Matrix = Eigen::MatrixXd;
using Field = Eigen::VectorXd;

/// Largest spatial dimension accepted anywhere in the library.
inline constexpr int kMaxNodes = 256;

enum class BoundaryKind { Dirichlet, Neumann };

inline std::string to_string(BoundaryKind bc) {
  return bc == BoundaryKind::Dirichlet ? "dirichlet" : "neumann";
}

/// Uniform 1-D grid. Dirichlet grids hold the n interior vertices of
/// (0, length) with spacing length/(n+1); Neumann grids are cell-centred with
/// spacing length/n.
struct Grid1D {
  int n = 0;
  double length = 0.0;
  double spacing = 0.0;
  BoundaryKind bc = BoundaryKind::Neumann;

  double node(int i) const {
    return bc == BoundaryKind::Dirichlet ? (i + 1) * spacing : (i + 0.5) * spacing;
  }

  Field nodes() const {
    Field x(n);
    for (int i = 0; i < n; ++i) x(i) = node(i);
    return x;
  }
};

inline Grid1D build_grid(int n, double length, BoundaryKind bc) {
  if (n < 2) throw ConfigError("grid: n must be >= 2 (got " + std::to_string(n) + ")");
  if (n > kMaxNodes)
    throw ConfigError("grid: n must be <= " + std::to_string(kMaxNodes) + " (got " + std::to_string(n) + ")");
  if (!(length > 0.0) || !std::isfinite(length)) throw ConfigError("grid: length must be positive");
  Grid1D g;
  g.n = n;
  g.length = length;
  g.bc = bc;
  g.spacing = bc == BoundaryKind::Dirichlet ? length / (n + 1) : length / n;
  return g;
}

/// Discrete Laplacian with boundary condition applied, plus its spectral data.
/// Eigenvalues are sorted descending; `eigenvectors` columns are orthonormal in
/// the Euclidean inner product and match the eigenvalue order.
struct BaseOperator {
  Grid1D grid;
  Matrix matrix;
  Field eigenvalues;
  Matrix eigenvectors;

  int size() const { return grid.n; }
};

inline Matrix laplacian_matrix(const Grid1D& grid) {
  const int n = grid.n;
  const double inv_h2 = 1.0 / (grid.spacing * grid.spacing);
  Matrix L = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    L(i, i) = -2.0 * inv_h2;
    if (i > 0) L(i, i - 1) = inv_h2;
    if (i + 1 < n) L(i, i + 1) = inv_h2;
  }
  if (grid.bc == BoundaryKind::Neumann) {
    // ghost reflection u_{-1} = u_0, u_n = u_{n-1}
    L(0, 0) = -inv_h2;
    L(n - 1, n - 1) = -inv_h2;
  }
  return L;
}

inline BaseOperator assemble_laplacian(const Grid1D& grid) {
  BaseOperator op;
  op.grid = grid;
  op.matrix = laplacian_matrix(grid);
  Eigen::SelfAdjointEigenSolver<Matrix> es(op.matrix);
  if (es.info() != Eigen::Success) throw NumericalError("laplacian eigendecomposition failed");
  const int n = grid.n;
  op.eigenvalues.resize(n);
  op.eigenvectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    op.eigenvalues(k) = es.eigenvalues()(n - 1 - k);
    op.eigenvectors.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  return op;
}

/// Centred first difference consistent with the grid's boundary condition
/// (reflection for Neumann, zero ghost values for Dirichlet).
inline Matrix first_difference_matrix(const Grid1D& grid) {
  const int n = grid.n;
  const double c = 1.0 / (2.0 * grid.spacing);
  Matrix D = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (i + 1 < n) D(i, i + 1) += c;
    if (i > 0) D(i, i - 1) -= c;
  }
  if (grid.bc == BoundaryKind::Neumann) {
    D(0, 0) -= c;
    D(n - 1, n - 1) += c;
  }
  return D;
}

/// Solves (I - Delta) v = rhs through the stored eigendecomposition.
inline Field helmholtz_solve(const BaseOperator& base, const Field& rhs) {
  if (rhs.size() != base.size()) throw ContractViolation("helmholtz_solve: rhs length mismatch");
  Field coeff = base.eigenvectors.transpose() * rhs;
  coeff.array() /= (1.0 - base.eigenvalues.array());
  return base.eigenvectors * coeff;
}

/// Spectral scale of (shift - Delta); realises E_theta as discrete H^{2 theta}.
struct SobolevScale {
  std::shared_ptr<const BaseOperator> base;
  double shift = 1.0;

  SobolevScale() = default;
  SobolevScale(std::shared_ptr<const BaseOperator> b, double s = 1.0) : base(std::move(b)), shift(s) {
    if (!base) throw ContractViolation("SobolevScale: null base operator");
    if (!((shift - base->eigenvalues.maxCoeff()) > 0.0))
      throw ConfigError("SobolevScale: shift must exceed every eigenvalue of the base operator");
  }

  const Grid1D& grid() const { return base->grid; }

  /// (shift - Delta) as a dense matrix, the E0 -> E1 surrogate.
  Matrix shifted_operator() const {
    const int n = base->size();
    return shift * Matrix::Identity(n, n) - base->matrix;
  }

  /// (shift - Delta)^{power} through the eigenbasis.
  Matrix power(double p) const {
    const Field d = (shift - base->eigenvalues.array()).pow(p).matrix();
    return base->eigenvectors * d.asDiagonal() * base->eigenvectors.transpose();
  }
};

/// ( sum_k (shift - lambda_k)^s <field, q_k>^2 * spacing )^{1/2}. `s` is the
/// H-order, so s = 0 is the discrete L2 norm and E_theta corresponds to s = 2 theta.
inline double sobolev_norm(const SobolevScale& scale, const Field& field, double s) {
  const BaseOperator& b = *scale.base;
  if (field.size() != b.size()) throw ContractViolation("sobolev_norm: field length mismatch");
  if (s < -2.0 || s > 4.0) throw ContractViolation("sobolev_norm: order outside [-2, 4]");
  const Field coeff = b.eigenvectors.transpose() * field;
  double acc = 0.0;
  for (int k = 0; k < b.size(); ++k) acc += std::pow(scale.shift - b.eigenvalues(k), s) * coeff(k) * coeff(k);
  return std::sqrt(acc * b.grid.spacing);
}

/// Cap on ||t m||_1 beyond which matrix_exponential refuses to run.
inline constexpr double kMaxExponentNorm = 1.0e7;

/// e^{t m} by scaling and squaring with the degree-13 Pade approximant.
inline Matrix matrix_exponential(const Matrix& m, double t) {
  if (m.rows() != m.cols()) throw ContractViolation("matrix_exponential: matrix must be square");
  if (t < 0.0) throw ContractViolation("matrix_exponential: t must be >= 0");
  const Eigen::Index n = m.rows();
  const Matrix I = Matrix::Identity(n, n);
  if (t == 0.0) return I;

  Matrix A = t * m;
  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(norm1) || norm1 > kMaxExponentNorm)
    throw NumericalError("matrix_exponential: ||t m||_1 exceeds cap", norm1);
  if (norm1 == 0.0) return I;

  constexpr double theta13 = 5.371920351148152;
  int squarings = 0;
  if (norm1 > theta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  if (squarings > 0) A /= std::ldexp(1.0, squarings);

  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};

  const Matrix A2 = A * A;
  const Matrix A4 = A2 * A2;
  const Matrix A6 = A4 * A2;
  Matrix inner = b[13] * A6 + b[11] * A4 + b[9] * A2;
  Matrix Upart = A6 * inner;
  Upart += b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I;
  const Matrix U = A * Upart;
  inner = b[12] * A6 + b[10] * A4 + b[8] * A2;
  Matrix V = A6 * inner;
  V += b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;

  Matrix R = (V - U).partialPivLu().solve(V + U);
  for (int k = 0; k < squarings; ++k) R = R * R;
  if (!R.allFinite()) throw NumericalError("matrix_exponential: non-finite result", norm1);
  return R;
}

inline double smallest_singular_value(const Matrix& m) {
  if (m.rows() != m.cols()) throw ContractViolation("smallest_singular_value: matrix must be square");
  if (m.size() == 0) return 0.0;
  Eigen::BDCSVD<Matrix> svd(m);
  return svd.singularValues().minCoeff();
}

/// Operator 2-norm (largest singular value).
inline double operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::BDCSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

/// Discrete L2 norm sqrt(spacing * sum u_i^2).
inline double l2_norm(const Grid1D& grid, const Field& u) { return std::sqrt(grid.spacing) * u.norm(); }

} // namespace qlr

#endif // QLRECOVER_SPATIAL_HPP
