#ifndef QLRECOVER_TEST_HELPERS_HPP
#define QLRECOVER_TEST_HELPERS_HPP

#include <cstdint>
#include <random>

#include <numbers>

#include "qlrecover/evolution.hpp"
#include "qlrecover/models.hpp"
#include "qlrecover/spatial.hpp"

namespace qlr::testing {

inline Field random_field(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Field f(n);
  for (int i = 0; i < n; ++i) f(i) = g(rng);
  return f;
}

inline Matrix random_matrix(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = g(rng);
  return m;
}

inline Matrix random_symmetric(std::mt19937_64& rng, int n) {
  const Matrix m = random_matrix(rng, n);
  return 0.5 * (m + m.transpose());
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline std::shared_ptr<const BaseOperator> neumann_base(int n, double length = 1.0) {
  return std::make_shared<const BaseOperator>(assemble_laplacian(build_grid(n, length, BoundaryKind::Neumann)));
}

// Chemotaxis generator along the prescribed smooth state
//   u(t) = amp (1 + (1 - t/T) cos(pi x) + (t/T) cos(2 pi x)),
// which changes shape in time so that A(t) and A(s) do not commute.
inline OperatorPath chemotaxis_reference_path(int n, int K, double T = 0.5, double amp = 0.5, double rho = 0.5) {
  auto base = neumann_base(n);
  const ChemotaxisModel model(base, exponential_chemotaxis(1.0), chemotaxis_exponents(2.25), 1e3);
  const TimeGrid g(T, K);
  const Field x = base->grid.nodes();
  const double pi = std::numbers::pi;
  std::vector<Matrix> mats;
  mats.reserve(K + 1);
  for (int j = 0; j <= K; ++j) {
    const double s = g.node(j) / T;
    const Field u = amp * (1.0 + (1.0 - s) * (pi * x.array()).cos() + s * (2.0 * pi * x.array()).cos()).matrix();
    mats.push_back(model.assemble_A(u));
  }
  return OperatorPath(g, std::move(mats), rho);
}

} // namespace qlr::testing

#endif
