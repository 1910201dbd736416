#ifndef QLRECOVER_TRAJECTORY_HPP
#define QLRECOVER_TRAJECTORY_HPP

#include <cmath>
#include <string>

#include "qlrecover/spatial.hpp"

namespace qlr {

/// Uniform time grid t_j = j T / K, j = 0..K.
struct TimeGrid {
  double T = 0.0;
  int K = 0;

  TimeGrid() = default;
  TimeGrid(double horizon, int steps) : T(horizon), K(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("time grid: T must be positive");
    if (steps < 1) throw ConfigError("time grid: K must be >= 1");
  }

  double step() const { return T / K; }
  double node(int j) const { return j == K ? T : T * j / K; }

  bool operator==(const TimeGrid& o) const { return T == o.T && K == o.K; }
  bool operator!=(const TimeGrid& o) const { return !(*this == o); }
};

/// Composite trapezoid weights on [0, t_upto]; zero beyond `upto`.
inline Field trapezoid_weights(const TimeGrid& grid, int upto) {
  Field w = Field::Zero(grid.K + 1);
  if (upto <= 0) return w;
  const double h = grid.step();
  w.head(upto + 1).setConstant(h);
  w(0) = 0.5 * h;
  w(upto) = 0.5 * h;
  return w;
}

inline Field trapezoid_weights(const TimeGrid& grid) { return trapezoid_weights(grid, grid.K); }

/// Time-grid-indexed states; column j holds u(t_j).
struct Trajectory {
  TimeGrid grid;
  Matrix states;

  Trajectory() = default;
  Trajectory(const TimeGrid& g, int n) : grid(g), states(Matrix::Zero(n, g.K + 1)) {}
  Trajectory(const TimeGrid& g, Matrix s) : grid(g), states(std::move(s)) {
    if (states.cols() != g.K + 1) throw ContractViolation("Trajectory: state count must be K+1");
  }

  int size() const { return static_cast<int>(states.rows()); }
  int steps() const { return grid.K; }
  auto state(int j) { return states.col(j); }
  auto state(int j) const { return states.col(j); }
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const char* where) {
  if (a != b) throw ContractViolation(std::string(where) + ": time grid mismatch");
}

} // namespace qlr

#endif // QLRECOVER_TRAJECTORY_HPP
