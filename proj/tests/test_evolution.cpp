#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "qlrecover/evolution.hpp"
#include "test_helpers.hpp"

using namespace qlr;
using qlr::testing::random_symmetric;
using qlr::testing::rel_diff;

namespace {

Matrix scaled_laplacian(int n, double length) {
  return assemble_laplacian(build_grid(n, length, BoundaryKind::Neumann)).matrix;
}

// A(t) = alpha(t) D with alpha(t) = 1 + 0.5 sin(2 pi t); int alpha = t + (1 - cos 2 pi t)/(4 pi)
double alpha(double t) { return 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * t); }
double alpha_integral(double t) { return t + (1.0 - std::cos(2.0 * std::numbers::pi * t)) / (4.0 * std::numbers::pi); }

OperatorPath commuting_path(const Matrix& D, const TimeGrid& g) {
  std::vector<Matrix> mats;
  for (int j = 0; j <= g.K; ++j) mats.push_back(alpha(g.node(j)) * D);
  return OperatorPath(g, std::move(mats), 0.5);
}

} // namespace

TEST(TimeGrid, NodesAndValidation) {
  const TimeGrid g(0.3, 7);
  EXPECT_EQ(g.node(0), 0.0);
  EXPECT_EQ(g.node(7), 0.3);
  for (int j = 1; j <= 7; ++j) EXPECT_GT(g.node(j), g.node(j - 1));
  EXPECT_THROW(TimeGrid(0.0, 4), ConfigError);
  EXPECT_THROW(TimeGrid(1.0, 0), ConfigError);
  EXPECT_NEAR(trapezoid_weights(g).sum(), 0.3, 1e-15);
}

TEST(FrozenSemigroup, IdentityConstantAndFrozenScalar) {
  const TimeGrid g(1.0, 8);
  const Matrix D = scaled_laplacian(6, 3.0);
  const auto path = OperatorPath::constant(g, D);
  EXPECT_TRUE((frozen_semigroup(path, 3, 3).array() == Matrix::Identity(6, 6).array()).all());
  EXPECT_LE(rel_diff(frozen_semigroup(path, 7, 2), matrix_exponential(D, g.node(7) - g.node(2))), 1e-14);

  const auto cp = commuting_path(D, g);
  const double dt = g.node(6) - g.node(1);
  // frozen at the earlier node, not averaged over the interval
  EXPECT_LE(rel_diff(frozen_semigroup(cp, 6, 1), matrix_exponential(alpha(g.node(1)) * D, dt)), 1e-13);
  EXPECT_GT(rel_diff(frozen_semigroup(cp, 6, 1), matrix_exponential(D, alpha_integral(g.node(6)) - alpha_integral(g.node(1)))), 1e-3);
  EXPECT_THROW(frozen_semigroup(path, 2, 3), ContractViolation);
}

TEST(CommutatorKernel, ConstantPathIsExactlyZero) {
  const TimeGrid g(1.0, 5);
  const auto path = OperatorPath::constant(g, scaled_laplacian(5, 2.0));
  for (int i = 1; i <= 5; ++i)
    for (int j = 0; j < i; ++j) EXPECT_EQ(commutator_kernel(path, i, j).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(commutator_kernel(path, 2, 2), ContractViolation);
}

TEST(CommutatorKernel, AffinePathDirectFormula) {
  std::mt19937_64 rng(17);
  const Matrix A0 = scaled_laplacian(6, 4.0);
  const Matrix B = 0.3 * random_symmetric(rng, 6);
  const TimeGrid g(1.0, 10);
  std::vector<Matrix> mats;
  for (int j = 0; j <= 10; ++j) mats.push_back(A0 + g.node(j) * B);
  const OperatorPath path(g, mats, 0.5);
  for (auto [i, j] : {std::pair{3, 0}, {7, 2}, {10, 9}}) {
    const double d = g.node(i) - g.node(j);
    const Matrix direct = d * B * matrix_exponential(A0 + g.node(j) * B, d);
    EXPECT_LE(rel_diff(commutator_kernel(path, i, j), direct), 1e-12);
  }
}

TEST(CommutatorKernel, HolderScalingNearDiagonal) {
  // A(t) = A0 + t^rho B: ||k(t_1, t_0)|| ~ h^rho
  std::mt19937_64 rng(23);
  const double rho = 0.4;
  const Matrix A0 = -Matrix::Identity(4, 4);
  const Matrix B = random_symmetric(rng, 4);
  std::vector<double> lh, lk;
  for (int K : {64, 128, 256, 512, 1024}) {
    const TimeGrid g(1.0, K);
    std::vector<Matrix> mats;
    for (int j = 0; j <= K; ++j) mats.push_back(A0 + std::pow(g.node(j), rho) * B);
    const OperatorPath path(g, mats, rho);
    lh.push_back(std::log(g.step()));
    lk.push_back(std::log(operator_norm(commutator_kernel(path, 1, 0))));
  }
  const double slope = (lk.back() - lk.front()) / (lh.back() - lh.front());
  EXPECT_NEAR(slope, rho, 0.02);
}

TEST(VolterraResolvent, ConstantPathZeroAfterOneIteration) {
  const TimeGrid g(1.0, 12);
  const auto path = OperatorPath::constant(g, scaled_laplacian(6, 2.0));
  const auto kt = volterra_resolvent(path, 1e-12);
  EXPECT_EQ(kt.iterations(), 1);
  for (int i = 1; i <= 12; ++i)
    for (int j = 0; j < i; ++j) EXPECT_EQ(kt.resolvent(i, j).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(kt.resolvent(3, 3), ContractViolation);
  EXPECT_THROW(kt.resolvent(3, 5), ContractViolation);
}

TEST(VolterraResolvent, FirstTermWhenSquareIsNegligible) {
  std::mt19937_64 rng(29);
  const Matrix A0 = scaled_laplacian(5, 3.0);
  const Matrix B = random_symmetric(rng, 5);
  const TimeGrid g(1.0, 16);
  std::vector<Matrix> mats;
  for (int j = 0; j <= 16; ++j) mats.push_back(A0 + 1e-9 * g.node(j) * B);
  const OperatorPath path(g, mats, 0.5);
  const double tol = 1e-14;
  const auto kt = volterra_resolvent(path, tol);
  EXPECT_EQ(kt.iterations(), 1);
  for (int i = 1; i <= 16; ++i)
    for (int j = 0; j < i; ++j) EXPECT_LE((kt.resolvent(i, j) - kt.kernel(i, j)).cwiseAbs().maxCoeff(), tol);
}

TEST(VolterraResolvent, ResidualWithinTwiceTolerance) {
  const auto path = qlr::testing::chemotaxis_reference_path(12, 32);
  for (double tol : {1e-8, 1e-11}) {
    const auto kt = volterra_resolvent(path, tol);
    EXPECT_GT(kt.iterations(), 1);
    EXPECT_LE(kt.residual(), 2.0 * tol);
  }
}

TEST(VolterraResolvent, NonConvergenceCarriesIncrement) {
  const auto path = qlr::testing::chemotaxis_reference_path(8, 16);
  try {
    volterra_resolvent(path, 1e-30, 2);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_GT(e.value(), 1e-30);
  }
  EXPECT_THROW(volterra_resolvent(path, 0.0), ContractViolation);
}

TEST(EvolutionSeries, ConstantPathReproducesExponential) {
  const TimeGrid g(0.5, 16);
  const Matrix A = scaled_laplacian(8, 1.0);
  const auto U = evolution_series(OperatorPath::constant(g, A));
  EXPECT_EQ(U.method(), PropagatorMethod::KernelSeries);
  for (int i = 0; i <= 16; ++i)
    for (int j = 0; j <= i; ++j) {
      const Matrix ref = matrix_exponential(A, g.node(i) - g.node(j));
      EXPECT_LE((U.at(i, j) - ref).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    }
}

TEST(EvolutionSeries, CommutingFamilyClosedForm) {
  const int K = 128;
  const TimeGrid g(1.0, K);
  const Matrix D = scaled_laplacian(16, 4.0);
  const auto U = evolution_series(commuting_path(D, g));
  const Matrix oracle = matrix_exponential(D, alpha_integral(1.0));
  EXPECT_LE(operator_norm(U.at(K, 0) - oracle) / operator_norm(oracle), 0.02);
  const Matrix mid = matrix_exponential(D, alpha_integral(g.node(96)) - alpha_integral(g.node(32)));
  EXPECT_LE(operator_norm(U.at(96, 32) - mid) / operator_norm(mid), 0.02);
}

TEST(EvolutionSeries, AgreesWithStepperAndCocycleImproves) {
  double prev_gap = 1.0, prev_cocycle = 1.0;
  for (int K : {32, 64, 128}) {
    const auto path = qlr::testing::chemotaxis_reference_path(16, K);
    const auto Us = evolution_series(path);
    const auto Uc = evolution_stepper(path);
    const double gap = operator_norm(Us.at(K, 0) - Uc.at(K, 0)) / operator_norm(Uc.at(K, 0));
    const double cocycle = cocycle_defect(Us, K, K / 2, 0);
    EXPECT_LT(gap, prev_gap);
    EXPECT_LT(cocycle, prev_cocycle);
    if (K == 128) {
      EXPECT_LE(gap, 0.02);
      EXPECT_LE(cocycle, 1e-2);
    }
    prev_gap = gap;
    prev_cocycle = cocycle;
  }
}

TEST(EvolutionStepper, ZeroGeneratorGivesIdentity) {
  const TimeGrid g(1.0, 6);
  const auto U = evolution_stepper(OperatorPath::constant(g, Matrix::Zero(3, 3)));
  for (int i = 0; i <= 6; ++i)
    for (int j = 0; j <= i; ++j) EXPECT_TRUE((U.at(i, j).array() == Matrix::Identity(3, 3).array()).all());
}

TEST(EvolutionStepper, CrankNicolsonSecondOrder) {
  std::mt19937_64 rng(31);
  const Matrix A = random_symmetric(rng, 6) - 2.0 * Matrix::Identity(6, 6);
  const Matrix ref = matrix_exponential(A, 1.0);
  std::vector<double> errs;
  for (int K : {16, 32, 64, 128}) {
    const auto U = evolution_stepper(OperatorPath::constant(TimeGrid(1.0, K), A));
    errs.push_back(operator_norm(U.at(K, 0) - ref));
  }
  for (std::size_t k = 1; k < errs.size(); ++k) EXPECT_GE(std::log2(errs[k - 1] / errs[k]), 1.8);
}

TEST(EvolutionStepper, BackwardEulerScalarLimit) {
  Matrix A(1, 1);
  A(0, 0) = -1.0;
  double prev = 1.0;
  for (int K : {10, 100, 1000}) {
    const TimeGrid g(1.0, K);
    const auto U = evolution_stepper(OperatorPath::constant(g, A), StepScheme::BackwardEuler);
    EXPECT_NEAR(U.at(K, 0)(0, 0), std::pow(1.0 + g.step(), -K), 1e-13);
    const double err = std::abs(U.at(K, 0)(0, 0) - std::exp(-1.0));
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(EvolutionStepper, CocycleIsExactComposition) {
  const auto path = qlr::testing::chemotaxis_reference_path(10, 24);
  const auto U = evolution_stepper(path);
  for (int i = 0; i <= 24; ++i) EXPECT_TRUE((U.at(i, i).array() == Matrix::Identity(10, 10).array()).all());
  for (auto [i, j, m] : {std::tuple{24, 12, 0}, {20, 7, 3}, {5, 5, 1}, {17, 16, 2}})
    EXPECT_LE(cocycle_defect(U, i, j, m), 1e-13);
}

TEST(EvolutionStepper, SingularStepRejected) {
  Matrix A(1, 1);
  A(0, 0) = 2.0;  // I - h A = 0 at h = 1/2 under backward Euler
  EXPECT_THROW(evolution_stepper(OperatorPath::constant(TimeGrid(1.0, 2), A), StepScheme::BackwardEuler),
               NumericalError);
}

TEST(PropagatorTable, ReversedIndicesAreContractViolations) {
  const auto U = evolution_stepper(OperatorPath::constant(TimeGrid(1.0, 4), -Matrix::Identity(2, 2)));
  EXPECT_THROW(U.at(1, 2), ContractViolation);
  EXPECT_THROW(U.at(5, 0), ContractViolation);
  EXPECT_NO_THROW(U.at(4, 4));
}

TEST(HolderSeminorm, ConstantLinearAndScaling) {
  std::mt19937_64 rng(37);
  const Matrix A = random_symmetric(rng, 5);
  const TimeGrid g(2.0, 20);
  const auto hc = holder_seminorm(OperatorPath::constant(g, A), 0.5);
  EXPECT_EQ(hc.seminorm, 0.0);
  EXPECT_NEAR(hc.value(), operator_norm(A), 1e-12);

  const double rho = 0.3;
  std::vector<Matrix> mats;
  for (int j = 0; j <= 20; ++j) mats.push_back(g.node(j) * A);
  const OperatorPath lin(g, mats, rho);
  const auto hl = holder_seminorm(lin, rho);
  EXPECT_NEAR(hl.seminorm, std::pow(2.0, 1.0 - rho) * operator_norm(A), 1e-10);

  std::vector<Matrix> scaled;
  for (const auto& m : mats) scaled.push_back(-3.0 * m);
  EXPECT_NEAR(holder_seminorm(OperatorPath(g, scaled, rho), rho).value(), 3.0 * hl.value(), 1e-10);
  EXPECT_THROW(holder_seminorm(lin, 1.0), ContractViolation);
}

TEST(PerturbationCheck, ScalarShiftClosedForm) {
  auto base = qlr::testing::neumann_base(8, 4.0);
  const SobolevScale scale(base);
  const Matrix A = base->matrix;
  const double eps = 1e-6;
  const Matrix B = A + eps * Matrix::Identity(8, 8);
  const std::vector<double> ts{0.25, 0.5, 1.0};
  const auto rep = semigroup_perturbation_check(A, B, ts, scale);
  // ||e^{tA} - e^{tB}|| = |1 - e^{t eps}| (lambda_max(A) = 0); ||eps (1 - Delta)^{-1}|| = eps
  EXPECT_NEAR(rep.ratio_e0, std::expm1(eps) / eps, 1e-6);
  EXPECT_TRUE(rep.bounded);
  EXPECT_THROW(semigroup_perturbation_check(A, A, ts, scale), ContractViolation);
}

TEST(PerturbationCheck, RandomPairStableUnderRefinement) {
  std::mt19937_64 rng(41);
  auto base = qlr::testing::neumann_base(10, 5.0);
  const SobolevScale scale(base);
  const Matrix A = base->matrix;
  const Matrix B = A + 0.01 * random_symmetric(rng, 10) * scale.shifted_operator() * 0.1;
  std::vector<double> ts;
  for (int k = 1; k <= 8; ++k) ts.push_back(0.125 * k);
  const auto rep = semigroup_perturbation_check(A, B, ts, scale);
  EXPECT_TRUE(rep.bounded);
  EXPECT_TRUE(std::isfinite(rep.ratio_e1));
  EXPECT_GT(rep.ratio_e0, 0.0);
}

TEST(PropagatorDump, RoundTripIsExact) {
  const auto path = qlr::testing::chemotaxis_reference_path(6, 8);
  for (const auto& U : {evolution_stepper(path), evolution_series(path)}) {
    std::stringstream buf;
    write_propagator(buf, U);
    EXPECT_EQ(buf.str().size(), 32u + 45u * 36u * 8u);  // header + 45 blocks of 6x6 doubles
    const auto V = read_propagator(buf);
    EXPECT_EQ(V.method(), U.method());
    EXPECT_EQ(V.grid(), U.grid());
    for (int i = 0; i <= 8; ++i)
      for (int j = 0; j <= i; ++j) EXPECT_TRUE((V.at(i, j).array() == U.at(i, j).array()).all());
  }
  std::stringstream junk("not a propagator");
  EXPECT_THROW(read_propagator(junk), IoError);
}
