#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "qlrecover/solver.hpp"
#include "test_helpers.hpp"

using namespace qlr;
using qlr::testing::neumann_base;
using qlr::testing::random_field;

namespace {

Field cosine_mode(const BaseOperator& base, double amp) {
  return (amp * (std::numbers::pi * base.grid.nodes().array() / base.grid.length).cos()).matrix();
}

std::shared_ptr<ChemotaxisModel> chemotaxis(std::shared_ptr<const BaseOperator> base, double r0 = 1.0) {
  return std::make_shared<ChemotaxisModel>(base, exponential_chemotaxis(1.0), chemotaxis_exponents(2.25), r0);
}

std::shared_ptr<LinearModel> linear(std::shared_ptr<const BaseOperator> base) {
  return std::make_shared<LinearModel>(base, base->matrix, chemotaxis_exponents(2.25), 1.0);
}

AveragingCondition condition(ConditionVariant v, const TimeGrid& g) {
  return AveragingCondition::preset(v, g, WeightPreset::Constant, v == ConditionVariant::TerminalDifference ? 0.5 : 0.0);
}

} // namespace

TEST(WeightedDistance, ZeroConstantAndHomogeneity) {
  std::mt19937_64 rng(1);
  auto base = neumann_base(10);
  const auto m = chemotaxis(base);
  const TimeGrid g(0.5, 16);
  const auto u = random_start(*m, g, 0.5, rng);
  const auto v = random_start(*m, g, 0.5, rng);
  EXPECT_EQ(weighted_distance(u, u, *m), 0.0);

  WeightedNormSpec spec{0.0, 1.125, 0.0, 0.5};
  const Field c = random_field(rng, 10);
  Trajectory shifted = u;
  for (int j = 0; j <= g.K; ++j) shifted.state(j) += c;
  const double expected = sobolev_norm(m->scale(), c, 1.125) + sobolev_norm(m->scale(), c, 0.0);
  EXPECT_NEAR(weighted_distance(shifted, u, spec, m->scale()), expected, 1e-12 * expected);

  Trajectory su = u, sv = v;
  su.states *= -2.5;
  sv.states *= -2.5;
  EXPECT_NEAR(weighted_distance(su, sv, *m), 2.5 * weighted_distance(u, v, *m), 1e-12 * weighted_distance(su, sv, *m));
}

TEST(WeightedDistance, WeightedPartSkipsInitialNode) {
  auto base = neumann_base(8);
  const TimeGrid g(1.0, 8);
  Trajectory a(g, 8), b(g, 8);
  a.state(0) = Field::Ones(8);
  const SobolevScale scale(base);
  const WeightedNormSpec no_beta_parts{0.5, 1.0, 0.0, 0.5};
  const double d = weighted_distance(a, b, no_beta_parts, scale);
  // only the Hoelder quotient and the sup beta-norm see the t = 0 difference
  const double l2 = sobolev_norm(scale, Field::Ones(8), 0.0);
  EXPECT_NEAR(d, l2 + l2 / std::pow(g.step(), 0.5), 1e-12 * d);
}

TEST(ForwardSolve, ZeroAndLinearExponential) {
  auto base = neumann_base(12, 6.0);
  const auto lin = linear(base);
  const TimeGrid g(1.0, 16);
  EXPECT_EQ(forward_solve(*lin, Field::Zero(12), g).states.cwiseAbs().maxCoeff(), 0.0);

  const Field u0 = cosine_mode(*base, 0.3) + Field::Constant(12, 0.1);
  std::vector<double> errs;
  for (int K : {16, 32, 64, 128}) {
    const auto u = forward_solve(*lin, u0, TimeGrid(1.0, K));
    errs.push_back((u.state(K) - matrix_exponential(base->matrix, 1.0) * u0).norm());
  }
  for (std::size_t k = 1; k < errs.size(); ++k) EXPECT_GE(std::log2(errs[k - 1] / errs[k]), 0.9);
  EXPECT_THROW(forward_solve(*chemotaxis(base, 0.01), u0, g), ModelError);
}

TEST(ForwardSolve, SelfConvergenceIsFirstOrder) {
  auto base = neumann_base(16);
  const auto m = chemotaxis(base);
  const Field u0 = cosine_mode(*base, 0.05);
  const double e1 = self_convergence_error(*m, u0, TimeGrid(0.5, 32));
  const double e2 = self_convergence_error(*m, u0, TimeGrid(0.5, 64));
  EXPECT_GE(std::log2(e1 / e2), 0.9);
}

TEST(ForwardSolve, ChemotaxisMassDrift) {
  // The expanded form is not conservative; the drift is measured against a
  // documented absolute tolerance since the initial mass is zero.
  auto base = neumann_base(32);
  const auto m = chemotaxis(base);
  const Field u0 = cosine_mode(*base, 1e-2);
  const auto u = forward_solve(*m, u0, TimeGrid(0.5, 128));
  const double h = base->grid.spacing;
  const double m0 = h * u0.sum();
  double drift = 0.0;
  for (int j = 0; j <= 128; ++j) drift = std::max(drift, std::abs(h * u.state(j).sum() - m0));
  EXPECT_LE(drift, 1e-6);
}

TEST(ForwardSolve, RdConservesMassWithoutReaction) {
  auto base = neumann_base(16);
  RdCoefficients c = default_rd_coefficients(16);
  c.f = Polynomial{{0.0}};
  const NonlocalRDModel m(base, c, rd_exponents({4.0, 1, 1}, 2.0), 1.0);
  const Field u0 = cosine_mode(*base, 0.2) + Field::Constant(16, 0.3);
  const auto u = forward_solve(m, u0, TimeGrid(0.5, 64));
  for (int j = 0; j <= 64; ++j) EXPECT_NEAR(u.state(j).sum(), u0.sum(), 1e-12 * u0.sum());
}

TEST(IterateOnce, LinearClosedFormAndZero) {
  std::mt19937_64 rng(4);
  auto base = neumann_base(10, 5.0);
  const auto lin = linear(base);
  const TimeGrid g(0.5, 32);
  const auto c = condition(ConditionVariant::TimeAverage, g);
  const RecoveryConfig cfg;
  const auto U = evolution_stepper(OperatorPath::constant(g, base->matrix));
  const Field x0 = random_field(rng, 10);
  const Field M = assemble_phi(U, c).matrix * x0;
  const auto next = iterate_once(*lin, c, M, random_start(*lin, g, 0.5, rng), cfg);
  for (int j = 0; j <= g.K; ++j)
    EXPECT_LE((next.state(j) - U.at(j, 0) * x0).norm(), 1e-10 * x0.norm());

  const auto m = chemotaxis(base);
  const auto zero = iterate_once(*m, c, Field::Zero(10), Trajectory(g, 10), cfg);
  EXPECT_EQ(zero.states.cwiseAbs().maxCoeff(), 0.0);
}

TEST(IterateOnce, SmallDataStaysInBall) {
  auto base = neumann_base(16);
  const auto m = chemotaxis(base);
  const TimeGrid g(0.5, 32);
  const auto c = condition(ConditionVariant::TimeAverage, g);
  const auto data = manufacture(*m, c, cosine_mode(*base, 1e-2));
  RecoveryConfig cfg;
  Trajectory u(g, 16);
  for (int k = 0; k < 3; ++k) {
    u = iterate_once(*m, c, data.M, u, cfg);
    EXPECT_LE(sup_beta_norm(*m, u), cfg.ball_L);
  }
}

TEST(FixedPointRecover, ZeroDataGivesExactZero) {
  auto base = neumann_base(12);
  const auto m = chemotaxis(base);
  const TimeGrid g(0.5, 16);
  for (auto v : all_variants()) {
    const auto r = fixed_point_recover(*m, condition(v, g), Field::Zero(12), RecoveryConfig{});
    EXPECT_TRUE(r.report.converged);
    EXPECT_LE(r.report.iterates, 2);
    EXPECT_EQ(r.u0.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.trajectory.states.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(FixedPointRecover, LinearOracleAllVariants) {
  std::mt19937_64 rng(6);
  auto base = neumann_base(12, 6.0);
  const auto lin = linear(base);
  const TimeGrid g(0.5, 32);
  const auto U = evolution_stepper(OperatorPath::constant(g, base->matrix));
  const Field x0 = random_field(rng, 12);
  for (auto v : all_variants()) {
    const auto c = condition(v, g);
    const Field M = condition_matrix(U, c) * x0;
    const auto r = fixed_point_recover(*lin, c, M, RecoveryConfig{});
    EXPECT_TRUE(r.report.converged);
    EXPECT_LE(r.report.iterates, 2);
    EXPECT_LE((r.u0 - x0).norm() / x0.norm(), 1e-6) << to_string(v);
  }
}

TEST(FixedPointRecover, RelaxationKeepsLimit) {
  std::mt19937_64 rng(10);
  auto base = neumann_base(10);
  const auto m = chemotaxis(base);
  const TimeGrid g(0.5, 24);
  const auto c = condition(ConditionVariant::InitialPlusAverage, g);
  const Field M = manufacture(*m, c, cosine_mode(*base, 2e-2)).M;
  RecoveryConfig plain, damped;
  damped.relaxation = 0.6;
  damped.max_iters = 200;
  const auto a = fixed_point_recover(*m, c, M, plain);
  const auto b = fixed_point_recover(*m, c, M, damped);
  ASSERT_TRUE(a.report.converged && b.report.converged);
  EXPECT_GT(b.report.iterates, a.report.iterates);
  EXPECT_LE((a.u0 - b.u0).norm(), 1e-8 * a.u0.norm());
}

TEST(FixedPointRecover, ManufacturedRoundTripAcrossResolutions) {
  auto base = neumann_base(16);
  const auto m = chemotaxis(base);
  const Field u0 = cosine_mode(*base, 1e-2);
  RecoveryConfig cfg;
  cfg.tol = 1e-13;
  for (int K : {64, 128}) {
    const TimeGrid g(0.5, K);
    const double E = self_convergence_error(*m, u0, g);
    for (auto v : all_variants()) {
      const auto c = condition(v, g);
      const auto data = manufacture(*m, c, u0);
      EXPECT_LE(averaging_residual(c, data.truth, data.M), 1e-12);
      const auto r = fixed_point_recover(*m, c, data.M, cfg);
      ASSERT_TRUE(r.report.converged) << to_string(v);
      EXPECT_LE(r.report.residual, 10.0 * cfg.tol);
      const double err = (r.u0 - u0).norm() / u0.norm();
      EXPECT_LE(err, 3.0 * E) << to_string(v) << " K=" << K;
      // one more application of the map moves the fixed point by at most tol
      const auto again = iterate_once(*m, c, data.M, r.trajectory, cfg);
      EXPECT_LE(weighted_distance(again, r.trajectory, *m), cfg.tol);
      const auto& q = r.report.contraction_estimates;
      ASSERT_GE(q.size(), 3u);
      for (std::size_t k = q.size() - 3; k < q.size(); ++k) EXPECT_LT(q[k], 1.0);
    }
  }
}

TEST(FixedPointRecover, TerminalDifferenceWithoutWeightReturnsData) {
  std::mt19937_64 rng(12);
  auto base = neumann_base(12);
  const auto m = chemotaxis(base);
  const TimeGrid g(0.5, 64);
  const auto c = AveragingCondition::preset(ConditionVariant::TerminalDifference, g, WeightPreset::Constant, 0.0);
  const Field M = cosine_mode(*base, 1e-2);
  const auto r = fixed_point_recover(*m, c, M, RecoveryConfig{});
  ASSERT_TRUE(r.report.converged);
  EXPECT_TRUE((r.u0.array() == M.array()).all());
  EXPECT_NEAR(averaging_residual(c, r.trajectory, M), (r.trajectory.state(0) - M).norm() / M.norm(), 1e-15);
  const auto fwd = forward_solve(*m, M, g);
  const double E = self_convergence_error(*m, M, g);
  double gap = 0.0;
  for (int j = 0; j <= g.K; ++j) gap = std::max(gap, (fwd.state(j) - r.trajectory.state(j)).norm());
  EXPECT_LE(gap / M.norm(), 2.0 * E);
}

TEST(FixedPointRecover, SingularConditionIsFatal) {
  auto base = neumann_base(8);
  const auto m = chemotaxis(base);
  const TimeGrid g(0.5, 16);
  const auto c = AveragingCondition::preset(ConditionVariant::TimeAverage, g, WeightPreset::Cosine);
  EXPECT_THROW(fixed_point_recover(*m, c, Field::Ones(8), RecoveryConfig{}), SingularOperatorError);
}

TEST(FixedPointRecover, LargeDataFailsWithReport) {
  auto base = neumann_base(12);
  const auto m = chemotaxis(base, 1.0);
  const TimeGrid g(0.5, 16);
  const auto c = condition(ConditionVariant::TimeAverage, g);
  RecoveryConfig cfg;
  cfg.max_iters = 20;
  const auto r = fixed_point_recover(*m, c, cosine_mode(*base, 50.0), cfg);
  EXPECT_FALSE(r.report.converged);
  EXPECT_FALSE(r.report.failure.empty());
}

TEST(RecoveryConfig, Validation) {
  auto base = neumann_base(8);
  const auto m = chemotaxis(base, 0.4);
  RecoveryConfig c;
  EXPECT_THROW(c.validate(*m), ConfigError);  // L = 0.5 >= r0
  c.ball_L = 0.2;
  EXPECT_NO_THROW(c.validate(*m));
  c.relaxation = 0.0;
  EXPECT_THROW(c.validate(*m), ConfigError);
  c.relaxation = 1.0;
  c.tol = 0.0;
  EXPECT_THROW(c.validate(*m), ConfigError);
}

TEST(SmallnessScan, TrivialLinearAndValidation) {
  auto base = neumann_base(10, 5.0);
  const TimeGrid g(0.5, 16);
  const auto c = condition(ConditionVariant::TimeAverage, g);
  const auto m = chemotaxis(base);
  const Field dir = cosine_mode(*base, 1.0);
  const auto t0 = smallness_scan(*m, c, dir, {0.0}, RecoveryConfig{});
  ASSERT_EQ(t0.rows.size(), 1u);
  EXPECT_TRUE(t0.rows[0].converged);

  const auto lin = linear(base);
  const auto tl = smallness_scan(*lin, c, dir, {1e-3, 1e-1, 1.0, 10.0}, RecoveryConfig{});
  for (const auto& r : tl.rows) EXPECT_TRUE(r.converged);
  EXPECT_TRUE(tl.monotone());
  EXPECT_EQ(tl.largest_converged().value(), 10.0);
  EXPECT_THROW(smallness_scan(*m, c, dir, {1.0, 0.5}, RecoveryConfig{}), ContractViolation);
}

TEST(SmallnessScan, MonotoneFlagDetectsReentry) {
  ScanTable t;
  t.rows = {{1e-3, true, 0, 0.0, ""}, {1e-2, false, 0, 0.0, ""}, {1e-1, true, 0, 0.0, ""}};
  EXPECT_FALSE(t.monotone());
  t.rows = {{1e-3, true, 0, 0.0, ""}, {1e-2, true, 0, 0.0, ""}, {1e-1, false, 0, 0.0, ""}};
  EXPECT_TRUE(t.monotone());
  EXPECT_EQ(t.largest_converged().value(), 1e-2);
}

TEST(ContractionProbe, LinearZeroAndChemotaxis) {
  std::mt19937_64 rng(14);
  auto base = neumann_base(10, 5.0);
  const TimeGrid g(0.5, 24);
  const auto c = condition(ConditionVariant::TimeAverage, g);
  const auto lin = linear(base);
  const Field x0 = random_field(rng, 10);
  const auto U = evolution_stepper(OperatorPath::constant(g, base->matrix));
  const auto pl = contraction_probe(*lin, c, assemble_phi(U, c).matrix * x0, RecoveryConfig{}, 4, 1);
  EXPECT_TRUE(pl.all_converged);
  EXPECT_LE(pl.max_pairwise_distance, 1e-10);

  const auto m = chemotaxis(base);
  RecoveryConfig cfg;
  cfg.tol = 1e-12;
  const auto pz = contraction_probe(*m, c, Field::Zero(10), cfg, 3, 2);
  EXPECT_TRUE(pz.all_converged);
  for (const auto& u0 : pz.limits) EXPECT_LE(u0.norm(), 1e-10);

  const Field M = manufacture(*m, c, cosine_mode(*base, 1e-2)).M;
  const auto pc = contraction_probe(*m, c, M, cfg, 5, 3);
  EXPECT_TRUE(pc.all_converged);
  EXPECT_LE(pc.max_pairwise_distance, 10.0 * cfg.tol);
  for (double q : pc.last_ratios) EXPECT_LT(q, 1.0);
}
