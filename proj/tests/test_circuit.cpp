#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "xbarsim/circuit.hpp"

using namespace xbarsim;

namespace {

CrossbarParams params_for(int r, int c, double rd, double rr, double rc, double rs) {
  CrossbarParams p;
  p.n_rows = r;
  p.n_cols = c;
  p.r_driver = rd;
  p.r_wire_row = rr;
  p.r_wire_col = rc;
  p.r_sense = rs;
  p.sigma_dev = 0.0;
  return p;
}

ConductanceTile random_tile(int r, int c, const CrossbarParams& p, Rng& rng) {
  ConductanceTile t;
  t.g.resize(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) t.g(i, j) = rng.uniform(p.g_min, p.g_max);
  return t;
}

double max_entry_rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double m = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) m = std::max(m, std::fabs(a(k) - b(k)) / std::fabs(b(k)));
  return m;
}

}  // namespace

TEST(IdealMac, OhmsLaw1x1) {
  ConductanceTile t{Eigen::MatrixXd::Constant(1, 1, 1e-4)};
  EXPECT_DOUBLE_EQ(ideal_mac(t, Eigen::VectorXd::Ones(1))(0), 1e-4);
}

TEST(IdealMac, ZeroInputGivesZero) {
  Rng rng(1);
  const auto p = params_for(5, 3, 1, 1, 1, 1);
  EXPECT_TRUE(ideal_mac(random_tile(5, 3, p, rng), Eigen::VectorXd::Zero(5)).isZero(0.0));
}

TEST(IdealMac, ColumnSums2x2) {
  ConductanceTile t;
  t.g.resize(2, 2);
  t.g << 1e-4, 2e-4, 3e-4, 4e-4;
  const Eigen::VectorXd i = ideal_mac(t, Eigen::VectorXd::Ones(2));
  EXPECT_DOUBLE_EQ(i(0), 4e-4);
  EXPECT_DOUBLE_EQ(i(1), 6e-4);
}

TEST(IdealMac, DimensionMismatchThrows) {
  ConductanceTile t{Eigen::MatrixXd::Constant(2, 2, 1e-4)};
  EXPECT_THROW(ideal_mac(t, Eigen::VectorXd::Ones(3)), UsageError);
}

TEST(SolveCrossbar, ThreeResistorsInSeries) {
  const auto p = params_for(1, 1, 1e3, 0, 0, 1e3);
  ConductanceTile t{Eigen::MatrixXd::Constant(1, 1, 1e-4)};
  const double i = solve_crossbar(t, p, Eigen::VectorXd::Ones(1)).currents(0);
  EXPECT_NEAR(i, 1.0 / 12000.0, 1e-9 / 12000.0);
}

TEST(SolveCrossbar, IdealLimitMatchesIdealMac) {
  Rng rng(2);
  const auto p = params_for(6, 4, 0, 0, 0, 0);
  const auto t = random_tile(6, 4, p, rng);
  Eigen::VectorXd v(6);
  for (int i = 0; i < 6; ++i) v(i) = rng.uniform(-1, 1);
  EXPECT_LE(oracle::max_rel_diff(solve_crossbar(t, p, v).currents, ideal_mac(t, v)), 1e-9);
}

TEST(SolveCrossbar, TwoByTwoMatchesDenseOracle) {
  const auto p = params_for(2, 2, 1e3, 100, 100, 1e3);
  ConductanceTile t{Eigen::MatrixXd::Constant(2, 2, 1e-4)};
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(2);
  const auto got = solve_crossbar(t, p, v).currents;
  const auto want = oracle::crossbar_currents(t.g, 1e3, 100, 100, 1e3, v);
  EXPECT_LE(max_entry_rel(got, want), 1e-9);
}

TEST(SolveCrossbar, RandomTilesMatchDenseOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    const int r = 1 + static_cast<int>(rng.below(7)), c = 1 + static_cast<int>(rng.below(7));
    const auto p = params_for(r, c, rng.uniform(10, 2000), rng.uniform(0.5, 50), rng.uniform(0.5, 50),
                              rng.uniform(10, 2000));
    const auto t = random_tile(r, c, p, rng);
    Eigen::VectorXd v(r);
    for (int i = 0; i < r; ++i) v(i) = rng.uniform(0.1, 1.0);
    const auto want = oracle::crossbar_currents(t.g, p.r_driver, p.r_wire_row, p.r_wire_col, p.r_sense, v);
    EXPECT_LE(max_entry_rel(solve_crossbar(t, p, v).currents, want), 1e-9) << r << "x" << c;
  }
}

TEST(SolveCrossbar, KclResidualSmallAt64) {
  Rng rng(4);
  CrossbarParams p;
  p.sigma_dev = 0.0;
  const auto t = random_tile(64, 64, p, rng);
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(64);
  CrossbarSolver s(t, p);
  const auto sol = s.solve(v);
  double worst = 0.0;
  for (double r : s.kcl_relative_residuals(sol, v)) worst = std::max(worst, r);
  EXPECT_LE(worst, 1e-9);
  EXPECT_EQ(s.unknowns(), 2 * 64 * 64);
}

TEST(SolveCrossbar, KclResidualWithShortsAndMixedInputs) {
  Rng rng(5);
  const auto p = params_for(8, 5, 0, 3, 0, 250);
  const auto t = random_tile(8, 5, p, rng);
  Eigen::VectorXd v(8);
  for (int i = 0; i < 8; ++i) v(i) = rng.uniform(-1, 1);
  CrossbarSolver s(t, p);
  for (double r : s.kcl_relative_residuals(s.solve(v), v)) EXPECT_LE(r, 1e-9);
}

TEST(SolveCrossbar, Linearity) {
  Rng rng(6);
  const auto p = params_for(7, 6, 300, 4, 6, 500);
  const auto t = random_tile(7, 6, p, rng);
  Eigen::VectorXd v1(7), v2(7);
  for (int i = 0; i < 7; ++i) {
    v1(i) = rng.uniform(-1, 1);
    v2(i) = rng.uniform(-1, 1);
  }
  CrossbarSolver s(t, p);
  const Eigen::VectorXd lhs = s.solve(0.7 * v1 - 1.3 * v2).currents;
  const Eigen::VectorXd rhs = 0.7 * s.solve(v1).currents - 1.3 * s.solve(v2).currents;
  EXPECT_LE(oracle::max_rel_diff(lhs, rhs), 1e-9);
}

TEST(SolveCrossbar, ZeroInputGivesZeroCurrents) {
  Rng rng(7);
  const auto p = params_for(3, 3, 100, 1, 1, 100);
  EXPECT_TRUE(solve_crossbar(random_tile(3, 3, p, rng), p, Eigen::VectorXd::Zero(3)).currents.isZero(0.0));
}

TEST(SolveCrossbar, ZeroConductanceTileCarriesNoCurrent) {
  for (double r : {0.0, 5.0}) {
    const auto p = params_for(2, 2, r, r, r, r);
    ConductanceTile t{Eigen::MatrixXd::Zero(2, 2)};
    EXPECT_TRUE(solve_crossbar(t, p, Eigen::VectorXd::Ones(2)).currents.isZero(0.0)) << r;
  }
}

TEST(SolveCrossbar, NonFiniteInputThrows) {
  const auto p = params_for(2, 2, 10, 1, 1, 10);
  ConductanceTile t{Eigen::MatrixXd::Constant(2, 2, 1e-5)};
  Eigen::VectorXd v = Eigen::VectorXd::Ones(2);
  v(1) = std::nan("");
  EXPECT_THROW(solve_crossbar(t, p, v), UsageError);
  t.g(0, 0) = INFINITY;
  EXPECT_THROW(solve_crossbar(t, p, Eigen::VectorXd::Ones(2)), UsageError);
}

TEST(SolveCrossbar, ParamValidation) {
  CrossbarParams p;
  p.g_min = p.g_max;
  EXPECT_THROW(p.validate(), UsageError);
  p = CrossbarParams{};
  p.r_sense = -1;
  EXPECT_THROW(p.validate(), UsageError);
  p = CrossbarParams{};
  p.sigma_dev = 0.34;
  EXPECT_THROW(p.validate(), UsageError);
  p = CrossbarParams{};
  p.n_rows = 1025;
  EXPECT_THROW(p.validate(), UsageError);
  EXPECT_DOUBLE_EQ(CrossbarParams{}.on_off_ratio(), 10.0);
}

TEST(EffectiveConductance, IdealLimitEqualsG) {
  Rng rng(8);
  const auto p = params_for(5, 7, 0, 0, 0, 0);
  const auto t = random_tile(5, 7, p, rng);
  EXPECT_LE(oracle::max_rel_diff(extract_effective_conductance(t, p), t.g), 1e-9);
}

TEST(EffectiveConductance, SeriesFormula1x1) {
  const auto p = params_for(1, 1, 1e3, 0, 0, 1e3);
  ConductanceTile t{Eigen::MatrixXd::Constant(1, 1, 1e-4)};
  const double want = 1.0 / (1.0 / 1e-4 + 1e3 + 1e3);
  EXPECT_NEAR(extract_effective_conductance(t, p)(0, 0), want, 1e-9 * want);
  EXPECT_NEAR(want, 8.3333e-5, 1e-9);
}

TEST(EffectiveConductance, ReproducesSolverForRandomInputs) {
  Rng rng(9);
  const auto p = params_for(4, 4, 700, 8, 12, 900);
  const auto t = random_tile(4, 4, p, rng);
  const Eigen::MatrixXd gp = extract_effective_conductance(t, p);
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd v(4);
    for (int i = 0; i < 4; ++i) v(i) = rng.uniform(-1, 1);
    const Eigen::VectorXd direct = solve_crossbar(t, p, v).currents;
    EXPECT_LE(oracle::max_rel_diff(gp.transpose() * v, direct), 1e-9);
  }
}

TEST(EffectiveConductance, VReadScalingIsExact) {
  Rng rng(10);
  auto p = params_for(3, 3, 400, 2.5, 2.5, 400);
  const auto t = random_tile(3, 3, p, rng);
  const Eigen::MatrixXd a = extract_effective_conductance(t, p);
  p.v_read = 0.2;
  EXPECT_LE(oracle::max_rel_diff(extract_effective_conductance(t, p), a), 1e-9);
}

TEST(DeviceVariation, ZeroSigmaIsIdentity) {
  Rng a(11), b(11);
  const auto p = params_for(4, 4, 1, 1, 1, 1);
  const auto t = random_tile(4, 4, p, a);
  Rng r(3);
  EXPECT_EQ(apply_device_variation(t, 0.0, r).g, t.g);
}

TEST(DeviceVariation, SameStreamIsBitwiseIdentical) {
  ConductanceTile t{Eigen::MatrixXd::Constant(8, 8, 2e-5)};
  Rng r1(12), r2(12);
  EXPECT_EQ(apply_device_variation(t, 0.1, r1).g, apply_device_variation(t, 0.1, r2).g);
}

TEST(DeviceVariation, MonteCarloStatistics) {
  ConductanceTile t{Eigen::MatrixXd::Constant(100, 100, 2e-5)};
  Rng r(13);
  const Eigen::ArrayXXd ratio = apply_device_variation(t, 0.1, r).g.array() / 2e-5;
  const double mean = ratio.mean();
  const double sd = std::sqrt((ratio - mean).square().mean());
  EXPECT_NEAR(mean, 1.0, 0.01);
  EXPECT_NEAR(sd, 0.1, 0.01);
  EXPECT_GE(ratio.minCoeff(), 1.0 - 0.3 - 1e-12);
  EXPECT_LE(ratio.maxCoeff(), 1.0 + 0.3 + 1e-12);
}

TEST(DeviceVariation, SigmaOutOfRangeThrows) {
  ConductanceTile t{Eigen::MatrixXd::Constant(2, 2, 2e-5)};
  Rng r(1);
  EXPECT_THROW(apply_device_variation(t, 0.34, r), UsageError);
  EXPECT_THROW(apply_device_variation(t, -0.1, r), UsageError);
}

TEST(NonidealityFactor, EqualCurrentsGiveZero) {
  const Eigen::VectorXd i = Eigen::VectorXd::Constant(3, 1e-4);
  const auto r = nonideality_factor(i, i);
  ASSERT_TRUE(r.mean_nf);
  EXPECT_EQ(*r.mean_nf, 0.0);
}

TEST(NonidealityFactor, SeriesCase) {
  const auto r = nonideality_factor(Eigen::VectorXd::Constant(1, 1e-4), Eigen::VectorXd::Constant(1, 8.3333e-5));
  EXPECT_NEAR(*r.mean_nf, 0.16667, 1e-5);
}

TEST(NonidealityFactor, ExclusionRule) {
  Eigen::VectorXd ideal(2), non(2);
  ideal << 0, 1e-4;
  non << 0, 9e-5;
  const auto r = nonideality_factor(ideal, non, 1e-12);
  ASSERT_EQ(r.excluded_columns, std::vector<int>{0});
  EXPECT_TRUE(std::isnan(r.per_column_nf[0]));
  EXPECT_NEAR(*r.mean_nf, 0.1, 1e-12);
}

TEST(NonidealityFactor, AllExcludedIsUndefined) {
  const auto r = nonideality_factor(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3));
  EXPECT_FALSE(r.mean_nf.has_value());
  EXPECT_EQ(r.excluded_columns.size(), 3u);
}

TEST(NonidealityFactor, LengthMismatchThrows) {
  EXPECT_THROW(nonideality_factor(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)), UsageError);
}
