#include "fgcca/deflation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fgcca/errors.hpp"

using namespace fgcca;

namespace {

double cosine(const GridFunction& a, const GridFunction& b) {
  return inner_product(a, b) / (l2_norm(a) * l2_norm(b));
}

// Low-frequency Fourier mix; nfreq = 2 spans 1, sin/cos(2 pi t), sin/cos(4 pi t).
Eigen::VectorXd rich_vector(const TimeGrid& grid, std::mt19937_64& rng, int nfreq = 2) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(grid.size(), normal(rng));
  for (int q = 1; q <= nfreq; ++q) {
    const double a = normal(rng), b = normal(rng);
    for (int k = 0; k < grid.size(); ++k) {
      const double t = grid.points()(k);
      v(k) += a * std::sin(2.0 * M_PI * q * t) + b * std::cos(2.0 * M_PI * q * t);
    }
  }
  return v;
}

GridFunction unit_function(TimeGridPtr grid, std::mt19937_64& rng) {
  GridFunction f(grid, rich_vector(*grid, rng));
  f.values /= l2_norm(f);
  return f;
}

// Exactly orthonormal under the grid's quadrature weights (Gram-Schmidt,
// run twice for stability).
std::vector<GridFunction> orthonormal_functions(TimeGridPtr grid, int count,
                                                std::mt19937_64& rng) {
  std::vector<GridFunction> basis;
  for (int r = 0; r < count; ++r) {
    GridFunction f(grid, rich_vector(*grid, rng, 3));
    for (int pass = 0; pass < 2; ++pass)
      for (const GridFunction& b : basis) f.values -= inner_product(b, f) * b.values;
    f.values /= l2_norm(f);
    basis.push_back(std::move(f));
  }
  return basis;
}

// Smooth kernels rich enough to survive several deflation rounds: rank-5
// PSD selfs, rank-4 crosses.
CovarianceSet rich_problem(int nproc, TimeGridPtr grid, std::mt19937_64& rng) {
  CovarianceSet set(nproc);
  for (int j = 0; j < nproc; ++j) {
    Eigen::MatrixXd self = Eigen::MatrixXd::Zero(grid->size(), grid->size());
    for (int r = 0; r < 5; ++r) {
      Eigen::VectorXd v = rich_vector(*grid, rng);
      self += v * v.transpose() / (1.0 + r);
    }
    set.set(j, j, GridOperator(grid, grid, self));
    for (int jp = j + 1; jp < nproc; ++jp) {
      Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(grid->size(), grid->size());
      for (int r = 0; r < 4; ++r) {
        Eigen::VectorXd u = rich_vector(*grid, rng);
        Eigen::VectorXd v = rich_vector(*grid, rng);
        cross += u * v.transpose() / (1.0 + r);
      }
      set.set(j, jp, GridOperator(grid, grid, cross));
    }
  }
  return set;
}

}  // namespace

TEST(DeflateOrthogonal, AnnihilatesDeflatedPairOnBothSides) {
  auto row_grid = TimeGrid::uniform(0.0, 1.0, 41);
  auto col_grid = TimeGrid::uniform(0.0, 2.0, 57);
  std::mt19937_64 rng(11);
  Eigen::MatrixXd k(41, 57);
  for (int r = 0; r < 41; ++r)
    for (int c = 0; c < 57; ++c) k(r, c) = std::sin(0.3 * r) * std::cos(0.2 * c) + 0.1;
  GridOperator op(row_grid, col_grid, k);
  GridFunction fr = unit_function(row_grid, rng);
  GridFunction fc = unit_function(col_grid, rng);

  GridOperator deflated = deflate_orthogonal(op, fr, fc);
  EXPECT_LT(apply_operator(deflated, fc).values.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(apply_operator(transpose(deflated), fr).values.cwiseAbs().maxCoeff(), 1e-10);

  GridFunction g = unit_function(col_grid, rng);
  GridFunction h = unit_function(row_grid, rng);
  EXPECT_NEAR(bilinear_form(fr, deflated, g), 0.0, 1e-10);
  EXPECT_NEAR(bilinear_form(h, deflated, fc), 0.0, 1e-10);
}

TEST(DeflateOrthogonal, PreservesActionOnOrthogonalComplement) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 61);
  std::mt19937_64 rng(12);
  auto basis = orthonormal_functions(grid, 4, rng);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(61, 61);
  for (int r = 0; r < 3; ++r) {
    Eigen::VectorXd u = rich_vector(*grid, rng);
    Eigen::VectorXd v = rich_vector(*grid, rng);
    k += u * v.transpose();
  }
  GridOperator op(grid, grid, k);

  GridOperator deflated = deflate_orthogonal(op, basis[0], basis[1]);
  // basis[2] is orthogonal to both deflated directions, so the projections
  // change nothing of the bilinear form against basis[3].
  EXPECT_NEAR(bilinear_form(basis[3], deflated, basis[2]),
              bilinear_form(basis[3], op, basis[2]), 1e-10);
}

TEST(DeflateOrthogonal, RejectsNonUnitFunctions) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 31);
  std::mt19937_64 rng(13);
  GridOperator op(grid, grid, Eigen::MatrixXd::Ones(31, 31));
  GridFunction good = unit_function(grid, rng);
  GridFunction bad = good;
  bad.values *= 2.0;

  try {
    deflate_orthogonal(op, bad, good);
    FAIL() << "expected normalization error";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::normalization_error);
    EXPECT_NE(std::string(e.what()).find("unit norm"), std::string::npos);
  }
  EXPECT_THROW(deflate_orthogonal(op, good, bad), FgccaError);
}

TEST(DeflateOrthogonal, RejectsMismatchedGrids) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 31);
  auto other = TimeGrid::uniform(0.0, 1.0, 30);
  std::mt19937_64 rng(14);
  GridOperator op(grid, grid, Eigen::MatrixXd::Ones(31, 31));
  GridFunction f = unit_function(grid, rng);
  GridFunction g = unit_function(other, rng);
  try {
    deflate_orthogonal(op, f, g);
    FAIL() << "expected incompatible grid";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::incompatible_grid);
  }
}

TEST(DeflateOrthogonal, RemovesRankOneKernelCompletely) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 51);
  std::mt19937_64 rng(15);
  GridFunction u = unit_function(grid, rng);
  GridFunction v = unit_function(grid, rng);
  GridOperator op(grid, grid, 3.0 * (u.values * v.values.transpose()));

  GridOperator deflated = deflate_orthogonal(op, u, v);
  EXPECT_LT(deflated.max_abs(), 1e-10);
}

TEST(DeflateUncorrelated, RemovesMatchedRankOneStructure) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 51);
  std::mt19937_64 rng(16);
  GridFunction u = unit_function(grid, rng);
  GridFunction v = unit_function(grid, rng);
  GridOperator cross(grid, grid, u.values * v.values.transpose());
  GridOperator self_u(grid, grid, u.values * u.values.transpose());
  GridOperator self_v(grid, grid, v.values * v.values.transpose());

  GridOperator deflated = deflate_uncorrelated(cross, self_u, self_v, u, v);
  EXPECT_LT(deflated.max_abs(), 1e-10);
  EXPECT_LT(apply_operator(deflated, v).values.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DeflateUncorrelated, MatchesOrthogonalOnSelfEigenfunction) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 45);
  std::mt19937_64 rng(17);
  auto basis = orthonormal_functions(grid, 4, rng);
  // Selfs built so the deflated function is an exact eigenfunction: the
  // oblique projector then collapses to the orthogonal one.
  Eigen::MatrixXd self_r = 2.5 * (basis[0].values * basis[0].values.transpose()) +
                           0.7 * (basis[2].values * basis[2].values.transpose());
  Eigen::MatrixXd self_c = 1.3 * (basis[1].values * basis[1].values.transpose()) +
                           0.4 * (basis[3].values * basis[3].values.transpose());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(45, 45);
  for (int r = 0; r < 3; ++r) {
    Eigen::VectorXd u = rich_vector(*grid, rng);
    Eigen::VectorXd v = rich_vector(*grid, rng);
    k += u * v.transpose();
  }
  GridOperator op(grid, grid, k);

  GridOperator oblique = deflate_uncorrelated(op, GridOperator(grid, grid, self_r),
                                              GridOperator(grid, grid, self_c), basis[0], basis[1]);
  GridOperator orthogonal = deflate_orthogonal(op, basis[0], basis[1]);
  EXPECT_LT((oblique.kernel - orthogonal.kernel).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DeflateUncorrelated, IsScaleInvariantInTheFunctions) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 41);
  std::mt19937_64 rng(18);
  CovarianceSet set = rich_problem(2, grid, rng);
  GridFunction f = unit_function(grid, rng);
  GridFunction g = unit_function(grid, rng);
  GridFunction f_scaled = f;
  f_scaled.values *= 3.7;
  GridFunction g_scaled = g;
  g_scaled.values *= 0.2;

  GridOperator base =
      deflate_uncorrelated(set.get(0, 1), set.get(0, 0), set.get(1, 1), f, g);
  GridOperator scaled =
      deflate_uncorrelated(set.get(0, 1), set.get(0, 0), set.get(1, 1), f_scaled, g_scaled);
  EXPECT_LT((base.kernel - scaled.kernel).cwiseAbs().maxCoeff(), 1e-10 * base.max_abs());
}

TEST(DeflateUncorrelated, RejectsNonpositiveComponentEnergy) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 31);
  std::mt19937_64 rng(19);
  GridFunction u = unit_function(grid, rng);
  GridOperator cross(grid, grid, Eigen::MatrixXd::Ones(31, 31));
  GridOperator good_self(grid, grid, u.values * u.values.transpose());
  GridOperator bad_self(grid, grid, -(u.values * u.values.transpose()));

  try {
    deflate_uncorrelated(cross, bad_self, good_self, u, u);
    FAIL() << "expected degenerate component";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_component);
    EXPECT_NE(std::string(e.what()).find("uncorrelated"), std::string::npos);
  }
  EXPECT_THROW(deflate_uncorrelated(cross, good_self, bad_self, u, u), FgccaError);
}

TEST(DeflateAll, KeepsTransposeConsistencyAndDeflatesSelfs) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 41);
  std::mt19937_64 rng(20);
  CovarianceSet set = rich_problem(3, grid, rng);
  std::vector<GridFunction> fs;
  for (int j = 0; j < 3; ++j) fs.push_back(unit_function(grid, rng));

  for (DeflationMode mode : {DeflationMode::orthogonal, DeflationMode::uncorrelated}) {
    CovarianceSet out = deflate_all(set, fs, mode);
    for (int j = 0; j < 3; ++j) {
      // Self kernels are deflated too.
      EXPECT_GT((out.get(j, j).kernel - set.get(j, j).kernel).cwiseAbs().maxCoeff(), 1e-6);
      for (int jp = 0; jp < 3; ++jp) {
        EXPECT_EQ((out.get(j, jp).kernel - out.get(jp, j).kernel.transpose())
                      .cwiseAbs()
                      .maxCoeff(),
                  0.0);
      }
    }
    if (mode == DeflationMode::orthogonal) {
      for (int j = 0; j < 3; ++j)
        for (int jp = 0; jp < 3; ++jp)
          EXPECT_LT(apply_operator(out.get(j, jp), fs[jp]).values.cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(DeflateAll, NormalizesFunctionCopiesInOrthogonalMode) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 41);
  std::mt19937_64 rng(21);
  CovarianceSet set = rich_problem(2, grid, rng);
  std::vector<GridFunction> unit{unit_function(grid, rng), unit_function(grid, rng)};
  std::vector<GridFunction> scaled = unit;
  scaled[0].values *= 5.0;
  scaled[1].values *= 0.01;

  CovarianceSet a = deflate_all(set, unit, DeflationMode::orthogonal);
  CovarianceSet b = deflate_all(set, scaled, DeflationMode::orthogonal);
  EXPECT_LT((a.get(0, 1).kernel - b.get(0, 1).kernel).cwiseAbs().maxCoeff(), 1e-12);
  // Inputs stay untouched.
  EXPECT_EQ(scaled[0].values.cwiseAbs().maxCoeff(), 5.0 * unit[0].values.cwiseAbs().maxCoeff());

  std::vector<GridFunction> zero{GridFunction::zero(grid), unit[1]};
  try {
    deflate_all(set, zero, DeflationMode::orthogonal);
    FAIL() << "expected degenerate component";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_component);
    EXPECT_NE(std::string(e.what()).find("process 1"), std::string::npos);
  }
}

TEST(FitHigherOrder, SingleOrderMatchesFitSingle) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 41);
  std::mt19937_64 rng(22);
  CovarianceSet set = rich_problem(2, grid, rng);
  FgccaConfig config = FgccaConfig::defaults(2);

  SolverState single = fit_single(set, config);
  FgccaFit fit = fit_higher_order(set, config);

  ASSERT_EQ(fit.orders(), 1);
  ASSERT_EQ(fit.process_count(), 2);
  EXPECT_EQ(fit.converged[0], single.converged);
  ASSERT_EQ(fit.traces[0].size(), single.criterion_trace.size());
  for (size_t i = 0; i < single.criterion_trace.size(); ++i)
    EXPECT_EQ(fit.traces[0][i], single.criterion_trace[i]);
  for (int j = 0; j < 2; ++j) {
    // tau = 1 returns unit-norm functions, so the recorded basis is the
    // solver output up to a normalization by something within 1e-12 of 1.
    EXPECT_LT((fit.functions[0][j].values - single.functions[j].values).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(FitHigherOrder, RecoversSingularTripletsInOrder) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 61);
  std::mt19937_64 rng(23);
  auto us = orthonormal_functions(grid, 3, rng);
  auto vs = orthonormal_functions(grid, 3, rng);
  const double sigma[3] = {3.0, 1.5, 0.5};
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(61, 61);
  for (int r = 0; r < 3; ++r) k += sigma[r] * (us[r].values * vs[r].values.transpose());

  CovarianceSet set(2);
  set.set(0, 0, GridOperator(grid, grid, Eigen::MatrixXd::Zero(61, 61)));
  set.set(1, 1, GridOperator(grid, grid, Eigen::MatrixXd::Zero(61, 61)));
  set.set(0, 1, GridOperator(grid, grid, k));

  FgccaConfig config = FgccaConfig::defaults(2);
  config.n_components = 3;
  FgccaFit fit = fit_higher_order(set, config);

  ASSERT_EQ(fit.orders(), 3);
  for (int m = 0; m < 3; ++m) {
    EXPECT_TRUE(fit.converged[m]);
    EXPECT_GE(std::abs(cosine(fit.functions[m][0], us[m])), 1.0 - 1e-8) << "order " << m + 1;
    EXPECT_GE(std::abs(cosine(fit.functions[m][1], vs[m])), 1.0 - 1e-8) << "order " << m + 1;
    EXPECT_NEAR(fit.traces[m].back(), 2.0 * sigma[m], 1e-7) << "order " << m + 1;
  }
}

TEST(FitHigherOrder, OrthogonalBasisGramIsIdentity) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 51);
  std::mt19937_64 rng(24);
  CovarianceSet set = rich_problem(2, grid, rng);
  FgccaConfig config = FgccaConfig::defaults(2);
  config.n_components = 4;

  FgccaFit fit = fit_higher_order(set, config);
  ASSERT_EQ(fit.orders(), 4);
  for (int j = 0; j < 2; ++j) {
    for (int m = 0; m < 4; ++m) {
      for (int mp = 0; mp < 4; ++mp) {
        const double expected = m == mp ? 1.0 : 0.0;
        EXPECT_NEAR(inner_product(fit.functions[m][j], fit.functions[mp][j]), expected, 1e-8)
            << "process " << j << " orders " << m + 1 << "," << mp + 1;
      }
    }
  }
}

TEST(FitHigherOrder, UncorrelatedConsecutiveInnerProductsVanish) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 51);
  std::mt19937_64 rng(25);
  CovarianceSet set = rich_problem(3, grid, rng);
  FgccaConfig config = FgccaConfig::defaults(3);
  config.n_components = 3;
  config.deflation = DeflationMode::uncorrelated;

  FgccaFit fit = fit_higher_order(set, config);
  ASSERT_EQ(fit.orders(), 3);
  for (int j = 0; j < 3; ++j)
    for (int m = 0; m + 1 < 3; ++m)
      EXPECT_NEAR(inner_product(fit.functions[m][j], fit.functions[m + 1][j]), 0.0, 1e-8)
          << "process " << j << " order " << m + 1;
}

TEST(FitHigherOrder, RecordsDeflationScaling) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 41);
  std::mt19937_64 rng(26);
  CovarianceSet set = rich_problem(2, grid, rng);

  FgccaConfig config = FgccaConfig::defaults(2);
  config.n_components = 2;
  config.deflation = DeflationMode::uncorrelated;
  FgccaFit fit = fit_higher_order(set, config);
  ASSERT_EQ(fit.deflation_d.size(), 1u);
  ASSERT_EQ(fit.deflation_d[0].size(), 2u);
  for (int j = 0; j < 2; ++j) {
    const double energy = bilinear_form(fit.functions[0][j], set.get(j, j), fit.functions[0][j]);
    EXPECT_NEAR(fit.deflation_d[0][j], 1.0 / energy, 1e-10 * std::abs(1.0 / energy));
  }

  config.deflation = DeflationMode::orthogonal;
  EXPECT_TRUE(fit_higher_order(set, config).deflation_d.empty());
}

TEST(FitHigherOrder, NamesFailingOrder) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 41);
  std::mt19937_64 rng(27);
  auto bs = orthonormal_functions(grid, 2, rng);
  auto cs = orthonormal_functions(grid, 2, rng);

  // Order 1 lands on (b0, c0) where the self-energy is positive; the first
  // deflation round leaves exactly b1 c1^T, and b1 carries negative energy in
  // the indefinite self kernel, so round two must refuse to deflate.
  CovarianceSet set(2);
  set.set(0, 0, GridOperator(grid, grid,
                             bs[0].values * bs[0].values.transpose() -
                                 0.5 * (bs[1].values * bs[1].values.transpose())));
  set.set(1, 1, GridOperator(grid, grid,
                             cs[0].values * cs[0].values.transpose() +
                                 cs[1].values * cs[1].values.transpose()));
  set.set(0, 1, GridOperator(grid, grid,
                             3.0 * (bs[0].values * cs[0].values.transpose()) +
                                 bs[1].values * cs[1].values.transpose()));

  FgccaConfig config = FgccaConfig::defaults(2);
  config.n_components = 3;
  config.deflation = DeflationMode::uncorrelated;
  try {
    fit_higher_order(set, config);
    FAIL() << "expected degenerate component";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_component);
    EXPECT_NE(std::string(e.what()).find("order 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("process 1"), std::string::npos);
  }

  // A self kernel too negative for the tau < 1 metric fails inside the fit
  // itself and reports the order as well. The bad direction sits away from
  // the initializer so the failure surfaces at the first solve.
  CovarianceSet bad(2);
  bad.set(0, 0, GridOperator(grid, grid, -10.0 * (bs[1].values * bs[1].values.transpose())));
  bad.set(1, 1, GridOperator(grid, grid, cs[0].values * cs[0].values.transpose()));
  bad.set(0, 1, GridOperator(grid, grid, bs[0].values * cs[0].values.transpose()));
  FgccaConfig half = FgccaConfig::defaults(2);
  half.tau = Eigen::VectorXd::Constant(2, 0.5);
  try {
    fit_higher_order(bad, half);
    FAIL() << "expected ill-posed metric";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::ill_posed_metric);
    EXPECT_NE(std::string(e.what()).find("order 1"), std::string::npos);
  }
}

TEST(FitHigherOrder, ValidatesConfigUpFront) {
  auto grid = TimeGrid::uniform(0.0, 1.0, 31);
  std::mt19937_64 rng(28);
  CovarianceSet set = rich_problem(2, grid, rng);
  FgccaConfig config = FgccaConfig::defaults(2);
  config.tau(0) = 0.0;
  try {
    fit_higher_order(set, config);
    FAIL() << "expected invalid config";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_config);
  }
}
