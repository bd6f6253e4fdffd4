#ifndef FGCCA_SIMULATION_HPP
#define FGCCA_SIMULATION_HPP

#include <limits>
#include <string>
#include <vector>

#include "fgcca/components.hpp"

namespace fgcca {

// Fraction of grid points retained per subject and process. The rate is drawn
// uniformly from the band, so "high" keeps between 10% and 40%.
enum class Sparsity { dense, low, medium, high };

Sparsity sparsity_from_string(const std::string& name);
std::string sparsity_to_string(Sparsity level);

struct SimSpec {
  int processes = 3;
  int basis_size = 6;
  Eigen::MatrixXd score_cov;  // (J*M) x (J*M) SPD; empty picks default_score_cov
  int subjects = 100;
  int grid_size = 50;
  Sparsity sparsity = Sparsity::dense;
  double sigma2 = 0.0;
  unsigned long long seed = 0;

  void validate() const;

  // Variance 1, 0.8, 0.6, ... (floored at 0.1) per order within each process,
  // correlation 0.5 between processes on matching orders, zero elsewhere.
  // Index layout is process-major: (j, m) -> j * basis_size + m.
  static Eigen::MatrixXd default_score_cov(int processes, int basis_size);
};

struct SimTruth {
  TimeGridPtr grid;
  std::vector<GridFunction> basis;            // shared across processes
  Eigen::MatrixXd scores;                     // subjects x (J * basis size)
  std::vector<Eigen::MatrixXd> trajectories;  // per process, subjects x grid, noiseless

  int index(int process, int order) const {
    return process * static_cast<int>(basis.size()) + order;
  }
};

struct SimData {
  LongitudinalDataset dataset;
  SimTruth truth;
};

// phi_1 = 1, phi_{2k} = sqrt(2) sin(2 pi k t), phi_{2k+1} = sqrt(2) cos(2 pi k t).
std::vector<GridFunction> fourier_basis(int count, TimeGridPtr grid);

// Joint Gaussian scores, trajectories on a uniform [0,1] grid, noisy
// observations on a per-subject random subset of at least 2 grid points.
// Bit-reproducible for a fixed seed.
SimData generate(const SimSpec& spec);

// Decomposition oracles. They factorize the weighted kernel matrix directly
// and never go through the block-ascent solver.
std::vector<GridFunction> top_eigenfunctions(const GridOperator& op, int count);

struct SingularFunctions {
  std::vector<GridFunction> row;
  std::vector<GridFunction> col;
  Eigen::VectorXd values;
};
SingularFunctions top_singular_functions(const GridOperator& op, int count);

// Score posterior mean assembled from the full joint covariance of
// (observations, scores) and solved with a dense LU factorization. Applies
// the same 1e-10 noise floor as the production scorer but shares none of its
// code path.
Eigen::VectorXd conditional_scores_bruteforce(const std::vector<SparseSample>& observations,
                                              const ScoreModel& model);

struct AlignedError {
  double function_mse = 0.0;
  double component_mse = std::numeric_limits<double>::quiet_NaN();
  double sign = 1.0;
};

// Sign chosen to minimize the squared L2 distance between the functions; the
// same sign is applied to the estimated scores.
AlignedError align_one(const GridFunction& estimate, const GridFunction& truth,
                       const Eigen::VectorXd& estimated_scores,
                       const Eigen::VectorXd& true_scores);
double aligned_function_mse(const GridFunction& estimate, const GridFunction& truth);

struct BenchRow {
  int replicate = 0;
  std::string method;
  int process = 0;  // 1-based
  int order = 0;    // 1-based; reconstruction rows carry the order count used
  double function_mse = std::numeric_limits<double>::quiet_NaN();
  double component_mse = std::numeric_limits<double>::quiet_NaN();
  double mrse = std::numeric_limits<double>::quiet_NaN();
};

struct BenchReport {
  std::string name;
  SimSpec spec;
  int replicates = 0;
  int failures = 0;
  double runtime_seconds = 0.0;  // informational only, never written to files
  std::vector<BenchRow> rows;

  // Mean of one metric over rows matching method and order, processes pooled.
  double mean(const std::string& method, int order, double BenchRow::*metric) const;
};

// Component recovery, scoring by conditional mean against scoring by direct
// quadrature, on one fully connected fit per replicate.
BenchReport run_sim1(const SimSpec& spec, int replicates, int threads = 1);

// Two processes; canonical functions from the fit against eigenfunctions of
// the self-covariance and singular functions of the cross-covariance. All
// three function sets are scored with the same conditional-mean machinery.
BenchReport run_sim2(const SimSpec& spec, int replicates, int threads = 1);

// Trajectory reconstruction; MRSE is the mean over subjects of the quadrature
// ratio integral((Xhat - X)^2) / integral(X^2) against noiseless truth. Rows
// cover every truncation level: order m uses only the first m components.
BenchReport run_sim3(const SimSpec& spec, int replicates, int threads = 1);

// 16 hex characters over the spec fields; stable across runs.
std::string spec_hash(const SimSpec& spec);
std::string bench_file_stem(const BenchReport& report);

void write_bench_csv(const BenchReport& report, const std::string& path);
void write_bench_summary(const BenchReport& report, const std::string& path);

// Plain logistic regression fit by iteratively reweighted least squares with
// a small ridge, intercept in column 0 of the returned coefficients. Backs
// the outcome-vote bench recipe.
Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                             int max_iters = 50, double tolerance = 1e-10);

}  // namespace fgcca

#endif
