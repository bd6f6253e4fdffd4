#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "fgcca/components.hpp"
#include "fgcca/covariance.hpp"
#include "fgcca/deflation.hpp"
#include "fgcca/simulation.hpp"
#include "fgcca/solver.hpp"

using namespace fgcca;

namespace {

SimData make_data(int subjects, int grid_size, Sparsity sparsity) {
  SimSpec spec;
  spec.processes = 2;
  spec.basis_size = 3;
  spec.subjects = subjects;
  spec.grid_size = grid_size;
  spec.sparsity = sparsity;
  spec.sigma2 = 0.25;
  spec.seed = 17;
  return generate(spec);
}

EstimationOptions grid_options(int grid_size, const TimeGridPtr& grid) {
  EstimationOptions options;
  options.grid_size = grid_size;
  options.shared_grid = grid;
  options.normalize = false;
  const double spacing = 1.0 / (grid_size - 1);
  options.mean_bandwidth = 3.0 * spacing;
  options.surface_bandwidth = 4.0 * spacing;
  return options;
}

CovarianceSet random_problem(int nproc, const TimeGridPtr& grid, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto wave = [&] {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(grid->size(), normal(rng));
    for (int q = 1; q <= 3; ++q) {
      const double a = normal(rng), b = normal(rng);
      for (int k = 0; k < grid->size(); ++k) {
        const double t = grid->points()(k);
        v(k) += a * std::sin(2.0 * M_PI * q * t) + b * std::cos(2.0 * M_PI * q * t);
      }
    }
    return v;
  };
  CovarianceSet set(nproc);
  for (int j = 0; j < nproc; ++j) {
    Eigen::MatrixXd self = Eigen::MatrixXd::Zero(grid->size(), grid->size());
    for (int r = 0; r < 5; ++r) {
      const Eigen::VectorXd v = wave();
      self += v * v.transpose() / (1.0 + r);
    }
    set.set(j, j, GridOperator(grid, grid, self));
    for (int jp = j + 1; jp < nproc; ++jp) {
      Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(grid->size(), grid->size());
      for (int r = 0; r < 4; ++r) cross += wave() * wave().transpose() / (1.0 + r);
      set.set(j, jp, GridOperator(grid, grid, cross));
    }
  }
  return set;
}

void BM_SurfaceEstimation(benchmark::State& state) {
  const int grid_size = static_cast<int>(state.range(0));
  const SimData data = make_data(100, grid_size, Sparsity::medium);
  const EstimationOptions options = grid_options(grid_size, data.truth.grid);
  const GridFunction mean_a =
      estimate_mean(data.dataset, 0, data.truth.grid, options.mean_bandwidth);
  const GridFunction mean_b =
      estimate_mean(data.dataset, 1, data.truth.grid, options.mean_bandwidth);
  for (auto _ : state) {
    GridOperator surface =
        estimate_cross_covariance(data.dataset, 0, 1, mean_a, mean_b,
                                  options.surface_bandwidth, options.surface_bandwidth);
    benchmark::DoNotOptimize(surface.kernel.data());
  }
}
BENCHMARK(BM_SurfaceEstimation)->Arg(25)->Arg(51)->Unit(benchmark::kMillisecond);

void BM_SolverSweep(benchmark::State& state) {
  const int grid_size = static_cast<int>(state.range(0));
  const TimeGridPtr grid = TimeGrid::uniform(0.0, 1.0, grid_size);
  const CovarianceSet set = random_problem(3, grid, 23);
  FgccaConfig config = FgccaConfig::defaults(3);
  config.max_iters = 25;
  config.epsilon = 1e-16;  // run the full sweep budget every time
  for (auto _ : state) {
    SolverState out = fit_single(set, config);
    benchmark::DoNotOptimize(out.functions[0].values.data());
  }
}
BENCHMARK(BM_SolverSweep)->Arg(51)->Arg(101)->Unit(benchmark::kMillisecond);

void BM_HigherOrderFit(benchmark::State& state) {
  const TimeGridPtr grid = TimeGrid::uniform(0.0, 1.0, 51);
  const CovarianceSet set = random_problem(2, grid, 29);
  FgccaConfig config = FgccaConfig::defaults(2);
  config.n_components = static_cast<int>(state.range(0));
  for (auto _ : state) {
    FgccaFit fit = fit_higher_order(set, config);
    benchmark::DoNotOptimize(fit.functions.back()[0].values.data());
  }
}
BENCHMARK(BM_HigherOrderFit)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_BlupScoring(benchmark::State& state) {
  const SimData data = make_data(200, 50, state.range(0) == 0 ? Sparsity::high : Sparsity::dense);
  const ProcessModel model =
      estimate_model(data.dataset, grid_options(50, data.truth.grid));
  FgccaConfig config = FgccaConfig::defaults(2);
  config.n_components = 3;
  const FgccaFit fit = fit_higher_order(model.covariances, config);
  const ScoreModel sm = build_score_model(model, fit);
  for (auto _ : state) {
    for (int i = 0; i < data.dataset.subject_count(); ++i) {
      Eigen::VectorXd scores = blup_scores(subject_observations(data.dataset, i), sm);
      benchmark::DoNotOptimize(scores.data());
    }
  }
}
BENCHMARK(BM_BlupScoring)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
