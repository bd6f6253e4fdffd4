#include "fgcca/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "fgcca/covariance.hpp"
#include "fgcca/deflation.hpp"
#include "fgcca/errors.hpp"
#include "fgcca/solver.hpp"

#include "json.hpp"

namespace fgcca {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// splitmix64 step, so replicate streams never overlap for nearby seeds.
unsigned long long mix_seed(unsigned long long seed, unsigned long long replicate) {
  unsigned long long z = seed + 0x9e3779b97f4a7c15ULL * (replicate + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void retention_band(Sparsity level, double* lo, double* hi) {
  switch (level) {
    case Sparsity::dense: *lo = 1.0; *hi = 1.0; return;
    case Sparsity::low: *lo = 0.8; *hi = 1.0; return;
    case Sparsity::medium: *lo = 0.4; *hi = 0.8; return;
    case Sparsity::high: *lo = 0.1; *hi = 0.4; return;
  }
  *lo = 1.0;
  *hi = 1.0;
}

std::string pad_id(int value, size_t width) {
  std::string digits = std::to_string(value);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "s" + digits;
}

double lerp_at(const GridFunction& f, double t) {
  const Eigen::VectorXd& pts = f.grid->points();
  const int n = static_cast<int>(pts.size());
  const double* begin = pts.data();
  int hi = static_cast<int>(std::upper_bound(begin, begin + n, t) - begin);
  hi = std::clamp(hi, 1, n - 1);
  const int lo = hi - 1;
  const double u = (t - pts(lo)) / (pts(hi) - pts(lo));
  return (1.0 - u) * f.values(lo) + u * f.values(hi);
}

// Smoothing bandwidths matched to how much data the sparsity level leaves.
EstimationOptions sim_estimation_options(const SimSpec& spec, TimeGridPtr grid) {
  EstimationOptions options;
  options.shared_grid = std::move(grid);
  options.normalize = false;
  const double spacing = 1.0 / (spec.grid_size - 1);
  double h = 0.0;
  switch (spec.sparsity) {
    case Sparsity::dense: h = 2.2 * spacing; break;
    case Sparsity::low: h = 3.0 * spacing; break;
    case Sparsity::medium: h = 4.0 * spacing; break;
    case Sparsity::high: h = 6.0 * spacing; break;
  }
  options.mean_bandwidth = h;
  options.surface_bandwidth = h;
  return options;
}

FgccaConfig sim_fit_config(const SimSpec& spec) {
  FgccaConfig config = FgccaConfig::defaults(spec.processes);
  config.n_components = spec.basis_size;
  config.epsilon = 1e-8;
  config.max_iters = 200;
  config.seed = spec.seed;
  return config;
}

Eigen::MatrixXd score_table(const LongitudinalDataset& dataset, const ScoreModel& model,
                            bool blup) {
  const int n = dataset.subject_count();
  const int cols = model.process_count() * model.orders();
  Eigen::MatrixXd out(n, cols);
  for (int i = 0; i < n; ++i) {
    const std::vector<SparseSample> observations = subject_observations(dataset, i);
    out.row(i) = blup ? blup_scores(observations, model)
                      : quadrature_scores(observations, model, /*enforce_coverage=*/false);
  }
  return out;
}

void append_component_rows(std::vector<BenchRow>* rows, const std::string& method,
                           const std::vector<std::vector<GridFunction>>& functions,
                           const Eigen::MatrixXd& scores, const SimTruth& truth) {
  const int orders = static_cast<int>(functions.size());
  const int nproc = static_cast<int>(functions.front().size());
  for (int j = 0; j < nproc; ++j) {
    for (int m = 0; m < orders; ++m) {
      const int col = truth.index(j, m);
      const AlignedError err = align_one(functions[m][j], truth.basis[m], scores.col(col),
                                         truth.scores.col(col));
      BenchRow row;
      row.method = method;
      row.process = j + 1;
      row.order = m + 1;
      row.function_mse = err.function_mse;
      row.component_mse = err.component_mse;
      rows->push_back(std::move(row));
    }
  }
}

FgccaFit wrap_functions(std::vector<std::vector<GridFunction>> functions,
                        const FgccaConfig& config) {
  FgccaFit fit;
  fit.functions = std::move(functions);
  fit.config = config;
  fit.traces.resize(fit.functions.size());
  fit.converged.assign(fit.functions.size(), true);
  return fit;
}

template <typename Body>
BenchReport run_replicated(const char* name, const SimSpec& spec, int replicates, int threads,
                           Body&& body) {
  spec.validate();
  if (replicates < 1) fail(ErrorCode::invalid_config, "need at least one replicate");

  BenchReport report;
  report.name = name;
  report.spec = spec;
  report.replicates = replicates;

  const auto started = std::chrono::steady_clock::now();
  std::vector<std::vector<BenchRow>> rows(replicates);
  std::vector<char> failed(replicates, 0);
  std::atomic<int> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    while (true) {
      const int r = next.fetch_add(1);
      if (r >= replicates) return;
      SimSpec replicate_spec = spec;
      replicate_spec.seed = mix_seed(spec.seed, static_cast<unsigned long long>(r));
      try {
        rows[r] = body(replicate_spec);
      } catch (const FgccaError&) {
        failed[r] = 1;
      } catch (...) {
        const std::lock_guard<std::mutex> lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        failed[r] = 1;
      }
    }
  };

  const int pool_size = std::clamp(threads, 1, replicates);
  if (pool_size <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(pool_size);
    for (int k = 0; k < pool_size; ++k) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  for (int r = 0; r < replicates; ++r) {
    if (failed[r]) {
      ++report.failures;
      continue;
    }
    for (BenchRow& row : rows[r]) {
      row.replicate = r;
      report.rows.push_back(std::move(row));
    }
  }
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void format_metric(std::string* line, double value) {
  if (std::isnan(value)) return;
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  *line += buffer;
}

unsigned long long fnv1a(const std::string& text) {
  unsigned long long h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Sparsity sparsity_from_string(const std::string& name) {
  if (name == "dense") return Sparsity::dense;
  if (name == "low") return Sparsity::low;
  if (name == "medium") return Sparsity::medium;
  if (name == "high") return Sparsity::high;
  fail(ErrorCode::invalid_config,
       "unknown sparsity '" + name + "'; expected dense, low, medium or high");
}

std::string sparsity_to_string(Sparsity level) {
  switch (level) {
    case Sparsity::dense: return "dense";
    case Sparsity::low: return "low";
    case Sparsity::medium: return "medium";
    case Sparsity::high: return "high";
  }
  return "dense";
}

void SimSpec::validate() const {
  if (processes < 1) fail(ErrorCode::invalid_config, "need at least one process");
  if (basis_size < 1) fail(ErrorCode::invalid_config, "basis needs at least one function");
  if (subjects < 2) fail(ErrorCode::invalid_config, "need at least two subjects");
  if (grid_size < 4) fail(ErrorCode::invalid_config, "grid needs at least four points");
  if (!std::isfinite(sigma2) || sigma2 < 0.0)
    fail(ErrorCode::invalid_config, "noise variance must be finite and nonnegative");
  if (score_cov.size() > 0) {
    const int dim = processes * basis_size;
    if (score_cov.rows() != dim || score_cov.cols() != dim) {
      fail(ErrorCode::invalid_config,
           "score covariance is " + std::to_string(score_cov.rows()) + "x" +
               std::to_string(score_cov.cols()) + ", expected " + std::to_string(dim) + "x" +
               std::to_string(dim));
    }
    if (!score_cov.allFinite())
      fail(ErrorCode::invalid_config, "score covariance has non-finite entries");
  }
}

Eigen::MatrixXd SimSpec::default_score_cov(int processes, int basis_size) {
  const int dim = processes * basis_size;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (int m = 0; m < basis_size; ++m) {
    const double variance = std::max(1.0 - 0.2 * m, 0.1);
    for (int j = 0; j < processes; ++j)
      for (int jp = 0; jp < processes; ++jp)
        cov(j * basis_size + m, jp * basis_size + m) = variance * (j == jp ? 1.0 : 0.5);
  }
  return cov;
}

std::vector<GridFunction> fourier_basis(int count, TimeGridPtr grid) {
  if (count < 1) fail(ErrorCode::invalid_config, "basis needs at least one function");
  const Eigen::VectorXd& t = grid->points();
  const double sqrt2 = std::sqrt(2.0);
  std::vector<GridFunction> out;
  out.reserve(count);
  for (int m = 1; m <= count; ++m) {
    Eigen::VectorXd values(t.size());
    if (m == 1) {
      values.setOnes();
    } else {
      const double omega = 2.0 * std::numbers::pi * (m / 2);
      for (int i = 0; i < t.size(); ++i)
        values(i) = m % 2 == 0 ? sqrt2 * std::sin(omega * t(i)) : sqrt2 * std::cos(omega * t(i));
    }
    out.emplace_back(grid, std::move(values));
  }
  return out;
}

SimData generate(const SimSpec& spec) {
  spec.validate();
  const int nproc = spec.processes;
  const int basis_size = spec.basis_size;
  const int nsub = spec.subjects;
  const int grid_size = spec.grid_size;
  const int dim = nproc * basis_size;

  SimTruth truth;
  truth.grid = TimeGrid::uniform(0.0, 1.0, grid_size);
  truth.basis = fourier_basis(basis_size, truth.grid);

  const Eigen::MatrixXd cov =
      spec.score_cov.size() > 0 ? spec.score_cov : SimSpec::default_score_cov(nproc, basis_size);
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::invalid_config, "score covariance must be symmetric positive definite");
  const Eigen::MatrixXd root = llt.matrixL();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;

  truth.scores.resize(nsub, dim);
  Eigen::VectorXd z(dim);
  for (int i = 0; i < nsub; ++i) {
    for (int k = 0; k < dim; ++k) z(k) = normal(rng);
    truth.scores.row(i) = (root * z).transpose();
  }

  Eigen::MatrixXd basis_values(grid_size, basis_size);
  for (int m = 0; m < basis_size; ++m) basis_values.col(m) = truth.basis[m].values;
  for (int j = 0; j < nproc; ++j) {
    truth.trajectories.push_back(truth.scores.middleCols(j * basis_size, basis_size) *
                                 basis_values.transpose());
  }

  double lo = 1.0;
  double hi = 1.0;
  retention_band(spec.sparsity, &lo, &hi);
  const double sigma = std::sqrt(spec.sigma2);
  const size_t width = std::to_string(nsub - 1).size();

  std::vector<ProcessInfo> processes;
  for (int j = 0; j < nproc; ++j) {
    ProcessInfo info;
    info.id = "p" + std::to_string(j + 1);
    info.interval_start = 0.0;
    info.interval_end = 1.0;
    processes.push_back(std::move(info));
  }

  std::vector<std::string> subjects;
  std::vector<std::vector<SparseSample>> samples(nsub);
  std::vector<int> indices(grid_size);
  for (int i = 0; i < nsub; ++i) {
    subjects.push_back(pad_id(i, width));
    for (int j = 0; j < nproc; ++j) {
      int keep = grid_size;
      if (spec.sparsity != Sparsity::dense) {
        const double rate = lo + (hi - lo) * uniform01(rng);
        keep = std::clamp(static_cast<int>(std::lround(rate * grid_size)), 2, grid_size);
      }
      for (int k = 0; k < grid_size; ++k) indices[k] = k;
      if (keep < grid_size) {
        for (int k = grid_size - 1; k > 0; --k) {
          const int pick = static_cast<int>(rng() % static_cast<unsigned long long>(k + 1));
          std::swap(indices[k], indices[pick]);
        }
        std::sort(indices.begin(), indices.begin() + keep);
      }
      SparseSample sample;
      sample.times.resize(keep);
      sample.values.resize(keep);
      for (int k = 0; k < keep; ++k) {
        const int at = indices[k];
        sample.times(k) = truth.grid->points()(at);
        sample.values(k) =
            truth.trajectories[j](i, at) + (sigma > 0.0 ? sigma * normal(rng) : 0.0);
      }
      samples[i].push_back(std::move(sample));
    }
  }

  return SimData{LongitudinalDataset(std::move(processes), std::move(subjects), std::move(samples)),
                 std::move(truth)};
}

std::vector<GridFunction> top_eigenfunctions(const GridOperator& op, int count) {
  if (!op.is_square())
    fail(ErrorCode::dimension_mismatch, "eigenfunctions need a square operator");
  const int n = op.row_grid->size();
  if (count < 1 || count > n)
    fail(ErrorCode::invalid_config, "eigenfunction count must lie in [1, grid size]");
  const Eigen::VectorXd sqrt_w = op.row_grid->weights().cwiseSqrt();
  Eigen::MatrixXd sym = sqrt_w.asDiagonal() * op.kernel * sqrt_w.asDiagonal();
  sym = 0.5 * (sym + sym.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success)
    fail(ErrorCode::numerical_failure, "eigendecomposition failed");
  std::vector<GridFunction> out;
  out.reserve(count);
  for (int r = 0; r < count; ++r)
    out.emplace_back(op.row_grid, eig.eigenvectors().col(n - 1 - r).cwiseQuotient(sqrt_w));
  return out;
}

SingularFunctions top_singular_functions(const GridOperator& op, int count) {
  const int rows = op.row_grid->size();
  const int cols = op.col_grid->size();
  if (count < 1 || count > std::min(rows, cols))
    fail(ErrorCode::invalid_config, "singular function count must lie in [1, min grid size]");
  const Eigen::VectorXd sqrt_wr = op.row_grid->weights().cwiseSqrt();
  const Eigen::VectorXd sqrt_wc = op.col_grid->weights().cwiseSqrt();
  const Eigen::MatrixXd conjugated = sqrt_wr.asDiagonal() * op.kernel * sqrt_wc.asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(conjugated, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SingularFunctions out;
  out.values = svd.singularValues().head(count);
  for (int r = 0; r < count; ++r) {
    out.row.emplace_back(op.row_grid, svd.matrixU().col(r).cwiseQuotient(sqrt_wr));
    out.col.emplace_back(op.col_grid, svd.matrixV().col(r).cwiseQuotient(sqrt_wc));
  }
  return out;
}

Eigen::VectorXd conditional_scores_bruteforce(const std::vector<SparseSample>& observations,
                                              const ScoreModel& model) {
  const int nproc = model.process_count();
  const int orders = model.orders();
  const int dim = nproc * orders;
  if (static_cast<int>(observations.size()) != nproc)
    fail(ErrorCode::dimension_mismatch, "one observation set per process expected");

  int total = 0;
  for (const SparseSample& s : observations) total += s.n();
  if (total == 0) return Eigen::VectorXd::Zero(dim);

  Eigen::MatrixXd design(total, dim);
  design.setZero();
  Eigen::VectorXd residual(total);
  Eigen::VectorXd noise(total);
  int at = 0;
  for (int j = 0; j < nproc; ++j) {
    const SparseSample& s = observations[j];
    const double w = model.norm_weights[j];
    for (int k = 0; k < s.n(); ++k, ++at) {
      const double t = s.times(k);
      residual(at) = s.values(k) - lerp_at(model.means[j], t);
      noise(at) = std::max(model.noise_vars[j], 1e-10);
      for (int m = 0; m < orders; ++m)
        design(at, model.index(j, m)) = lerp_at(model.functions[m][j], t) / w;
    }
  }

  Eigen::MatrixXd obs_cov = design * model.score_cov * design.transpose();
  obs_cov.diagonal() += noise;
  const Eigen::VectorXd solved = Eigen::FullPivLU<Eigen::MatrixXd>(obs_cov).solve(residual);
  return model.score_cov * design.transpose() * solved;
}

AlignedError align_one(const GridFunction& estimate, const GridFunction& truth,
                       const Eigen::VectorXd& estimated_scores,
                       const Eigen::VectorXd& true_scores) {
  if (!estimate.grid->same_as(*truth.grid))
    fail(ErrorCode::incompatible_grid, "estimate and truth live on different grids");
  if (estimated_scores.size() != true_scores.size())
    fail(ErrorCode::dimension_mismatch, "score vectors differ in length");
  AlignedError out;
  out.sign = inner_product(estimate, truth) >= 0.0 ? 1.0 : -1.0;
  const GridFunction diff(estimate.grid, out.sign * estimate.values - truth.values);
  out.function_mse = inner_product(diff, diff);
  if (estimated_scores.size() > 0) {
    out.component_mse = (out.sign * estimated_scores - true_scores).squaredNorm() /
                        static_cast<double>(estimated_scores.size());
  }
  return out;
}

double aligned_function_mse(const GridFunction& estimate, const GridFunction& truth) {
  return align_one(estimate, truth, Eigen::VectorXd(), Eigen::VectorXd()).function_mse;
}

double BenchReport::mean(const std::string& method, int order, double BenchRow::*metric) const {
  double sum = 0.0;
  int count = 0;
  for (const BenchRow& row : rows) {
    if (row.method != method || row.order != order) continue;
    const double value = row.*metric;
    if (std::isnan(value)) continue;
    sum += value;
    ++count;
  }
  return count == 0 ? kNan : sum / count;
}

BenchReport run_sim1(const SimSpec& spec, int replicates, int threads) {
  return run_replicated("sim1", spec, replicates, threads, [](const SimSpec& replicate_spec) {
    const SimData data = generate(replicate_spec);
    const ProcessModel model =
        estimate_model(data.dataset, sim_estimation_options(replicate_spec, data.truth.grid));
    const FgccaFit fit = fit_higher_order(model.covariances, sim_fit_config(replicate_spec));
    const ScoreModel score_model = build_score_model(model, fit);

    const Eigen::MatrixXd blup = score_table(data.dataset, score_model, true);
    const Eigen::MatrixXd quadrature = score_table(data.dataset, score_model, false);

    std::vector<BenchRow> rows;
    append_component_rows(&rows, "blup", fit.functions, blup, data.truth);
    append_component_rows(&rows, "quadrature", fit.functions, quadrature, data.truth);
    return rows;
  });
}

BenchReport run_sim2(const SimSpec& spec, int replicates, int threads) {
  if (spec.processes != 2)
    fail(ErrorCode::invalid_config, "this comparison needs exactly two processes");
  return run_replicated("sim2", spec, replicates, threads, [](const SimSpec& replicate_spec) {
    const SimData data = generate(replicate_spec);
    const ProcessModel model =
        estimate_model(data.dataset, sim_estimation_options(replicate_spec, data.truth.grid));
    const FgccaConfig config = sim_fit_config(replicate_spec);
    const int orders = config.n_components;

    const FgccaFit fit = fit_higher_order(model.covariances, config);

    std::vector<std::vector<GridFunction>> fpca(orders);
    const auto eig_a = top_eigenfunctions(model.covariances.get(0, 0), orders);
    const auto eig_b = top_eigenfunctions(model.covariances.get(1, 1), orders);
    for (int m = 0; m < orders; ++m) fpca[m] = {eig_a[m], eig_b[m]};

    std::vector<std::vector<GridFunction>> fsvd(orders);
    const SingularFunctions pairs = top_singular_functions(model.covariances.get(0, 1), orders);
    for (int m = 0; m < orders; ++m) fsvd[m] = {pairs.row[m], pairs.col[m]};

    std::vector<BenchRow> rows;
    const Eigen::MatrixXd fgcca_scores =
        score_table(data.dataset, build_score_model(model, fit), true);
    append_component_rows(&rows, "fgcca", fit.functions, fgcca_scores, data.truth);

    const FgccaFit fpca_fit = wrap_functions(std::move(fpca), config);
    const Eigen::MatrixXd fpca_scores =
        score_table(data.dataset, build_score_model(model, fpca_fit), true);
    append_component_rows(&rows, "fpca", fpca_fit.functions, fpca_scores, data.truth);

    const FgccaFit fsvd_fit = wrap_functions(std::move(fsvd), config);
    const Eigen::MatrixXd fsvd_scores =
        score_table(data.dataset, build_score_model(model, fsvd_fit), true);
    append_component_rows(&rows, "fsvd", fsvd_fit.functions, fsvd_scores, data.truth);
    return rows;
  });
}

BenchReport run_sim3(const SimSpec& spec, int replicates, int threads) {
  return run_replicated("sim3", spec, replicates, threads, [](const SimSpec& replicate_spec) {
    const SimData data = generate(replicate_spec);
    const ProcessModel model =
        estimate_model(data.dataset, sim_estimation_options(replicate_spec, data.truth.grid));
    const FgccaConfig config = sim_fit_config(replicate_spec);
    const FgccaFit fit = fit_higher_order(model.covariances, config);
    const ScoreModel score_model = build_score_model(model, fit);

    const int nproc = replicate_spec.processes;
    const int orders = replicate_spec.basis_size;
    const int nsub = data.dataset.subject_count();
    const Eigen::VectorXd& weights = data.truth.grid->weights();

    // One error bucket per process and truncation level: row (j, m) holds the
    // reconstruction built from the first m components only.
    Eigen::MatrixXd error_sum = Eigen::MatrixXd::Zero(nproc, orders);
    Eigen::MatrixXi counted = Eigen::MatrixXi::Zero(nproc, orders);
    for (int i = 0; i < nsub; ++i) {
      const Eigen::VectorXd scores =
          blup_scores(subject_observations(data.dataset, i), score_model);
      Eigen::VectorXd truncated = Eigen::VectorXd::Zero(scores.size());
      for (int m = 0; m < orders; ++m) {
        for (int j = 0; j < nproc; ++j)
          truncated(score_model.index(j, m)) = scores(score_model.index(j, m));
        const std::vector<GridFunction> rebuilt = reconstruct(truncated, score_model);
        for (int j = 0; j < nproc; ++j) {
          const Eigen::VectorXd truth_values = data.truth.trajectories[j].row(i).transpose();
          const double denom = truth_values.array().square().matrix().dot(weights);
          if (denom < 1e-12) continue;
          const Eigen::VectorXd diff = rebuilt[j].values - truth_values;
          error_sum(j, m) += diff.array().square().matrix().dot(weights) / denom;
          counted(j, m) += 1;
        }
      }
    }

    std::vector<BenchRow> rows;
    for (int j = 0; j < nproc; ++j) {
      for (int m = 0; m < orders; ++m) {
        BenchRow row;
        row.method = "fgcca";
        row.process = j + 1;
        row.order = m + 1;
        row.mrse = counted(j, m) == 0 ? kNan : error_sum(j, m) / counted(j, m);
        rows.push_back(std::move(row));
      }
    }
    return rows;
  });
}

std::string spec_hash(const SimSpec& spec) {
  std::string canon = "J=" + std::to_string(spec.processes) +
                      ";M=" + std::to_string(spec.basis_size) +
                      ";N=" + std::to_string(spec.subjects) +
                      ";G=" + std::to_string(spec.grid_size) +
                      ";sparsity=" + sparsity_to_string(spec.sparsity);
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), ";sigma2=%.17g", spec.sigma2);
  canon += buffer;
  canon += ";seed=" + std::to_string(spec.seed) + ";cov=";
  if (spec.score_cov.size() == 0) {
    canon += "default";
  } else {
    for (int r = 0; r < spec.score_cov.rows(); ++r) {
      for (int c = 0; c < spec.score_cov.cols(); ++c) {
        std::snprintf(buffer, sizeof(buffer), "%.17g,", spec.score_cov(r, c));
        canon += buffer;
      }
    }
  }
  const unsigned long long h = fnv1a(canon);
  std::snprintf(buffer, sizeof(buffer), "%016llx", h);
  return buffer;
}

std::string bench_file_stem(const BenchReport& report) {
  return report.name + "_s" + std::to_string(report.spec.seed) + "_" + spec_hash(report.spec);
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path);
  out << "replicate,method,process,order,function_mse,component_mse,mrse\n";
  for (const BenchRow& row : report.rows) {
    std::string line = std::to_string(row.replicate) + "," + row.method + "," +
                       std::to_string(row.process) + "," + std::to_string(row.order) + ",";
    format_metric(&line, row.function_mse);
    line += ",";
    format_metric(&line, row.component_mse);
    line += ",";
    format_metric(&line, row.mrse);
    out << line << "\n";
  }
  if (!out) fail(ErrorCode::io_error, "failed writing " + path);
}

void write_bench_summary(const BenchReport& report, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["name"] = report.name;
  nlohmann::ordered_json spec;
  spec["processes"] = report.spec.processes;
  spec["basis_size"] = report.spec.basis_size;
  spec["subjects"] = report.spec.subjects;
  spec["grid_size"] = report.spec.grid_size;
  spec["sparsity"] = sparsity_to_string(report.spec.sparsity);
  spec["sigma2"] = report.spec.sigma2;
  spec["seed"] = report.spec.seed;
  if (report.spec.score_cov.size() == 0) {
    spec["score_cov"] = "default";
  } else {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int r = 0; r < report.spec.score_cov.rows(); ++r) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (int c = 0; c < report.spec.score_cov.cols(); ++c)
        row.push_back(report.spec.score_cov(r, c));
      rows.push_back(std::move(row));
    }
    spec["score_cov"] = std::move(rows);
  }
  doc["spec"] = std::move(spec);
  doc["replicates"] = report.replicates;
  doc["failures"] = report.failures;

  // Means per method, process and order, in first-appearance order.
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  std::vector<std::tuple<std::string, int, int>> seen;
  for (const BenchRow& row : report.rows) {
    const auto key = std::make_tuple(row.method, row.process, row.order);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);

    double sums[3] = {0.0, 0.0, 0.0};
    int counts[3] = {0, 0, 0};
    for (const BenchRow& other : report.rows) {
      if (other.method != row.method || other.process != row.process || other.order != row.order)
        continue;
      const double values[3] = {other.function_mse, other.component_mse, other.mrse};
      for (int k = 0; k < 3; ++k) {
        if (std::isnan(values[k])) continue;
        sums[k] += values[k];
        ++counts[k];
      }
    }
    nlohmann::ordered_json entry;
    entry["method"] = row.method;
    entry["process"] = row.process;
    entry["order"] = row.order;
    const char* names[3] = {"mean_function_mse", "mean_component_mse", "mean_mrse"};
    for (int k = 0; k < 3; ++k) {
      if (counts[k] == 0)
        entry[names[k]] = nullptr;
      else
        entry[names[k]] = sums[k] / counts[k];
    }
    summary.push_back(std::move(entry));
  }
  doc["summary"] = std::move(summary);

  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path);
  out << doc.dump(2) << "\n";
  if (!out) fail(ErrorCode::io_error, "failed writing " + path);
}

Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                             int max_iters, double tolerance) {
  const int n = static_cast<int>(features.rows());
  if (labels.size() != n)
    fail(ErrorCode::dimension_mismatch, "label count does not match feature rows");
  if (n < 2) fail(ErrorCode::insufficient_data, "logistic fit needs at least two rows");
  for (int i = 0; i < n; ++i)
    if (labels(i) != 0.0 && labels(i) != 1.0)
      fail(ErrorCode::invalid_config, "labels must be 0 or 1");

  const int p = static_cast<int>(features.cols()) + 1;
  Eigen::MatrixXd design(n, p);
  design.col(0).setOnes();
  design.rightCols(p - 1) = features;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::VectorXd eta = design * beta;
    const Eigen::VectorXd mu = (1.0 + (-eta.array()).exp()).inverse().matrix();
    const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
    Eigen::MatrixXd hessian = design.transpose() * w.asDiagonal() * design;
    hessian.diagonal().array() += 1e-8;
    const Eigen::VectorXd gradient = design.transpose() * (labels - mu);
    const Eigen::VectorXd step = hessian.ldlt().solve(gradient);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < tolerance) break;
  }
  if (!beta.allFinite()) fail(ErrorCode::numerical_failure, "logistic fit diverged");
  return beta;
}

}  // namespace fgcca
