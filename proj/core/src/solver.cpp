#include "fgcca/solver.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace fgcca {

Scheme scheme_from_string(const std::string& name) {
  if (name == "identity") return Scheme::identity;
  if (name == "square") return Scheme::square;
  if (name == "abs") return Scheme::abs_value;
  fail(ErrorCode::invalid_config,
       "unknown scheme '" + name + "' (expected identity, square or abs)");
}

std::string scheme_to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::identity: return "identity";
    case Scheme::square: return "square";
    case Scheme::abs_value: return "abs";
  }
  return "identity";
}

double scheme_g(Scheme scheme, double x) {
  switch (scheme) {
    case Scheme::identity: return x;
    case Scheme::square: return x * x;
    case Scheme::abs_value: return std::abs(x);
  }
  return x;
}

double scheme_gprime(Scheme scheme, double x) {
  switch (scheme) {
    case Scheme::identity: return 1.0;
    case Scheme::square: return 2.0 * x;
    case Scheme::abs_value: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  }
  return 1.0;
}

DeflationMode deflation_from_string(const std::string& name) {
  if (name == "orthogonal") return DeflationMode::orthogonal;
  if (name == "uncorrelated") return DeflationMode::uncorrelated;
  fail(ErrorCode::invalid_config,
       "unknown deflation mode '" + name + "' (expected orthogonal or uncorrelated)");
}

std::string deflation_to_string(DeflationMode mode) {
  return mode == DeflationMode::orthogonal ? "orthogonal" : "uncorrelated";
}

InitMode init_from_string(const std::string& name) {
  if (name == "deterministic-svd") return InitMode::deterministic_svd;
  if (name == "random") return InitMode::random;
  fail(ErrorCode::invalid_config,
       "unknown init mode '" + name + "' (expected deterministic-svd or random)");
}

std::string init_to_string(InitMode mode) {
  return mode == InitMode::deterministic_svd ? "deterministic-svd" : "random";
}

void FgccaConfig::validate(int process_count, bool require_connected) const {
  if (process_count < 1) fail(ErrorCode::invalid_config, "need at least one process");
  if (connection.rows() != process_count || connection.cols() != process_count) {
    std::ostringstream msg;
    msg << "connection matrix is " << connection.rows() << "x" << connection.cols()
        << " but there are " << process_count << " processes";
    fail(ErrorCode::invalid_config, msg.str());
  }
  for (int j = 0; j < process_count; ++j) {
    if (connection(j, j) != 0.0)
      fail(ErrorCode::invalid_config,
           "connection matrix must have a zero diagonal (process " + std::to_string(j + 1) + ")");
    bool connected = false;
    for (int jp = 0; jp < process_count; ++jp) {
      const double c = connection(j, jp);
      if (!std::isfinite(c) || c < 0.0)
        fail(ErrorCode::invalid_config, "connection weights must be finite and nonnegative");
      if (connection(j, jp) != connection(jp, j))
        fail(ErrorCode::invalid_config, "connection matrix must be symmetric");
      if (jp != j && c > 0.0) connected = true;
    }
    if (require_connected && !connected)
      fail(ErrorCode::invalid_config,
           "process " + std::to_string(j + 1) + " has no positive connection weight");
  }
  if (tau.size() != process_count)
    fail(ErrorCode::invalid_config, "tau needs one entry per process");
  for (int j = 0; j < process_count; ++j)
    if (!std::isfinite(tau(j)) || tau(j) <= 0.0 || tau(j) > 1.0) {
      std::ostringstream msg;
      msg << "tau_" << j + 1 << " = " << tau(j) << " is invalid: tau must lie in (0, 1]";
      fail(ErrorCode::invalid_config, msg.str());
    }
  if (!(epsilon > 0.0)) fail(ErrorCode::invalid_config, "epsilon must be positive");
  if (max_iters < 1) fail(ErrorCode::invalid_config, "max_iters must be at least 1");
  if (n_components < 1) fail(ErrorCode::invalid_config, "n_components must be at least 1");
}

FgccaConfig FgccaConfig::defaults(int process_count) {
  FgccaConfig config;
  config.connection = Eigen::MatrixXd::Ones(process_count, process_count) -
                      Eigen::MatrixXd::Identity(process_count, process_count);
  config.tau = Eigen::VectorXd::Ones(process_count);
  return config;
}

namespace {

void check_functions(const std::vector<GridFunction>& functions,
                     const CovarianceSet& covariances) {
  if (static_cast<int>(functions.size()) != covariances.process_count())
    fail(ErrorCode::dimension_mismatch, "need one function per process");
}

const GridOperator& required_covariance(const CovarianceSet& covariances, int j, int jp) {
  if (!covariances.has(j, jp)) {
    std::ostringstream msg;
    msg << "connection weight between processes " << j + 1 << " and " << jp + 1
        << " is positive but their covariance is missing";
    fail(ErrorCode::invalid_config, msg.str());
  }
  return covariances.get(j, jp);
}

}  // namespace

double criterion(const std::vector<GridFunction>& functions, const CovarianceSet& covariances,
                 const Eigen::MatrixXd& connection, Scheme scheme) {
  check_functions(functions, covariances);
  const int nproc = covariances.process_count();
  double total = 0.0;
  for (int j = 0; j < nproc; ++j) {
    for (int jp = j + 1; jp < nproc; ++jp) {
      const double c = connection(j, jp);
      if (c == 0.0) continue;
      const double v =
          bilinear_form(functions[j], required_covariance(covariances, j, jp), functions[jp]);
      // Ordered pairs (j, j') and (j', j) contribute the same term.
      total += 2.0 * c * scheme_g(scheme, v);
    }
  }
  return total;
}

GridFunction gradient_j(int j, const std::vector<GridFunction>& functions,
                        const CovarianceSet& covariances, const Eigen::MatrixXd& connection,
                        Scheme scheme) {
  check_functions(functions, covariances);
  const int nproc = covariances.process_count();
  GridFunction grad = GridFunction::zero(functions[j].grid);
  for (int jp = 0; jp < nproc; ++jp) {
    if (jp == j) continue;
    const double c = connection(j, jp);
    if (c == 0.0) continue;
    const GridOperator& op = required_covariance(covariances, j, jp);
    GridFunction mapped = apply_operator(op, functions[jp]);
    const double v = inner_product(functions[j], mapped);
    const double coef = 2.0 * c * scheme_gprime(scheme, v);
    grad.values += coef * mapped.values;
  }
  return grad;
}

Metric build_metric(int j, const FgccaConfig& config, const CovarianceSet& covariances) {
  const double tau = config.tau(j);
  const GridOperator& self = covariances.get(j, j);
  if (tau == 1.0) return Metric::scaled_identity(self.row_grid, 1.0, j + 1);
  return Metric(self.row_grid, tau, self.kernel, 1.0 - tau, j + 1);
}

GridFunction update_j(const GridFunction& gradient, const Metric& metric) {
  GridFunction solved = metric.solve(gradient);
  const double norm_sq = inner_product(gradient, solved);
  if (!(norm_sq > 0.0))
    fail(ErrorCode::stationary_point, "gradient vanishes; the update is undefined");
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm))
    fail(ErrorCode::numerical_failure, "gradient norm is not finite");
  solved.values /= norm;
  return solved;
}

void apply_sign_convention(GridFunction& f) {
  int arg = 0;
  f.values.cwiseAbs().maxCoeff(&arg);
  if (f.values(arg) < 0.0) f.values = -f.values;
}

std::vector<GridFunction> initial_functions(const CovarianceSet& covariances,
                                            const FgccaConfig& config) {
  const int nproc = covariances.process_count();
  std::vector<GridFunction> functions;
  functions.reserve(nproc);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal;

  for (int j = 0; j < nproc; ++j) {
    const TimeGridPtr grid = covariances.get(j, j).row_grid;
    const int n = grid->size();
    Eigen::VectorXd values(n);
    if (config.init == InitMode::random) {
      for (int k = 0; k < n; ++k) values(k) = normal(rng);
    } else {
      // Top eigenfunction of sum_j' K_jj' W_j' K_jj'^T over connected j',
      // computed in the weight-symmetrized coordinates.
      Eigen::MatrixXd accum = Eigen::MatrixXd::Zero(n, n);
      for (int jp = 0; jp < nproc; ++jp) {
        if (jp == j || config.connection(j, jp) == 0.0) continue;
        const GridOperator& op = required_covariance(covariances, j, jp);
        accum.noalias() += op.kernel * op.col_grid->weights().asDiagonal() * op.kernel.transpose();
      }
      const Eigen::VectorXd sqrt_w = grid->weights().cwiseSqrt();
      Eigen::MatrixXd sym = sqrt_w.asDiagonal() * accum * sqrt_w.asDiagonal();
      sym = 0.5 * (sym + sym.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
      if (eig.info() != Eigen::Success)
        fail(ErrorCode::numerical_failure, "eigendecomposition failed during initialization");
      values = eig.eigenvectors().col(n - 1).cwiseQuotient(sqrt_w);
    }
    GridFunction f(grid, std::move(values));
    apply_sign_convention(f);
    functions.push_back(std::move(f));
  }
  return functions;
}

namespace {

SolverState run_sweeps(const CovarianceSet& covariances, const FgccaConfig& config,
                       std::vector<GridFunction> functions) {
  const int nproc = covariances.process_count();

  std::vector<Metric> metrics;
  metrics.reserve(nproc);
  for (int j = 0; j < nproc; ++j) metrics.push_back(build_metric(j, config, covariances));

  // Start on the constraint set.
  for (int j = 0; j < nproc; ++j) {
    GridFunction mf = metrics[j].apply(functions[j]);
    const double norm_sq = inner_product(functions[j], mf);
    if (!(norm_sq > 0.0))
      fail(ErrorCode::stationary_point,
           "initial function for process " + std::to_string(j + 1) + " has zero metric norm");
    functions[j].values /= std::sqrt(norm_sq);
  }

  SolverState state;
  state.criterion_trace.push_back(
      criterion(functions, covariances, config.connection, config.scheme));
  if (!std::isfinite(state.criterion_trace.back()))
    fail(ErrorCode::numerical_failure, "criterion is not finite at the starting point");

  for (int sweep = 0; sweep < config.max_iters; ++sweep) {
    for (int j = 0; j < nproc; ++j) {
      GridFunction grad =
          gradient_j(j, functions, covariances, config.connection, config.scheme);
      try {
        functions[j] = update_j(grad, metrics[j]);
      } catch (const FgccaError& e) {
        if (e.code() != ErrorCode::stationary_point) throw;
        // Zero gradient: keep the previous function and move on.
      }
    }
    const double value = criterion(functions, covariances, config.connection, config.scheme);
    if (!std::isfinite(value))
      fail(ErrorCode::numerical_failure, "criterion became non-finite during optimization");
    const double previous = state.criterion_trace.back();
    state.criterion_trace.push_back(value);
    state.iterations = sweep + 1;
    if (value - previous < config.epsilon) {
      state.converged = true;
      break;
    }
  }

  if (config.sign_convention)
    for (auto& f : functions) apply_sign_convention(f);
  state.functions = std::move(functions);
  return state;
}

}  // namespace

SolverState fit_single(const CovarianceSet& covariances, const FgccaConfig& config) {
  config.validate(covariances.process_count());
  return run_sweeps(covariances, config, initial_functions(covariances, config));
}

SolverState fit_single(const CovarianceSet& covariances, const FgccaConfig& config,
                       std::vector<GridFunction> init) {
  config.validate(covariances.process_count());
  check_functions(init, covariances);
  return run_sweeps(covariances, config, std::move(init));
}

}  // namespace fgcca
