#include "fgcca/response.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fgcca/deflation.hpp"
#include "fgcca/errors.hpp"
#include "fgcca/smoothing.hpp"
#include "fgcca/solver.hpp"

namespace fgcca {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

double parse_double(const std::string& field, const std::string& what, long line_number) {
  const std::string t = trim(field);
  double out = 0.0;
  const char* begin = t.data();
  auto [ptr, ec] = std::from_chars(begin, begin + t.size(), out);
  if (ec != std::errc() || ptr != begin + t.size() || t.empty() || !std::isfinite(out)) {
    std::ostringstream msg;
    msg << "line " << line_number << ": " << what << " '" << field << "' is not a finite number";
    fail(ErrorCode::parse_error, msg.str());
  }
  return out;
}

GridFunction response_action(const ResponseCrossCov& cross, const Eigen::VectorXd& a) {
  return GridFunction(cross.grid, cross.kernel * a);
}

// <f, K_jY a> and the adjoint K_jY^T applied to f: quadrature on the
// functional side only.
double mixed_inner(const GridFunction& f, const ResponseCrossCov& cross,
                   const Eigen::VectorXd& a) {
  return inner_product(f, response_action(cross, a));
}

Eigen::VectorXd adjoint_action(const ResponseCrossCov& cross, const GridFunction& f) {
  return cross.kernel.transpose() * f.grid->weights().cwiseProduct(f.values);
}

double extended_criterion(const std::vector<GridFunction>& functions,
                          const CovarianceSet& covariances, const FgccaConfig& config,
                          const ResponseBlock& response, const Eigen::VectorXd& a) {
  double total = criterion(functions, covariances, config.connection, config.scheme);
  for (size_t j = 0; j < functions.size(); ++j) {
    total += 2.0 * scheme_g(config.scheme, mixed_inner(functions[j], response.cross_cov[j], a));
  }
  return total;
}

void check_response(const ResponseBlock& response, const CovarianceSet& covariances) {
  const int n = covariances.process_count();
  if (static_cast<int>(response.cross_cov.size()) != n) {
    fail(ErrorCode::dimension_mismatch,
         "response block covers " + std::to_string(response.cross_cov.size()) +
             " processes, expected " + std::to_string(n));
  }
  const int p = response.p();
  if (p < 1) fail(ErrorCode::invalid_config, "response block has no columns");
  for (int j = 0; j < n; ++j) {
    const ResponseCrossCov& cross = response.cross_cov[j];
    if (!cross.grid || !cross.grid->same_as(*covariances.get(j, j).row_grid)) {
      fail(ErrorCode::incompatible_grid,
           "response cross-covariance for process " + std::to_string(j + 1) +
               " is not on the process grid");
    }
    if (cross.kernel.rows() != cross.grid->size() || cross.kernel.cols() != p) {
      fail(ErrorCode::dimension_mismatch,
           "response cross-covariance for process " + std::to_string(j + 1) + " is " +
               std::to_string(cross.kernel.rows()) + "x" + std::to_string(cross.kernel.cols()) +
               ", expected " + std::to_string(cross.grid->size()) + "x" + std::to_string(p));
    }
    if (!cross.kernel.allFinite()) {
      fail(ErrorCode::numerical_failure,
           "response cross-covariance for process " + std::to_string(j + 1) +
               " has non-finite entries");
    }
  }
}

// Every process must be pulled toward something: a connected neighbour or
// the response.
void check_pull(const ResponseBlock& response, const FgccaConfig& config) {
  const int n = static_cast<int>(response.cross_cov.size());
  for (int j = 0; j < n; ++j) {
    bool connected = false;
    for (int jp = 0; jp < n; ++jp)
      if (jp != j && config.connection(j, jp) > 0.0) connected = true;
    if (!connected && response.cross_cov[j].kernel.cwiseAbs().maxCoeff() == 0.0) {
      fail(ErrorCode::invalid_config,
           "process " + std::to_string(j + 1) +
               " has neither a positive connection weight nor a response association");
    }
  }
}

// initial_functions with the response kernel joining the accumulation, so a
// pure response design still starts from a meaningful direction.
std::vector<GridFunction> initial_response_functions(const CovarianceSet& covariances,
                                                     const ResponseBlock& response,
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
      Eigen::MatrixXd accum = Eigen::MatrixXd::Zero(n, n);
      for (int jp = 0; jp < nproc; ++jp) {
        if (jp == j || config.connection(j, jp) == 0.0) continue;
        if (!covariances.has(j, jp)) {
          fail(ErrorCode::invalid_config,
               "connection weight between processes " + std::to_string(j + 1) + " and " +
                   std::to_string(jp + 1) + " is positive but their covariance is missing");
        }
        const GridOperator& op = covariances.get(j, jp);
        accum.noalias() += op.kernel * op.col_grid->weights().asDiagonal() * op.kernel.transpose();
      }
      const Eigen::MatrixXd& ky = response.cross_cov[j].kernel;
      accum.noalias() += ky * ky.transpose();
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

}  // namespace

bool ResponseBlock::active() const {
  for (const ResponseCrossCov& cross : cross_cov) {
    if (cross.kernel.size() > 0 && cross.kernel.cwiseAbs().maxCoeff() > 0.0) return true;
  }
  return false;
}

RawResponse load_response_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::schema_error, "file " + path + " is empty");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "subject_id") {
    fail(ErrorCode::schema_error, "response file must start with a subject_id column");
  }
  if (header.size() < 2) {
    fail(ErrorCode::schema_error, "response file needs at least one value column");
  }

  RawResponse raw;
  raw.column_names.assign(header.begin() + 1, header.end());
  for (size_t c = 0; c < raw.column_names.size(); ++c) {
    if (raw.column_names[c].empty())
      fail(ErrorCode::schema_error, "response column " + std::to_string(c + 2) + " has no name");
  }

  std::vector<Eigen::VectorXd> rows;
  long line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      fail(ErrorCode::parse_error, "line " + std::to_string(line_number) + ": expected " +
                                       std::to_string(header.size()) + " fields, got " +
                                       std::to_string(fields.size()));
    }
    if (fields[0].empty()) {
      fail(ErrorCode::parse_error,
           "line " + std::to_string(line_number) + ": empty subject id");
    }
    for (const std::string& seen : raw.subject_ids) {
      if (seen == fields[0]) {
        fail(ErrorCode::duplicate_observation, "line " + std::to_string(line_number) +
                                                   ": subject '" + fields[0] +
                                                   "' appears more than once");
      }
    }
    raw.subject_ids.push_back(fields[0]);
    Eigen::VectorXd row(header.size() - 1);
    for (size_t c = 1; c < fields.size(); ++c) {
      row(c - 1) = parse_double(fields[c], "column " + header[c], line_number);
    }
    rows.push_back(std::move(row));
  }

  raw.y.resize(rows.size(), raw.column_names.size());
  for (size_t r = 0; r < rows.size(); ++r) raw.y.row(r) = rows[r];
  return raw;
}

Eigen::MatrixXd align_response(const RawResponse& raw, const LongitudinalDataset& dataset) {
  Eigen::MatrixXd aligned(dataset.subject_count(), raw.y.cols());
  for (int i = 0; i < dataset.subject_count(); ++i) {
    const std::string& id = dataset.subject(i);
    const auto it = std::find(raw.subject_ids.begin(), raw.subject_ids.end(), id);
    if (it == raw.subject_ids.end()) {
      fail(ErrorCode::insufficient_data, "subject '" + id + "' has no response row");
    }
    aligned.row(i) = raw.y.row(it - raw.subject_ids.begin());
  }
  return aligned;
}

Eigen::MatrixXd center_response(Eigen::MatrixXd y, bool standardize,
                                const std::vector<std::string>& column_names,
                                std::vector<std::string>* warnings) {
  const int n = static_cast<int>(y.rows());
  if (n < 2) fail(ErrorCode::insufficient_data, "response needs at least two subjects");
  for (int c = 0; c < y.cols(); ++c) {
    const double mean = y.col(c).mean();
    y.col(c).array() -= mean;
    const double sd = std::sqrt(y.col(c).squaredNorm() / (n - 1));
    if (sd == 0.0) {
      if (warnings) {
        const std::string name =
            c < static_cast<int>(column_names.size()) ? column_names[c] : std::to_string(c + 1);
        warnings->push_back("response column '" + name + "' is constant; it contributes nothing");
      }
      continue;
    }
    if (standardize) y.col(c) /= sd;
  }
  return y;
}

Eigen::MatrixXd estimate_response_cross_cov(const LongitudinalDataset& dataset,
                                            const Eigen::MatrixXd& y_centered, int process,
                                            const GridFunction& mean, TimeGridPtr grid,
                                            double bandwidth,
                                            std::vector<std::string>* warnings) {
  if (y_centered.rows() != dataset.subject_count()) {
    fail(ErrorCode::dimension_mismatch,
         "response has " + std::to_string(y_centered.rows()) + " rows for " +
             std::to_string(dataset.subject_count()) + " subjects");
  }
  const int p = static_cast<int>(y_centered.cols());
  Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(grid->size(), p);
  for (int c = 0; c < p; ++c) {
    if (y_centered.col(c).cwiseAbs().maxCoeff() == 0.0) {
      if (warnings) {
        warnings->push_back("response column " + std::to_string(c + 1) +
                            " is zero after centering; its cross-covariance is zero");
      }
      continue;
    }
    CurveSmoother smoother(grid, bandwidth);
    for (int i = 0; i < dataset.subject_count(); ++i) {
      const SparseSample& s = dataset.sample(i, process);
      for (int k = 0; k < s.n(); ++k) {
        const double centered = s.values(k) - mean.interpolate(s.times(k));
        smoother.add(s.times(k), centered * y_centered(i, c));
      }
    }
    kernel.col(c) = smoother.fit().values;
  }
  return kernel;
}

ResponseBlock build_response_block(const LongitudinalDataset& dataset, const ProcessModel& model,
                                   const RawResponse& raw, double bandwidth, bool standardize) {
  ResponseBlock block;
  block.column_names = raw.column_names;
  block.subject_ids = dataset.subjects();
  Eigen::MatrixXd aligned = align_response(raw, dataset);
  block.y = center_response(std::move(aligned), standardize, raw.column_names, &block.warnings);

  for (int j = 0; j < model.process_count(); ++j) {
    const double bw = bandwidth > 0.0 ? bandwidth : model.mean_bandwidths[j];
    Eigen::MatrixXd kernel = estimate_response_cross_cov(dataset, block.y, j, model.means[j],
                                                         model.grids[j], bw, &block.warnings);
    if (model.normalized) kernel *= model.norm_weights[j];
    block.cross_cov.push_back(ResponseCrossCov{model.grids[j], std::move(kernel)});
  }
  return block;
}

ResponseState fit_with_response(const CovarianceSet& covariances, const ResponseBlock& response,
                                const FgccaConfig& config) {
  check_response(response, covariances);
  const int p = response.p();

  if (!response.active()) {
    ResponseState out;
    out.state = fit_single(covariances, config);
    out.a = Eigen::VectorXd::Constant(p, 1.0 / std::sqrt(static_cast<double>(p)));
    return out;
  }

  config.validate(covariances.process_count(), /*require_connected=*/false);
  check_pull(response, config);
  const int nproc = covariances.process_count();

  std::vector<GridFunction> functions = initial_response_functions(covariances, response, config);
  Eigen::VectorXd a = Eigen::VectorXd::Constant(p, 1.0 / std::sqrt(static_cast<double>(p)));

  std::vector<Metric> metrics;
  metrics.reserve(nproc);
  for (int j = 0; j < nproc; ++j) metrics.push_back(build_metric(j, config, covariances));

  for (int j = 0; j < nproc; ++j) {
    GridFunction mf = metrics[j].apply(functions[j]);
    const double norm_sq = inner_product(functions[j], mf);
    if (!(norm_sq > 0.0))
      fail(ErrorCode::stationary_point,
           "initial function for process " + std::to_string(j + 1) + " has zero metric norm");
    functions[j].values /= std::sqrt(norm_sq);
  }

  ResponseState out;
  SolverState& state = out.state;
  state.criterion_trace.push_back(
      extended_criterion(functions, covariances, config, response, a));
  if (!std::isfinite(state.criterion_trace.back()))
    fail(ErrorCode::numerical_failure, "criterion is not finite at the starting point");

  for (int sweep = 0; sweep < config.max_iters; ++sweep) {
    for (int j = 0; j < nproc; ++j) {
      GridFunction grad =
          gradient_j(j, functions, covariances, config.connection, config.scheme);
      const double v = mixed_inner(functions[j], response.cross_cov[j], a);
      grad.values +=
          2.0 * scheme_gprime(config.scheme, v) * (response.cross_cov[j].kernel * a);
      try {
        functions[j] = update_j(grad, metrics[j]);
      } catch (const FgccaError& e) {
        if (e.code() != ErrorCode::stationary_point) throw;
      }
    }
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < nproc; ++j) {
      const double v = mixed_inner(functions[j], response.cross_cov[j], a);
      direction +=
          scheme_gprime(config.scheme, v) * adjoint_action(response.cross_cov[j], functions[j]);
    }
    const double norm = direction.norm();
    if (norm > 0.0) a = direction / norm;

    const double value = extended_criterion(functions, covariances, config, response, a);
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
  out.a = std::move(a);
  return out;
}

ResponseState fit_with_response(const ProcessModel& model, const ResponseBlock& response,
                                const FgccaConfig& config) {
  return fit_with_response(model.covariances, response, config);
}

ResponseFit fit_response_higher_order(const CovarianceSet& covariances,
                                      const ResponseBlock& response, const FgccaConfig& config) {
  check_response(response, covariances);
  config.validate(covariances.process_count(), /*require_connected=*/!response.active());
  const int n = covariances.process_count();
  const int orders = config.n_components;

  ResponseFit out;
  out.fit.config = config;

  CovarianceSet current = covariances;
  ResponseBlock current_response = response;
  for (int m = 1; m <= orders; ++m) {
    FgccaConfig order_config = config;
    order_config.n_components = 1;
    order_config.seed = config.seed + static_cast<unsigned long long>(m - 1);

    ResponseState state;
    try {
      state = fit_with_response(current, current_response, order_config);
    } catch (const FgccaError& e) {
      fail(e.code(), "order " + std::to_string(m) + ": " + e.detail());
    }

    std::vector<GridFunction> recorded = state.state.functions;
    if (config.deflation == DeflationMode::orthogonal) {
      for (int j = 0; j < n; ++j) {
        const double norm = l2_norm(recorded[j]);
        if (!(norm > 0.0)) {
          fail(ErrorCode::degenerate_component,
               "order " + std::to_string(m) + ": component for process " + std::to_string(j + 1) +
                   " has zero L2 norm");
        }
        recorded[j].values /= norm;
      }
    }

    out.fit.functions.push_back(recorded);
    out.fit.traces.push_back(state.state.criterion_trace);
    out.fit.converged.push_back(state.state.converged);
    out.a.push_back(state.a);

    if (m < orders) {
      std::vector<double> ds(n, 0.0);
      if (config.deflation == DeflationMode::uncorrelated) {
        for (int j = 0; j < n; ++j) {
          const double denom = bilinear_form(recorded[j], current.get(j, j), recorded[j]);
          if (!(denom > 0.0)) {
            fail(ErrorCode::degenerate_component,
                 "order " + std::to_string(m) + ": component for process " +
                     std::to_string(j + 1) + " has nonpositive self-covariance energy " +
                     std::to_string(denom));
          }
          ds[j] = 1.0 / denom;
        }
        out.fit.deflation_d.push_back(ds);
      }

      // Functional-side deflation of the response kernels with the same
      // projector that deflates the covariances.
      for (int j = 0; j < n; ++j) {
        Eigen::MatrixXd& kernel = current_response.cross_cov[j].kernel;
        const Eigen::VectorXd& w = recorded[j].grid->weights();
        const Eigen::VectorXd wf = w.cwiseProduct(recorded[j].values);
        if (config.deflation == DeflationMode::orthogonal) {
          kernel -= recorded[j].values * (wf.transpose() * kernel);
        } else {
          const Eigen::VectorXd u = current.get(j, j).kernel * wf;
          kernel -= ds[j] * u * (wf.transpose() * kernel);
        }
      }

      try {
        current = deflate_all(current, recorded, config.deflation);
      } catch (const FgccaError& e) {
        fail(e.code(), "order " + std::to_string(m) + ": " + e.detail());
      }
    }
  }
  return out;
}

}  // namespace fgcca
