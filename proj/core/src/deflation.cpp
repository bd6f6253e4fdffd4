#include "fgcca/deflation.hpp"

#include <cmath>
#include <string>

#include "fgcca/errors.hpp"

namespace fgcca {

namespace {

void check_unit_norm(const GridFunction& f, const char* side) {
  const double norm = l2_norm(f);
  if (std::abs(norm - 1.0) > 1e-8) {
    fail(ErrorCode::normalization_error,
         std::string(side) + " function has L2 norm " + std::to_string(norm) +
             "; deflation requires unit norm");
  }
}

// <f, S f> with S applied through the quadrature weights; the denominator of d.
double self_energy(const GridOperator& self, const GridFunction& f) {
  return bilinear_form(f, self, f);
}

}  // namespace

GridOperator deflate_orthogonal(const GridOperator& op, const GridFunction& f_row,
                                const GridFunction& f_col) {
  if (!op.row_grid->same_as(*f_row.grid) || !op.col_grid->same_as(*f_col.grid)) {
    fail(ErrorCode::incompatible_grid, "deflation function grids do not match the operator");
  }
  check_unit_norm(f_row, "row");
  check_unit_norm(f_col, "column");

  const Eigen::VectorXd& wr = f_row.grid->weights();
  const Eigen::VectorXd& wc = f_col.grid->weights();
  const Eigen::VectorXd& fr = f_row.values;
  const Eigen::VectorXd& fc = f_col.values;

  const Eigen::VectorXd a = op.kernel.transpose() * (wr.cwiseProduct(fr));
  const Eigen::VectorXd b = op.kernel * (wc.cwiseProduct(fc));
  const double s = fr.dot(wr.cwiseProduct(b));

  GridOperator out = op;
  out.kernel.noalias() -= fr * a.transpose();
  out.kernel.noalias() -= b * fc.transpose();
  out.kernel.noalias() += s * (fr * fc.transpose());
  return out;
}

GridOperator deflate_uncorrelated(const GridOperator& op, const GridOperator& self_row,
                                  const GridOperator& self_col, const GridFunction& f_row,
                                  const GridFunction& f_col) {
  if (!op.row_grid->same_as(*f_row.grid) || !op.col_grid->same_as(*f_col.grid)) {
    fail(ErrorCode::incompatible_grid, "deflation function grids do not match the operator");
  }
  if (!self_row.is_square() || !self_row.row_grid->same_as(*op.row_grid) ||
      !self_col.is_square() || !self_col.row_grid->same_as(*op.col_grid)) {
    fail(ErrorCode::incompatible_grid, "self-covariance grids do not match the operator");
  }

  const double denom_r = self_energy(self_row, f_row);
  const double denom_c = self_energy(self_col, f_col);
  if (!(denom_r > 0.0) || !(denom_c > 0.0)) {
    fail(ErrorCode::degenerate_component,
         "component has nonpositive self-covariance energy " +
             std::to_string(denom_r > 0.0 ? denom_c : denom_r) +
             "; cannot deflate in uncorrelated mode");
  }
  const double dr = 1.0 / denom_r;
  const double dc = 1.0 / denom_c;

  const Eigen::VectorXd& wr = f_row.grid->weights();
  const Eigen::VectorXd& wc = f_col.grid->weights();
  const Eigen::VectorXd& fr = f_row.values;
  const Eigen::VectorXd& fc = f_col.values;

  const Eigen::VectorXd ur = self_row.kernel * (wr.cwiseProduct(fr));
  const Eigen::VectorXd vc = self_col.kernel * (wc.cwiseProduct(fc));
  const Eigen::VectorXd a = op.kernel.transpose() * (wr.cwiseProduct(fr));
  const Eigen::VectorXd b = op.kernel * (wc.cwiseProduct(fc));
  const double s = fr.dot(wr.cwiseProduct(b));

  GridOperator out = op;
  out.kernel.noalias() -= dr * (ur * a.transpose());
  out.kernel.noalias() -= dc * (b * vc.transpose());
  out.kernel.noalias() += (dr * dc * s) * (ur * vc.transpose());
  return out;
}

CovarianceSet deflate_all(const CovarianceSet& covariances,
                          const std::vector<GridFunction>& functions, DeflationMode mode) {
  const int n = covariances.process_count();
  if (static_cast<int>(functions.size()) != n) {
    fail(ErrorCode::dimension_mismatch,
         "deflation needs one function per process, got " + std::to_string(functions.size()) +
             " for " + std::to_string(n));
  }

  std::vector<GridFunction> fs = functions;
  if (mode == DeflationMode::orthogonal) {
    for (int j = 0; j < n; ++j) {
      const double norm = l2_norm(fs[j]);
      if (!(norm > 0.0)) {
        fail(ErrorCode::degenerate_component,
             "component for process " + std::to_string(j + 1) + " has zero L2 norm");
      }
      fs[j].values /= norm;
    }
  }

  // Self kernels are overwritten below, so grab everything the uncorrelated
  // factors need before touching the set.
  std::vector<GridOperator> selfs;
  if (mode == DeflationMode::uncorrelated) {
    selfs.reserve(n);
    for (int j = 0; j < n; ++j) selfs.push_back(covariances.get(j, j));
  }

  CovarianceSet out(n);
  for (int j = 0; j < n; ++j) {
    for (int jp = j; jp < n; ++jp) {
      if (!covariances.has(j, jp)) continue;
      const GridOperator& op = covariances.get(j, jp);
      GridOperator deflated =
          mode == DeflationMode::orthogonal
              ? deflate_orthogonal(op, fs[j], fs[jp])
              : deflate_uncorrelated(op, selfs[j], selfs[jp], fs[j], fs[jp]);
      out.set(j, jp, std::move(deflated));
    }
  }
  return out;
}

FgccaFit fit_higher_order(const CovarianceSet& covariances, const FgccaConfig& config) {
  config.validate(covariances.process_count());
  const int n = covariances.process_count();
  const int orders = config.n_components;

  FgccaFit fit;
  fit.config = config;
  fit.functions.reserve(orders);
  fit.traces.reserve(orders);
  fit.converged.reserve(orders);

  CovarianceSet current = covariances;
  for (int m = 1; m <= orders; ++m) {
    FgccaConfig order_config = config;
    order_config.n_components = 1;
    order_config.seed = config.seed + static_cast<unsigned long long>(m - 1);

    SolverState state;
    try {
      state = fit_single(current, order_config);
    } catch (const FgccaError& e) {
      fail(e.code(), "order " + std::to_string(m) + ": " + e.detail());
    }

    std::vector<GridFunction> recorded = state.functions;
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

    fit.functions.push_back(recorded);
    fit.traces.push_back(state.criterion_trace);
    fit.converged.push_back(state.converged);

    if (m < orders) {
      if (config.deflation == DeflationMode::uncorrelated) {
        std::vector<double> ds(n);
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
        fit.deflation_d.push_back(std::move(ds));
      }
      try {
        current = deflate_all(current, recorded, config.deflation);
      } catch (const FgccaError& e) {
        fail(e.code(), "order " + std::to_string(m) + ": " + e.detail());
      }
    }
  }
  return fit;
}

FgccaFit fit_higher_order(const ProcessModel& model, const FgccaConfig& config) {
  return fit_higher_order(model.covariances, config);
}

}  // namespace fgcca

