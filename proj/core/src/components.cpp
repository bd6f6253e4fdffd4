#include "fgcca/components.hpp"

#include <algorithm>
#include <cmath>

#include "fgcca/errors.hpp"

namespace fgcca {

namespace {

constexpr double kNoiseFloor = 1e-10;

void check_model(const ScoreModel& model) {
  const int n = model.process_count();
  const int orders = model.orders();
  if (n == 0 || orders == 0) fail(ErrorCode::invalid_config, "score model has no fitted functions");
  if (static_cast<int>(model.means.size()) != n ||
      static_cast<int>(model.noise_vars.size()) != n ||
      static_cast<int>(model.norm_weights.size()) != n) {
    fail(ErrorCode::dimension_mismatch, "score model process tables disagree in size");
  }
  const int total = n * orders;
  if (model.score_cov.rows() != total || model.score_cov.cols() != total) {
    fail(ErrorCode::dimension_mismatch,
         "score covariance is " + std::to_string(model.score_cov.rows()) + "x" +
             std::to_string(model.score_cov.cols()) + ", expected " + std::to_string(total));
  }
}

// Linear interpolation of scattered observations onto the grid, held
// constant outside the observed range.
Eigen::VectorXd interpolate_onto_grid(const SparseSample& sample, const TimeGrid& grid) {
  const int n = sample.n();
  Eigen::VectorXd out(grid.size());
  for (int k = 0; k < grid.size(); ++k) {
    const double t = grid.points()(k);
    if (t <= sample.times(0)) {
      out(k) = sample.values(0);
    } else if (t >= sample.times(n - 1)) {
      out(k) = sample.values(n - 1);
    } else {
      int hi = 1;
      while (sample.times(hi) < t) ++hi;
      const double t0 = sample.times(hi - 1), t1 = sample.times(hi);
      const double s = (t - t0) / (t1 - t0);
      out(k) = (1.0 - s) * sample.values(hi - 1) + s * sample.values(hi);
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd estimate_score_cov(const ProcessModel& model, const FgccaFit& fit,
                                   bool* adjusted) {
  const int n = model.process_count();
  const int orders = fit.orders();
  if (fit.process_count() != n) {
    fail(ErrorCode::dimension_mismatch, "fit and model disagree on the number of processes");
  }
  const int total = n * orders;
  Eigen::MatrixXd cov(total, total);
  for (int j = 0; j < n; ++j) {
    for (int jp = 0; jp < n; ++jp) {
      for (int m = 0; m < orders; ++m) {
        for (int mp = 0; mp < orders; ++mp) {
          double value = 0.0;
          if (model.covariances.has(j, jp)) {
            value = bilinear_form(fit.functions[m][j], model.covariances.get(j, jp),
                                  fit.functions[mp][jp]);
          }
          cov(j * orders + m, jp * orders + mp) = value;
        }
      }
    }
  }
  cov = 0.5 * (cov + cov.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) {
    fail(ErrorCode::numerical_failure, "score covariance eigendecomposition failed");
  }
  const bool clamp = eig.eigenvalues().minCoeff() < 0.0;
  if (adjusted) *adjusted = clamp;
  if (clamp) {
    Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
    cov = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
  }
  return cov;
}

ScoreModel build_score_model(const ProcessModel& model, const FgccaFit& fit) {
  const int n = model.process_count();
  if (fit.process_count() != n) {
    fail(ErrorCode::dimension_mismatch, "fit and model disagree on the number of processes");
  }
  for (int m = 0; m < fit.orders(); ++m) {
    for (int j = 0; j < n; ++j) {
      if (!fit.functions[m][j].grid->same_as(*model.grids[j])) {
        fail(ErrorCode::incompatible_grid,
             "canonical functions for process " + std::to_string(j + 1) +
                 " are not on the model grid");
      }
    }
  }

  ScoreModel out;
  out.functions = fit.functions;
  out.means = model.means;
  out.noise_vars = model.noise_vars;
  out.norm_weights = model.normalized ? model.norm_weights : std::vector<double>(n, 1.0);
  out.mode = fit.config.deflation;
  out.score_cov = estimate_score_cov(model, fit, &out.psd_adjusted);
  return out;
}

std::vector<SparseSample> subject_observations(const LongitudinalDataset& dataset, int subject) {
  std::vector<SparseSample> out;
  out.reserve(dataset.process_count());
  for (int j = 0; j < dataset.process_count(); ++j) out.push_back(dataset.sample(subject, j));
  return out;
}

Eigen::VectorXd blup_scores(const std::vector<SparseSample>& observations,
                            const ScoreModel& model) {
  check_model(model);
  const int n = model.process_count();
  const int orders = model.orders();
  const int total = n * orders;
  if (static_cast<int>(observations.size()) != n) {
    fail(ErrorCode::dimension_mismatch,
         "expected observations for " + std::to_string(n) + " processes, got " +
             std::to_string(observations.size()));
  }

  int rows = 0;
  for (const SparseSample& s : observations) rows += s.n();
  if (rows == 0) return Eigen::VectorXd::Zero(total);

  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(rows, total);
  Eigen::VectorXd residual(rows);
  Eigen::VectorXd noise(rows);
  int row = 0;
  for (int j = 0; j < n; ++j) {
    const SparseSample& s = observations[j];
    const double w = model.norm_weights[j];
    for (int k = 0; k < s.n(); ++k, ++row) {
      const double t = s.times(k);
      residual(row) = w * (s.values(k) - model.means[j].interpolate(t));
      for (int m = 0; m < orders; ++m) {
        F(row, model.index(j, m)) = model.functions[m][j].interpolate(t);
      }
      noise(row) = w * w * std::max(model.noise_vars[j], kNoiseFloor);
    }
  }

  Eigen::MatrixXd gain = F * model.score_cov * F.transpose();
  gain.diagonal() += noise;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gain);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
    fail(ErrorCode::numerical_failure,
         "observation covariance is singular; duplicated times with zero noise need jitter or a "
         "positive noise variance");
  }
  return model.score_cov * F.transpose() * ldlt.solve(residual);
}

Eigen::VectorXd quadrature_scores(const std::vector<SparseSample>& observations,
                                  const ScoreModel& model, bool enforce_coverage) {
  check_model(model);
  const int n = model.process_count();
  const int orders = model.orders();
  if (static_cast<int>(observations.size()) != n) {
    fail(ErrorCode::dimension_mismatch,
         "expected observations for " + std::to_string(n) + " processes, got " +
             std::to_string(observations.size()));
  }

  Eigen::VectorXd scores = Eigen::VectorXd::Zero(n * orders);
  for (int j = 0; j < n; ++j) {
    const SparseSample& s = observations[j];
    const TimeGrid& grid = *model.means[j].grid;
    if (enforce_coverage) {
      const double span = grid.length();
      double gap = 0.0;
      if (s.n() == 0) {
        gap = span;
      } else {
        gap = std::max(s.times(0) - grid.start(), grid.end() - s.times(s.n() - 1));
        for (int k = 0; k + 1 < s.n(); ++k) gap = std::max(gap, s.times(k + 1) - s.times(k));
      }
      if (gap > 0.2 * span) {
        fail(ErrorCode::sparse_data,
             "process " + std::to_string(j + 1) + " leaves a coverage gap of " +
                 std::to_string(gap) + " on an interval of length " + std::to_string(span) +
                 "; use blup_scores for sparse observations");
      }
    }
    if (s.n() == 0) continue;
    Eigen::VectorXd u = interpolate_onto_grid(s, grid);
    GridFunction centered(model.means[j].grid,
                          model.norm_weights[j] * (u - model.means[j].values));
    for (int m = 0; m < orders; ++m) {
      scores(model.index(j, m)) = inner_product(centered, model.functions[m][j]);
    }
  }
  return scores;
}

ComponentSet decorrelate(const std::vector<Eigen::VectorXd>& scores, const ScoreModel& model) {
  check_model(model);
  const int n = model.process_count();
  const int orders = model.orders();
  const int total = n * orders;
  const int subjects = static_cast<int>(scores.size());
  for (const Eigen::VectorXd& s : scores) {
    if (s.size() != total) {
      fail(ErrorCode::dimension_mismatch,
           "score vector has length " + std::to_string(s.size()) + ", expected " +
               std::to_string(total));
    }
  }

  ComponentSet out;
  out.mode = model.mode;
  out.xi.assign(n, Eigen::MatrixXd(subjects, orders));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < subjects; ++i)
      for (int m = 0; m < orders; ++m) out.xi[j](i, m) = scores[i](model.index(j, m));

  if (model.mode == DeflationMode::orthogonal) {
    out.y = out.xi;
    return out;
  }

  out.y.assign(n, Eigen::MatrixXd(subjects, orders));
  for (int j = 0; j < n; ++j) {
    out.y[j].col(0) = out.xi[j].col(0);
    std::vector<bool> warned(orders, false);
    for (int m = 1; m < orders; ++m) {
      std::vector<int> usable;
      for (int k = 0; k < m; ++k) {
        if (out.y[j].col(k).norm() > 1e-12 * std::sqrt(static_cast<double>(subjects))) {
          usable.push_back(k);
        } else if (!warned[k]) {
          warned[k] = true;
          out.warnings.push_back("process " + std::to_string(j + 1) + " order " +
                                 std::to_string(k + 1) +
                                 " component is degenerate; projector skipped");
        }
      }
      Eigen::MatrixXd design(subjects, 1 + usable.size());
      design.col(0).setOnes();
      for (size_t c = 0; c < usable.size(); ++c) design.col(1 + c) = out.y[j].col(usable[c]);
      Eigen::VectorXd beta = design.colPivHouseholderQr().solve(out.xi[j].col(m));
      out.y[j].col(m) = out.xi[j].col(m) - design * beta;
    }
  }
  return out;
}

std::vector<GridFunction> reconstruct(const Eigen::VectorXd& scores, const ScoreModel& model) {
  check_model(model);
  const int n = model.process_count();
  const int orders = model.orders();
  if (scores.size() != n * orders) {
    fail(ErrorCode::dimension_mismatch,
         "score vector has length " + std::to_string(scores.size()) + ", expected " +
             std::to_string(n * orders));
  }
  std::vector<GridFunction> out;
  out.reserve(n);
  for (int j = 0; j < n; ++j) {
    GridFunction curve = model.means[j];
    const double w = model.norm_weights[j];
    for (int m = 0; m < orders; ++m) {
      curve.values += (scores(model.index(j, m)) / w) * model.functions[m][j].values;
    }
    out.push_back(std::move(curve));
  }
  return out;
}

std::vector<GridFunction> reconstruct(const Eigen::VectorXd& scores, const ScoreModel& model,
                                      TimeGridPtr grid) {
  std::vector<GridFunction> native = reconstruct(scores, model);
  std::vector<GridFunction> out;
  out.reserve(native.size());
  for (const GridFunction& curve : native) {
    Eigen::VectorXd values(grid->size());
    for (int k = 0; k < grid->size(); ++k) values(k) = curve.interpolate(grid->points()(k));
    out.emplace_back(grid, values);
  }
  return out;
}

std::vector<GridFunction> reconstruct(const ComponentSet& components, int subject,
                                      const ScoreModel& model) {
  check_model(model);
  if (components.mode != model.mode) {
    fail(ErrorCode::reconstruction_basis,
         "component set was built under " + deflation_to_string(components.mode) +
             " deflation but the model uses " + deflation_to_string(model.mode));
  }
  if (subject < 0 || subject >= components.subject_count()) {
    fail(ErrorCode::dimension_mismatch, "subject index out of range");
  }
  const int n = model.process_count();
  const int orders = model.orders();
  Eigen::VectorXd scores(n * orders);
  for (int j = 0; j < n; ++j)
    for (int m = 0; m < orders; ++m) scores(model.index(j, m)) = components.xi[j](subject, m);
  return reconstruct(scores, model);
}

Eigen::VectorXd predict_points(const std::vector<SparseSample>& partial_observations,
                               const ScoreModel& model, int process,
                               const Eigen::VectorXd& target_times) {
  check_model(model);
  if (process < 0 || process >= model.process_count()) {
    fail(ErrorCode::dimension_mismatch, "process index out of range");
  }
  Eigen::VectorXd scores = blup_scores(partial_observations, model);
  std::vector<GridFunction> curves = reconstruct(scores, model);
  Eigen::VectorXd out(target_times.size());
  for (int k = 0; k < target_times.size(); ++k) {
    out(k) = curves[process].interpolate(target_times(k));
  }
  return out;
}

}  // namespace fgcca
