#ifndef FGCCA_COMPONENTS_HPP
#define FGCCA_COMPONENTS_HPP

#include <string>
#include <vector>

#include "fgcca/deflation.hpp"

namespace fgcca {

// Everything needed to score new subjects: the fitted basis, the score
// covariance, and the observation model around it. Score vectors are laid
// out process-major: entry j * orders + m is process j, order m.
struct ScoreModel {
  std::vector<std::vector<GridFunction>> functions;  // [order][process]
  std::vector<GridFunction> means;                   // original data scale
  Eigen::MatrixXd score_cov;
  std::vector<double> noise_vars;  // original data scale
  std::vector<double> norm_weights;  // 1.0 when the fit ran on the raw scale
  DeflationMode mode = DeflationMode::orthogonal;
  bool psd_adjusted = false;  // score_cov needed an eigenvalue clamp

  int orders() const { return static_cast<int>(functions.size()); }
  int process_count() const {
    return functions.empty() ? 0 : static_cast<int>(functions.front().size());
  }
  int index(int process, int order) const { return process * orders() + order; }
};

// Per-subject coefficients and components, N x M per process. Orthogonal
// mode keeps y = xi; uncorrelated mode fills y with the decorrelated
// residuals.
struct ComponentSet {
  std::vector<Eigen::MatrixXd> xi;
  std::vector<Eigen::MatrixXd> y;
  DeflationMode mode = DeflationMode::orthogonal;
  std::vector<std::string> warnings;

  int subject_count() const { return xi.empty() ? 0 : static_cast<int>(xi.front().rows()); }
  int orders() const { return xi.empty() ? 0 : static_cast<int>(xi.front().cols()); }
  int process_count() const { return static_cast<int>(xi.size()); }
};

// E[xi xi^T] from quadratic forms of the undeflated covariance surfaces:
// entry ((j,m),(j',m')) = <f_j^m, K_jj' f_j'^m'>. Symmetrized, eigenvalues
// clamped at zero; `adjusted` reports whether the clamp changed anything.
Eigen::MatrixXd estimate_score_cov(const ProcessModel& model, const FgccaFit& fit,
                                   bool* adjusted = nullptr);

ScoreModel build_score_model(const ProcessModel& model, const FgccaFit& fit);

std::vector<SparseSample> subject_observations(const LongitudinalDataset& dataset, int subject);

// Conditional-mean scores Sigma F^T (F Sigma F^T + noise)^{-1} (U - mu),
// with F the canonical functions linearly interpolated at the observation
// times. Processes without observations still get scores through the
// cross-covariance. No observations anywhere returns the prior mean zero.
// Zero noise variances are floored at 1e-10 inside the solve.
Eigen::VectorXd blup_scores(const std::vector<SparseSample>& observations,
                            const ScoreModel& model);

// Plain quadrature scores <U - mu, f_j^m> after interpolating the
// observations onto the grid (held constant beyond the first and last
// observation). A coverage gap above 20% of the interval is refused unless
// enforce_coverage is off.
Eigen::VectorXd quadrature_scores(const std::vector<SparseSample>& observations,
                                  const ScoreModel& model, bool enforce_coverage = true);

// Orthogonal mode passes xi through. Uncorrelated mode residualizes each
// order against the previous components of its process (intercept included,
// so the empirical correlations vanish exactly); degenerate components are
// skipped with a warning.
ComponentSet decorrelate(const std::vector<Eigen::VectorXd>& scores, const ScoreModel& model);

// mu_j + sum_m xi_jm f_j^m, mapped back to the original data scale.
std::vector<GridFunction> reconstruct(const Eigen::VectorXd& scores, const ScoreModel& model);
std::vector<GridFunction> reconstruct(const Eigen::VectorXd& scores, const ScoreModel& model,
                                      TimeGridPtr grid);
// Uses the basis coefficients xi, never the decorrelated y; refuses a
// component set whose mode disagrees with the model.
std::vector<GridFunction> reconstruct(const ComponentSet& components, int subject,
                                      const ScoreModel& model);

// blup_scores on the partial observations, reconstruct, read off the
// requested times.
Eigen::VectorXd predict_points(const std::vector<SparseSample>& partial_observations,
                               const ScoreModel& model, int process,
                               const Eigen::VectorXd& target_times);

}  // namespace fgcca

#endif
