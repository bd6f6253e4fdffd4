#ifndef FGCCA_DEFLATION_HPP
#define FGCCA_DEFLATION_HPP

#include <vector>

#include "fgcca/solver.hpp"

namespace fgcca {

// (I - P_row) K (I - P_col) with P f = <f_m, f> f_m. Both functions must be
// unit L2 norm, or the projections are not projections.
GridOperator deflate_orthogonal(const GridOperator& op, const GridFunction& f_row,
                                const GridFunction& f_col);

// (I - d_r S_row P_row) K (I - d_c P_col S_col), d = <f, S f>^{-1}. Scale
// invariant in the functions; keeps later rounds' components uncorrelated
// with the current ones.
GridOperator deflate_uncorrelated(const GridOperator& op, const GridOperator& self_row,
                                  const GridOperator& self_col, const GridFunction& f_row,
                                  const GridFunction& f_col);

// One deflation round over every pair, self pairs included, producing the
// operators for the next order. Orthogonal mode L2-normalizes the functions
// first (copies; the inputs stay untouched).
CovarianceSet deflate_all(const CovarianceSet& covariances,
                          const std::vector<GridFunction>& functions, DeflationMode mode);

struct FgccaFit {
  std::vector<std::vector<GridFunction>> functions;  // [order][process]
  std::vector<std::vector<double>> traces;           // criterion per sweep, per order
  std::vector<bool> converged;                       // per order
  std::vector<std::vector<double>> deflation_d;      // per round, uncorrelated mode only
  FgccaConfig config;

  int orders() const { return static_cast<int>(functions.size()); }
  int process_count() const {
    return functions.empty() ? 0 : static_cast<int>(functions.front().size());
  }
};

// Fits config.n_components orders: fit, record, deflate, repeat. Orthogonal
// mode records L2-normalized functions (the reconstruction basis); with
// tau = 1 that is what the solver returns anyway. Random initialization
// shifts the seed by one per order so restarts differ. A failure at order m
// is rethrown with the order named. The consecutive-orthogonality guarantee
// of uncorrelated mode holds for tau = 1.
FgccaFit fit_higher_order(const CovarianceSet& covariances, const FgccaConfig& config);
FgccaFit fit_higher_order(const ProcessModel& model, const FgccaConfig& config);

}  // namespace fgcca

#endif
