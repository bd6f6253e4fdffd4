#ifndef FGCCA_RESPONSE_HPP
#define FGCCA_RESPONSE_HPP

#include <string>
#include <vector>

#include "fgcca/components.hpp"

namespace fgcca {

// Cross-covariance between one functional process and the response vector:
// column i holds t -> E[X_j(t) Y_i] on the process grid. The response side
// carries no quadrature weights; it is plain Euclidean.
struct ResponseCrossCov {
  TimeGridPtr grid;
  Eigen::MatrixXd kernel;  // grid size x p
};

struct ResponseBlock {
  std::vector<std::string> subject_ids;   // row order, aligned with the dataset
  std::vector<std::string> column_names;  // p response coordinates
  Eigen::MatrixXd y;                      // N x p, centered
  std::vector<ResponseCrossCov> cross_cov;  // per process
  std::vector<std::string> warnings;

  int p() const {
    if (!cross_cov.empty()) return static_cast<int>(cross_cov.front().kernel.cols());
    return static_cast<int>(y.cols());
  }
  bool active() const;  // any nonzero cross-covariance entry
};

// Response table read from CSV: subject_id column plus p named numeric
// columns, not yet aligned or centered.
struct RawResponse {
  std::vector<std::string> subject_ids;
  std::vector<std::string> column_names;
  Eigen::MatrixXd y;
};

RawResponse load_response_csv(const std::string& path);

// Rows reordered to the dataset's subject order; every dataset subject must
// appear, extra rows are dropped.
Eigen::MatrixXd align_response(const RawResponse& raw, const LongitudinalDataset& dataset);

// Column-wise centering; standardize also divides by the sample standard
// deviation. Constant columns become zero with a warning.
Eigen::MatrixXd center_response(Eigen::MatrixXd y, bool standardize,
                                const std::vector<std::string>& column_names,
                                std::vector<std::string>* warnings = nullptr);

// Per response coordinate, a 1-D local-linear smooth of the centered
// products (U_jk - mu_j(t_jk)) Y_i pooled over subjects, evaluated on the
// grid. Zero columns stay zero with a warning.
Eigen::MatrixXd estimate_response_cross_cov(const LongitudinalDataset& dataset,
                                            const Eigen::MatrixXd& y_centered, int process,
                                            const GridFunction& mean, TimeGridPtr grid,
                                            double bandwidth,
                                            std::vector<std::string>* warnings = nullptr);

// Full pipeline: align, center, smooth every process. A zero bandwidth falls
// back to the model's mean bandwidths; kernels are scaled onto the model's
// normalized scale when it has one.
ResponseBlock build_response_block(const LongitudinalDataset& dataset, const ProcessModel& model,
                                   const RawResponse& raw, double bandwidth = 0.0,
                                   bool standardize = false);

struct ResponseState {
  SolverState state;
  Eigen::VectorXd a;  // unit Euclidean norm
};

// Criterion extended by 2 sum_j g(<f_j, K_jY a>), block ascent with the
// response weights updated last in each sweep from a = ones/sqrt(p). A block
// with all-zero kernels reduces to fit_single bit for bit (the a returned is
// the starting point). Processes may be held in the fit by the response
// alone; the connection matrix can be all zero.
ResponseState fit_with_response(const CovarianceSet& covariances, const ResponseBlock& response,
                                const FgccaConfig& config);
ResponseState fit_with_response(const ProcessModel& model, const ResponseBlock& response,
                                const FgccaConfig& config);

struct ResponseFit {
  FgccaFit fit;
  std::vector<Eigen::VectorXd> a;  // per order
};

// fit_with_response per order, deflating the cross-covariances between
// orders as usual and the response kernels on their functional side with
// the same projector.
ResponseFit fit_response_higher_order(const CovarianceSet& covariances,
                                      const ResponseBlock& response, const FgccaConfig& config);

}  // namespace fgcca

#endif
