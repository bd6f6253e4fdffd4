#ifndef FGCCA_SMOOTHING_HPP
#define FGCCA_SMOOTHING_HPP

#include <vector>

#include "fgcca/grid.hpp"

namespace fgcca {

// Epanechnikov weight, 0.75 (1 - u^2) on |u| <= 1 and 0 outside.
inline double epanechnikov(double u) {
  const double a = std::abs(u);
  return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
}

// Local linear smoother evaluated at every node of a fixed grid. Observations
// are scattered into per-node moment sums as they arrive, so the fit never
// revisits the raw data and memory stays proportional to the grid size.
class CurveSmoother {
 public:
  CurveSmoother(TimeGridPtr grid, double bandwidth);

  void add(double t, double y);
  void add_many(const Eigen::VectorXd& t, const Eigen::VectorXd& y);

  // Solves the 2x2 normal equations at each node. Throws bandwidth-too-small
  // when some node has too little data nearby to pin down a line.
  GridFunction fit() const;

  double bandwidth() const { return bandwidth_; }

 private:
  TimeGridPtr grid_;
  double bandwidth_;
  Eigen::ArrayXd s0_, s1_, s2_, t0_, t1_;
};

// Two-dimensional analogue on a row grid x col grid rectangle, fitting a
// local plane at each node pair.
class SurfaceSmoother {
 public:
  SurfaceSmoother(TimeGridPtr row_grid, TimeGridPtr col_grid, double row_bandwidth,
                  double col_bandwidth);

  void add(double s, double t, double value);

  Eigen::MatrixXd fit() const;

 private:
  TimeGridPtr row_grid_;
  TimeGridPtr col_grid_;
  double row_bandwidth_;
  double col_bandwidth_;
  Eigen::MatrixXd s00_, s10_, s01_, s20_, s11_, s02_, t00_, t10_, t01_;
};

// Exact generalized cross-validation score for a local linear fit with the
// given bandwidth: n * RSS / (n - tr(H))^2, with the fit and the hat diagonal
// evaluated at the observation times themselves. Returns infinity when the
// bandwidth leaves a degenerate window somewhere.
double gcv_score(const std::vector<double>& times, const std::vector<double>& values,
                 double bandwidth);

// Picks the candidate with the smallest GCV score. Throws bandwidth-too-small
// when every candidate is degenerate.
double select_bandwidth_gcv(std::vector<double> times, std::vector<double> values,
                            const std::vector<double>& candidates);

// Geometric sweep of bandwidth candidates between 5% and 50% of the span.
std::vector<double> default_bandwidth_grid(double span, int count = 8);

}  // namespace fgcca

#endif
