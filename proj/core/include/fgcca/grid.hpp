#ifndef FGCCA_GRID_HPP
#define FGCCA_GRID_HPP

#include <Eigen/Dense>
#include <memory>
#include <optional>

#include "fgcca/errors.hpp"

namespace fgcca {

// Trapezoid quadrature weights for an increasing point sequence.
// Weights sum to points(G-1) - points(0).
Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& points);

// Discretization of a compact interval [a, b]: quadrature nodes plus
// positive weights. Immutable after construction and usually shared
// between the functions and operators living on it.
class TimeGrid {
 public:
  explicit TimeGrid(Eigen::VectorXd points);
  TimeGrid(Eigen::VectorXd points, Eigen::VectorXd weights);

  static std::shared_ptr<const TimeGrid> uniform(double a, double b, int size);

  int size() const { return static_cast<int>(points_.size()); }
  double start() const { return points_(0); }
  double end() const { return points_(points_.size() - 1); }
  double length() const { return end() - start(); }
  const Eigen::VectorXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  bool same_as(const TimeGrid& other) const;

 private:
  Eigen::VectorXd points_;
  Eigen::VectorXd weights_;
};

using TimeGridPtr = std::shared_ptr<const TimeGrid>;

// A function known by its values on a grid.
struct GridFunction {
  TimeGridPtr grid;
  Eigen::VectorXd values;

  GridFunction() = default;
  GridFunction(TimeGridPtr grid, Eigen::VectorXd values);

  int size() const { return static_cast<int>(values.size()); }

  static GridFunction zero(TimeGridPtr grid);
  static GridFunction constant(TimeGridPtr grid, double value);

  // Piecewise-linear evaluation at t; t must lie inside the grid range.
  double interpolate(double t) const;
};

// <f, g> = sum_k w_k f_k g_k.
double inner_product(const GridFunction& f, const GridFunction& g);
double l2_norm(const GridFunction& f);

// An integral operator known by its kernel values on row_grid x col_grid.
// Application threads the column quadrature weights:
//   (K f)(s) = sum_t kernel(s, t) w_t f(t).
struct GridOperator {
  TimeGridPtr row_grid;
  TimeGridPtr col_grid;
  Eigen::MatrixXd kernel;

  GridOperator() = default;
  GridOperator(TimeGridPtr row_grid, TimeGridPtr col_grid, Eigen::MatrixXd kernel);

  bool is_square() const { return row_grid->same_as(*col_grid); }
  double max_abs() const { return kernel.size() == 0 ? 0.0 : kernel.cwiseAbs().maxCoeff(); }
};

GridFunction apply_operator(const GridOperator& op, const GridFunction& f);
GridOperator transpose(const GridOperator& op);

// <f, K g> as a single quadrature-weighted bilinear form.
double bilinear_form(const GridFunction& f, const GridOperator& op, const GridFunction& g);

// Symmetrize a square kernel in place: K <- (K + K^T) / 2.
void symmetrize(GridOperator& op);

// The constraint metric v -> alpha v + beta K W v. Positive definiteness is
// meant in the quadrature inner product; solves go through a Cholesky
// factorization of the half-weighted symmetric form, computed lazily and
// cached. alpha = 1, beta = 0 is the identity and short-circuits everything.
class Metric {
 public:
  static Metric identity(TimeGridPtr grid);
  static Metric scaled_identity(TimeGridPtr grid, double alpha, int process_index = -1);
  Metric(TimeGridPtr grid, double alpha, Eigen::MatrixXd kernel, double beta,
         int process_index = -1);

  const TimeGridPtr& grid() const { return grid_; }
  bool is_identity() const { return kernel_coef_ == 0.0 && identity_coef_ == 1.0; }

  GridFunction apply(const GridFunction& v) const;

  // x with apply(x) = rhs. Throws ill_posed_metric if the metric is not
  // positive definite.
  GridFunction solve(const GridFunction& rhs) const;

  // sqrt(<v, M^{-1} v>), the norm of M^{-1/2} v.
  double inverse_quadratic_norm(const GridFunction& v) const;

 private:
  void ensure_factorized() const;

  TimeGridPtr grid_;
  double identity_coef_ = 1.0;
  double kernel_coef_ = 0.0;
  Eigen::MatrixXd kernel_;
  int process_index_ = -1;

  mutable std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_;
  mutable Eigen::VectorXd sqrt_weights_;
};

}  // namespace fgcca

#endif
