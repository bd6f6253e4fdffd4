#include "fgcca/grid.hpp"

#include <cmath>
#include <sstream>

namespace fgcca {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_grid: return "invalid-grid";
    case ErrorCode::incompatible_grid: return "incompatible-grid";
    case ErrorCode::ill_posed_metric: return "ill-posed-metric";
    case ErrorCode::schema_error: return "schema-error";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::range_error: return "range-error";
    case ErrorCode::duplicate_observation: return "duplicate-observation";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::bandwidth_too_small: return "bandwidth-too-small";
    case ErrorCode::no_overlap: return "no-overlap";
    case ErrorCode::degenerate_process: return "degenerate-process";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::stationary_point: return "stationary-point";
    case ErrorCode::numerical_failure: return "numerical-failure";
    case ErrorCode::degenerate_component: return "degenerate-component";
    case ErrorCode::normalization_error: return "normalization-error";
    case ErrorCode::sparse_data: return "sparse-data";
    case ErrorCode::extrapolation: return "extrapolation";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::reconstruction_basis: return "reconstruction-basis";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown-error";
}

Eigen::VectorXd trapezoid_weights(const Eigen::VectorXd& points) {
  const int n = static_cast<int>(points.size());
  if (n < 2) fail(ErrorCode::invalid_grid, "grid needs at least 2 points");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (int k = 0; k + 1 < n; ++k) {
    const double h = points(k + 1) - points(k);
    w(k) += 0.5 * h;
    w(k + 1) += 0.5 * h;
  }
  return w;
}

namespace {

void check_points(const Eigen::VectorXd& points) {
  const int n = static_cast<int>(points.size());
  if (n < 2) fail(ErrorCode::invalid_grid, "grid needs at least 2 points");
  for (int k = 0; k < n; ++k) {
    if (!std::isfinite(points(k)))
      fail(ErrorCode::invalid_grid, "grid point " + std::to_string(k) + " is not finite");
  }
  for (int k = 0; k + 1 < n; ++k) {
    if (!(points(k) < points(k + 1))) {
      std::ostringstream msg;
      msg << "grid points must be strictly increasing, got " << points(k) << " then "
          << points(k + 1) << " at index " << k;
      fail(ErrorCode::invalid_grid, msg.str());
    }
  }
}

void check_weights(const Eigen::VectorXd& points, const Eigen::VectorXd& weights) {
  if (weights.size() != points.size())
    fail(ErrorCode::invalid_grid, "weight count does not match point count");
  for (int k = 0; k < weights.size(); ++k) {
    if (!std::isfinite(weights(k)) || weights(k) <= 0.0)
      fail(ErrorCode::invalid_grid, "quadrature weight " + std::to_string(k) + " must be positive");
  }
  const double span = points(points.size() - 1) - points(0);
  const double sum = weights.sum();
  if (std::abs(sum - span) > 1e-12 * std::max(1.0, std::abs(span))) {
    std::ostringstream msg;
    msg << "quadrature weights sum to " << sum << " but the grid spans " << span;
    fail(ErrorCode::invalid_grid, msg.str());
  }
}

}  // namespace

TimeGrid::TimeGrid(Eigen::VectorXd points) : points_(std::move(points)) {
  check_points(points_);
  weights_ = trapezoid_weights(points_);
}

TimeGrid::TimeGrid(Eigen::VectorXd points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  check_points(points_);
  check_weights(points_, weights_);
}

std::shared_ptr<const TimeGrid> TimeGrid::uniform(double a, double b, int size) {
  if (!(a < b)) fail(ErrorCode::invalid_grid, "interval start must be below its end");
  if (size < 2) fail(ErrorCode::invalid_grid, "grid needs at least 2 points");
  return std::make_shared<TimeGrid>(Eigen::VectorXd::LinSpaced(size, a, b));
}

bool TimeGrid::same_as(const TimeGrid& other) const {
  if (this == &other) return true;
  return points_.size() == other.points_.size() && points_ == other.points_ &&
         weights_ == other.weights_;
}

GridFunction::GridFunction(TimeGridPtr grid_in, Eigen::VectorXd values_in)
    : grid(std::move(grid_in)), values(std::move(values_in)) {
  if (!grid) fail(ErrorCode::invalid_grid, "function has no grid");
  if (values.size() != grid->size())
    fail(ErrorCode::dimension_mismatch,
         "function has " + std::to_string(values.size()) + " values on a grid of size " +
             std::to_string(grid->size()));
  if (!values.allFinite()) fail(ErrorCode::numerical_failure, "function values must be finite");
}

GridFunction GridFunction::zero(TimeGridPtr grid) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(grid->size());
  return GridFunction(std::move(grid), std::move(v));
}

GridFunction GridFunction::constant(TimeGridPtr grid, double value) {
  Eigen::VectorXd v = Eigen::VectorXd::Constant(grid->size(), value);
  return GridFunction(std::move(grid), std::move(v));
}

double GridFunction::interpolate(double t) const {
  const Eigen::VectorXd& p = grid->points();
  const int n = static_cast<int>(p.size());
  const double tol = 1e-12 * std::max(1.0, grid->length());
  if (t < p(0) - tol || t > p(n - 1) + tol) {
    std::ostringstream msg;
    msg << "time " << t << " lies outside the grid range [" << p(0) << ", " << p(n - 1) << "]";
    fail(ErrorCode::extrapolation, msg.str());
  }
  if (t <= p(0)) return values(0);
  if (t >= p(n - 1)) return values(n - 1);
  // First index with p(hi) >= t.
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (p(mid) < t) lo = mid; else hi = mid;
  }
  const double u = (t - p(lo)) / (p(hi) - p(lo));
  return (1.0 - u) * values(lo) + u * values(hi);
}

namespace {

void require_same_grid(const TimeGridPtr& a, const TimeGridPtr& b, const char* what) {
  if (!a || !b) fail(ErrorCode::invalid_grid, std::string(what) + ": missing grid");
  if (!a->same_as(*b))
    fail(ErrorCode::incompatible_grid, std::string(what) + ": operands live on different grids");
}

}  // namespace

double inner_product(const GridFunction& f, const GridFunction& g) {
  require_same_grid(f.grid, g.grid, "inner_product");
  return (f.grid->weights().array() * f.values.array() * g.values.array()).sum();
}

double l2_norm(const GridFunction& f) {
  return std::sqrt(std::max(0.0, inner_product(f, f)));
}

GridOperator::GridOperator(TimeGridPtr row_grid_in, TimeGridPtr col_grid_in,
                           Eigen::MatrixXd kernel_in)
    : row_grid(std::move(row_grid_in)), col_grid(std::move(col_grid_in)),
      kernel(std::move(kernel_in)) {
  if (!row_grid || !col_grid) fail(ErrorCode::invalid_grid, "operator has no grid");
  if (kernel.rows() != row_grid->size() || kernel.cols() != col_grid->size())
    fail(ErrorCode::dimension_mismatch,
         "kernel is " + std::to_string(kernel.rows()) + "x" + std::to_string(kernel.cols()) +
             " but the grids have " + std::to_string(row_grid->size()) + " and " +
             std::to_string(col_grid->size()) + " points");
  if (!kernel.allFinite()) fail(ErrorCode::numerical_failure, "kernel values must be finite");
}

GridFunction apply_operator(const GridOperator& op, const GridFunction& f) {
  require_same_grid(op.col_grid, f.grid, "apply_operator");
  Eigen::VectorXd weighted = op.col_grid->weights().cwiseProduct(f.values);
  return GridFunction(op.row_grid, op.kernel * weighted);
}

GridOperator transpose(const GridOperator& op) {
  return GridOperator(op.col_grid, op.row_grid, op.kernel.transpose());
}

double bilinear_form(const GridFunction& f, const GridOperator& op, const GridFunction& g) {
  require_same_grid(op.row_grid, f.grid, "bilinear_form");
  require_same_grid(op.col_grid, g.grid, "bilinear_form");
  Eigen::VectorXd left = op.row_grid->weights().cwiseProduct(f.values);
  Eigen::VectorXd right = op.col_grid->weights().cwiseProduct(g.values);
  return left.dot(op.kernel * right);
}

void symmetrize(GridOperator& op) {
  if (!op.is_square())
    fail(ErrorCode::incompatible_grid, "symmetrize needs a square operator");
  op.kernel = 0.5 * (op.kernel + op.kernel.transpose()).eval();
}

Metric Metric::identity(TimeGridPtr grid) {
  return Metric(std::move(grid), 1.0, Eigen::MatrixXd(), 0.0);
}

Metric Metric::scaled_identity(TimeGridPtr grid, double alpha, int process_index) {
  return Metric(std::move(grid), alpha, Eigen::MatrixXd(), 0.0, process_index);
}

Metric::Metric(TimeGridPtr grid, double alpha, Eigen::MatrixXd kernel, double beta,
               int process_index)
    : grid_(std::move(grid)), identity_coef_(alpha), kernel_coef_(beta),
      kernel_(std::move(kernel)), process_index_(process_index) {
  if (!grid_) fail(ErrorCode::invalid_grid, "metric has no grid");
  if (kernel_coef_ != 0.0) {
    if (kernel_.rows() != grid_->size() || kernel_.cols() != grid_->size())
      fail(ErrorCode::dimension_mismatch, "metric kernel does not match its grid");
    kernel_ = 0.5 * (kernel_ + kernel_.transpose()).eval();
  }
}

GridFunction Metric::apply(const GridFunction& v) const {
  require_same_grid(grid_, v.grid, "metric apply");
  Eigen::VectorXd out = identity_coef_ * v.values;
  if (kernel_coef_ != 0.0)
    out.noalias() += kernel_coef_ * (kernel_ * grid_->weights().cwiseProduct(v.values));
  return GridFunction(v.grid, std::move(out));
}

void Metric::ensure_factorized() const {
  if (llt_) return;
  const int n = grid_->size();
  sqrt_weights_ = grid_->weights().cwiseSqrt();
  // Conjugating by diag(sqrt(w)) turns alpha I + beta K diag(w) into the
  // symmetric matrix alpha I + beta diag(sqrt(w)) K diag(sqrt(w)), which is
  // positive definite exactly when the metric is in the quadrature inner
  // product.
  Eigen::MatrixXd sym = Eigen::MatrixXd::Identity(n, n) * identity_coef_;
  if (kernel_coef_ != 0.0) {
    sym.noalias() +=
        kernel_coef_ * (sqrt_weights_.asDiagonal() * kernel_ * sqrt_weights_.asDiagonal());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) {
    std::string who = process_index_ >= 0
                          ? "constraint metric for process " + std::to_string(process_index_)
                          : "constraint metric";
    fail(ErrorCode::ill_posed_metric, who + " is not positive definite");
  }
  llt_ = std::move(llt);
}

GridFunction Metric::solve(const GridFunction& rhs) const {
  require_same_grid(grid_, rhs.grid, "metric solve");
  if (is_identity()) return rhs;
  if (kernel_coef_ == 0.0) {
    if (identity_coef_ <= 0.0) {
      std::string who = process_index_ >= 0
                            ? "constraint metric for process " + std::to_string(process_index_)
                            : "constraint metric";
      fail(ErrorCode::ill_posed_metric, who + " is not positive definite");
    }
    return GridFunction(rhs.grid, rhs.values / identity_coef_);
  }
  ensure_factorized();
  Eigen::VectorXd z = llt_->solve(sqrt_weights_.cwiseProduct(rhs.values));
  return GridFunction(rhs.grid, z.cwiseQuotient(sqrt_weights_));
}

double Metric::inverse_quadratic_norm(const GridFunction& v) const {
  GridFunction x = solve(v);
  return std::sqrt(std::max(0.0, inner_product(v, x)));
}

}  // namespace fgcca
