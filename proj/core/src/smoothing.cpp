#include "fgcca/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace fgcca {

namespace {

// Index range [lo, hi) of grid points inside [t - h, t + h].
std::pair<int, int> window_range(const Eigen::VectorXd& points, double t, double h) {
  const double* begin = points.data();
  const double* end = begin + points.size();
  const double* lo = std::lower_bound(begin, end, t - h);
  const double* hi = std::upper_bound(begin, end, t + h);
  return {static_cast<int>(lo - begin), static_cast<int>(hi - begin)};
}

void check_bandwidth(double h, const char* what) {
  if (!std::isfinite(h) || h <= 0.0)
    fail(ErrorCode::invalid_config, std::string(what) + " bandwidth must be positive");
}

constexpr double kDetTolerance = 1e-10;

}  // namespace

CurveSmoother::CurveSmoother(TimeGridPtr grid, double bandwidth)
    : grid_(std::move(grid)), bandwidth_(bandwidth) {
  check_bandwidth(bandwidth_, "curve");
  const int n = grid_->size();
  s0_ = Eigen::ArrayXd::Zero(n);
  s1_ = Eigen::ArrayXd::Zero(n);
  s2_ = Eigen::ArrayXd::Zero(n);
  t0_ = Eigen::ArrayXd::Zero(n);
  t1_ = Eigen::ArrayXd::Zero(n);
}

void CurveSmoother::add(double t, double y) {
  auto [lo, hi] = window_range(grid_->points(), t, bandwidth_);
  for (int k = lo; k < hi; ++k) {
    const double u = (t - grid_->points()(k)) / bandwidth_;
    const double w = epanechnikov(u);
    if (w == 0.0) continue;
    s0_(k) += w;
    s1_(k) += w * u;
    s2_(k) += w * u * u;
    t0_(k) += w * y;
    t1_(k) += w * u * y;
  }
}

void CurveSmoother::add_many(const Eigen::VectorXd& t, const Eigen::VectorXd& y) {
  if (t.size() != y.size())
    fail(ErrorCode::dimension_mismatch, "time and value vectors differ in length");
  for (int k = 0; k < t.size(); ++k) add(t(k), y(k));
}

GridFunction CurveSmoother::fit() const {
  const int n = grid_->size();
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) {
    const double det = s0_(k) * s2_(k) - s1_(k) * s1_(k);
    if (!(s0_(k) > 0.0) || det <= kDetTolerance * s0_(k) * s0_(k)) {
      std::ostringstream msg;
      msg << "bandwidth " << bandwidth_ << " leaves too little data near grid point t="
          << grid_->points()(k);
      fail(ErrorCode::bandwidth_too_small, msg.str());
    }
    out(k) = (s2_(k) * t0_(k) - s1_(k) * t1_(k)) / det;
  }
  return GridFunction(grid_, std::move(out));
}

SurfaceSmoother::SurfaceSmoother(TimeGridPtr row_grid, TimeGridPtr col_grid,
                                 double row_bandwidth, double col_bandwidth)
    : row_grid_(std::move(row_grid)), col_grid_(std::move(col_grid)),
      row_bandwidth_(row_bandwidth), col_bandwidth_(col_bandwidth) {
  check_bandwidth(row_bandwidth_, "surface row");
  check_bandwidth(col_bandwidth_, "surface col");
  const int r = row_grid_->size();
  const int c = col_grid_->size();
  s00_ = Eigen::MatrixXd::Zero(r, c);
  s10_ = Eigen::MatrixXd::Zero(r, c);
  s01_ = Eigen::MatrixXd::Zero(r, c);
  s20_ = Eigen::MatrixXd::Zero(r, c);
  s11_ = Eigen::MatrixXd::Zero(r, c);
  s02_ = Eigen::MatrixXd::Zero(r, c);
  t00_ = Eigen::MatrixXd::Zero(r, c);
  t10_ = Eigen::MatrixXd::Zero(r, c);
  t01_ = Eigen::MatrixXd::Zero(r, c);
}

void SurfaceSmoother::add(double s, double t, double value) {
  auto [rlo, rhi] = window_range(row_grid_->points(), s, row_bandwidth_);
  auto [clo, chi] = window_range(col_grid_->points(), t, col_bandwidth_);
  for (int r = rlo; r < rhi; ++r) {
    const double us = (s - row_grid_->points()(r)) / row_bandwidth_;
    const double ws = epanechnikov(us);
    if (ws == 0.0) continue;
    for (int c = clo; c < chi; ++c) {
      const double ut = (t - col_grid_->points()(c)) / col_bandwidth_;
      const double w = ws * epanechnikov(ut);
      if (w == 0.0) continue;
      s00_(r, c) += w;
      s10_(r, c) += w * us;
      s01_(r, c) += w * ut;
      s20_(r, c) += w * us * us;
      s11_(r, c) += w * us * ut;
      s02_(r, c) += w * ut * ut;
      t00_(r, c) += w * value;
      t10_(r, c) += w * us * value;
      t01_(r, c) += w * ut * value;
    }
  }
}

Eigen::MatrixXd SurfaceSmoother::fit() const {
  const int rows = row_grid_->size();
  const int cols = col_grid_->size();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Matrix3d m;
  Eigen::Vector3d rhs;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      m << s00_(r, c), s10_(r, c), s01_(r, c),
           s10_(r, c), s20_(r, c), s11_(r, c),
           s01_(r, c), s11_(r, c), s02_(r, c);
      rhs << t00_(r, c), t10_(r, c), t01_(r, c);
      const double scale = s00_(r, c);
      const double det = m.determinant();
      if (!(scale > 0.0) || det <= kDetTolerance * scale * scale * scale) {
        std::ostringstream msg;
        msg << "bandwidths (" << row_bandwidth_ << ", " << col_bandwidth_
            << ") leave too little data near grid point (s=" << row_grid_->points()(r)
            << ", t=" << col_grid_->points()(c) << ")";
        fail(ErrorCode::bandwidth_too_small, msg.str());
      }
      out(r, c) = m.fullPivLu().solve(rhs)(0);
    }
  }
  return out;
}

double gcv_score(const std::vector<double>& times, const std::vector<double>& values,
                 double bandwidth) {
  check_bandwidth(bandwidth, "cross-validated");
  const int n = static_cast<int>(times.size());
  if (n != static_cast<int>(values.size()))
    fail(ErrorCode::dimension_mismatch, "time and value vectors differ in length");
  if (n < 3) fail(ErrorCode::insufficient_data, "cross-validation needs at least 3 observations");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return times[a] < times[b]; });
  std::vector<double> t(n), y(n);
  for (int k = 0; k < n; ++k) {
    t[k] = times[order[k]];
    y[k] = values[order[k]];
  }

  const double inf = std::numeric_limits<double>::infinity();
  double rss = 0.0;
  double trace = 0.0;
  for (int i = 0; i < n; ++i) {
    auto lo = std::lower_bound(t.begin(), t.end(), t[i] - bandwidth);
    auto hi = std::upper_bound(t.begin(), t.end(), t[i] + bandwidth);
    double s0 = 0, s1 = 0, s2 = 0, q0 = 0, q1 = 0;
    for (auto it = lo; it != hi; ++it) {
      const int j = static_cast<int>(it - t.begin());
      const double u = (t[j] - t[i]) / bandwidth;
      const double w = epanechnikov(u);
      s0 += w;
      s1 += w * u;
      s2 += w * u * u;
      q0 += w * y[j];
      q1 += w * u * y[j];
    }
    const double det = s0 * s2 - s1 * s1;
    if (!(s0 > 0.0) || det <= kDetTolerance * s0 * s0) return inf;
    const double fitted = (s2 * q0 - s1 * q1) / det;
    rss += (y[i] - fitted) * (y[i] - fitted);
    trace += epanechnikov(0.0) * s2 / det;
  }
  const double dof = n - trace;
  if (dof <= 1e-8 * n) return inf;
  return n * rss / (dof * dof);
}

double select_bandwidth_gcv(std::vector<double> times, std::vector<double> values,
                            const std::vector<double>& candidates) {
  if (candidates.empty()) fail(ErrorCode::invalid_config, "no bandwidth candidates given");
  double best = std::numeric_limits<double>::infinity();
  double chosen = 0.0;
  for (double h : candidates) {
    const double score = gcv_score(times, values, h);
    if (score < best) {
      best = score;
      chosen = h;
    }
  }
  if (!std::isfinite(best)) {
    std::ostringstream msg;
    msg << "every candidate bandwidth up to " << *std::max_element(candidates.begin(),
                                                                   candidates.end())
        << " leaves a degenerate window";
    fail(ErrorCode::bandwidth_too_small, msg.str());
  }
  return chosen;
}

std::vector<double> default_bandwidth_grid(double span, int count) {
  if (!(span > 0.0)) fail(ErrorCode::invalid_config, "span must be positive");
  if (count < 1) fail(ErrorCode::invalid_config, "bandwidth grid needs at least one candidate");
  std::vector<double> out(count);
  const double lo = 0.05 * span;
  const double hi = 0.5 * span;
  if (count == 1) {
    out[0] = std::sqrt(lo * hi);
    return out;
  }
  const double ratio = std::pow(hi / lo, 1.0 / (count - 1));
  double h = lo;
  for (int k = 0; k < count; ++k) {
    out[k] = h;
    h *= ratio;
  }
  return out;
}

}  // namespace fgcca
