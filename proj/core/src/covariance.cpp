#include "fgcca/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "fgcca/smoothing.hpp"

namespace fgcca {

CovarianceSet::CovarianceSet(int process_count) { resize(process_count); }

void CovarianceSet::resize(int process_count) {
  if (process_count < 1) fail(ErrorCode::invalid_config, "covariance table needs a process");
  size_ = process_count;
  table_.assign(static_cast<size_t>(size_) * size_, GridOperator());
  present_.assign(static_cast<size_t>(size_) * size_, false);
}

int CovarianceSet::index(int j, int jp) const {
  if (j < 0 || jp < 0 || j >= size_ || jp >= size_)
    fail(ErrorCode::dimension_mismatch, "covariance index out of range");
  return j * size_ + jp;
}

void CovarianceSet::set(int j, int jp, GridOperator op) {
  if (j == jp) {
    if (!op.is_square())
      fail(ErrorCode::incompatible_grid, "self covariance must be square");
    symmetrize(op);
    table_[index(j, j)] = std::move(op);
    present_[index(j, j)] = true;
    return;
  }
  const int a = std::min(j, jp);
  const int b = std::max(j, jp);
  if (a != j) op = transpose(op);  // store as (a, b)
  table_[index(b, a)] = transpose(op);
  present_[index(b, a)] = true;
  table_[index(a, b)] = std::move(op);
  present_[index(a, b)] = true;
}

const GridOperator& CovarianceSet::get(int j, int jp) const {
  const int k = index(j, jp);
  if (!present_[k])
    fail(ErrorCode::invalid_config, "covariance (" + std::to_string(j + 1) + ", " +
                                        std::to_string(jp + 1) + ") was never set");
  return table_[k];
}

bool CovarianceSet::has(int j, int jp) const {
  if (j < 0 || jp < 0 || j >= size_ || jp >= size_) return false;
  return present_[static_cast<size_t>(j) * size_ + jp];
}

GridFunction estimate_mean(const LongitudinalDataset& dataset, int process, TimeGridPtr grid,
                           double bandwidth) {
  std::set<double> distinct;
  CurveSmoother smoother(std::move(grid), bandwidth);
  for (int i = 0; i < dataset.subject_count(); ++i) {
    const SparseSample& s = dataset.sample(i, process);
    for (int k = 0; k < s.n(); ++k) {
      distinct.insert(s.times(k));
      smoother.add(s.times(k), s.values(k));
    }
  }
  if (distinct.size() < 2)
    fail(ErrorCode::insufficient_data,
         "process '" + dataset.process(process).id + "' has fewer than 2 distinct times");
  return smoother.fit();
}

GridOperator estimate_cross_covariance(const LongitudinalDataset& dataset, int j, int jp,
                                       const GridFunction& mean_j, const GridFunction& mean_jp,
                                       double bandwidth_j, double bandwidth_jp) {
  SurfaceSmoother smoother(mean_j.grid, mean_jp.grid, bandwidth_j, bandwidth_jp);
  int co_observers = 0;
  for (int i = 0; i < dataset.subject_count(); ++i) {
    const SparseSample& a = dataset.sample(i, j);
    const SparseSample& b = dataset.sample(i, jp);
    if (a.n() == 0 || b.n() == 0) continue;
    ++co_observers;
    Eigen::VectorXd ca(a.n()), cb(b.n());
    for (int k = 0; k < a.n(); ++k) ca(k) = a.values(k) - mean_j.interpolate(a.times(k));
    for (int l = 0; l < b.n(); ++l) cb(l) = b.values(l) - mean_jp.interpolate(b.times(l));
    for (int k = 0; k < a.n(); ++k) {
      for (int l = 0; l < b.n(); ++l) {
        if (j == jp && k == l) continue;  // same-time products carry the noise
        smoother.add(a.times(k), b.times(l), ca(k) * cb(l));
      }
    }
  }
  if (co_observers == 0)
    fail(ErrorCode::no_overlap, "no subject observes both process '" + dataset.process(j).id +
                                    "' and process '" + dataset.process(jp).id + "'");
  GridOperator op(mean_j.grid, mean_jp.grid, smoother.fit());
  if (j == jp) symmetrize(op);
  return op;
}

double estimate_noise_variance(const LongitudinalDataset& dataset, int process,
                               const GridFunction& mean, const GridOperator& self_covariance,
                               double bandwidth, double central_fraction) {
  if (!(central_fraction > 0.0) || central_fraction > 1.0)
    fail(ErrorCode::invalid_config, "central fraction must lie in (0, 1]");
  if (!self_covariance.is_square() || !self_covariance.row_grid->same_as(*mean.grid))
    fail(ErrorCode::incompatible_grid, "covariance diagonal does not match the mean grid");

  CurveSmoother smoother(mean.grid, bandwidth);
  for (int i = 0; i < dataset.subject_count(); ++i) {
    const SparseSample& s = dataset.sample(i, process);
    for (int k = 0; k < s.n(); ++k) {
      const double centered = s.values(k) - mean.interpolate(s.times(k));
      smoother.add(s.times(k), centered * centered);
    }
  }
  GridFunction total_var = smoother.fit();

  const TimeGrid& grid = *mean.grid;
  const double margin = 0.5 * (1.0 - central_fraction) * grid.length();
  const double lo = grid.start() + margin;
  const double hi = grid.end() - margin;
  double sum = 0.0;
  int count = 0;
  for (int k = 0; k < grid.size(); ++k) {
    const double t = grid.points()(k);
    if (t < lo || t > hi) continue;
    sum += std::max(total_var.values(k) - self_covariance.kernel(k, k), 0.0);
    ++count;
  }
  if (count == 0)
    fail(ErrorCode::invalid_config, "central fraction leaves no grid point for the noise fit");
  return sum / count;
}

double normalization_weight(const GridOperator& self_covariance, int process) {
  if (!self_covariance.is_square())
    fail(ErrorCode::incompatible_grid, "normalization needs a square covariance");
  const TimeGrid& grid = *self_covariance.row_grid;
  double integral = 0.0;
  for (int k = 0; k < grid.size(); ++k)
    integral += grid.weights()(k) * self_covariance.kernel(k, k);
  if (!(integral > 0.0)) {
    std::ostringstream msg;
    msg << "process " << process + 1 << " has nonpositive integrated variance " << integral;
    fail(ErrorCode::degenerate_process, msg.str());
  }
  return 1.0 / std::sqrt(integral);
}

void normalize_model(ProcessModel& model) {
  if (model.normalized)
    fail(ErrorCode::invalid_config, "model is already normalized");
  const int nproc = model.process_count();
  if (static_cast<int>(model.norm_weights.size()) != nproc)
    fail(ErrorCode::dimension_mismatch, "model is missing normalization weights");
  for (int j = 0; j < nproc; ++j) {
    for (int jp = j; jp < nproc; ++jp) {
      if (!model.covariances.has(j, jp)) continue;
      GridOperator op = model.covariances.get(j, jp);
      op.kernel *= model.norm_weights[j] * model.norm_weights[jp];
      model.covariances.set(j, jp, std::move(op));
    }
  }
  model.normalized = true;
}

ProcessModel estimate_model(const LongitudinalDataset& dataset, const EstimationOptions& options) {
  if (options.grid_size < 2 && !options.shared_grid)
    fail(ErrorCode::invalid_config, "grid size must be at least 2");
  const int nproc = dataset.process_count();
  ProcessModel model;
  model.covariances.resize(nproc);

  for (int j = 0; j < nproc; ++j) {
    const ProcessInfo& info = dataset.process(j);
    if (dataset.total_observations(j) == 0)
      fail(ErrorCode::insufficient_data, "process '" + info.id + "' has no observations");
    model.process_ids.push_back(info.id);
    model.grids.push_back(options.shared_grid
                              ? options.shared_grid
                              : TimeGrid::uniform(info.interval_start, info.interval_end,
                                                  options.grid_size));
  }

  for (int j = 0; j < nproc; ++j) {
    const double span = model.grids[j]->length();
    double mean_bw = options.mean_bandwidth;
    if (mean_bw <= 0.0) {
      std::vector<double> times, values;
      for (int i = 0; i < dataset.subject_count(); ++i) {
        const SparseSample& s = dataset.sample(i, j);
        for (int k = 0; k < s.n(); ++k) {
          times.push_back(s.times(k));
          values.push_back(s.values(k));
        }
      }
      mean_bw = select_bandwidth_gcv(std::move(times), std::move(values),
                                     default_bandwidth_grid(span));
    }
    model.mean_bandwidths.push_back(mean_bw);
    model.means.push_back(estimate_mean(dataset, j, model.grids[j], mean_bw));
    model.surface_bandwidths.push_back(options.surface_bandwidth > 0.0
                                           ? options.surface_bandwidth
                                           : options.surface_bandwidth_fraction * span);
  }

  for (int j = 0; j < nproc; ++j)
    for (int jp = j; jp < nproc; ++jp)
      model.covariances.set(j, jp,
                            estimate_cross_covariance(dataset, j, jp, model.means[j],
                                                      model.means[jp],
                                                      model.surface_bandwidths[j],
                                                      model.surface_bandwidths[jp]));

  for (int j = 0; j < nproc; ++j) {
    model.noise_vars.push_back(estimate_noise_variance(dataset, j, model.means[j],
                                                       model.covariances.get(j, j),
                                                       model.surface_bandwidths[j],
                                                       options.noise_central_fraction));
    model.norm_weights.push_back(normalization_weight(model.covariances.get(j, j), j));
  }

  if (options.normalize) normalize_model(model);
  return model;
}

}  // namespace fgcca
