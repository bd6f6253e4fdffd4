#ifndef FGCCA_COVARIANCE_HPP
#define FGCCA_COVARIANCE_HPP

#include <string>
#include <vector>

#include "fgcca/dataset.hpp"
#include "fgcca/grid.hpp"

namespace fgcca {

// J x J table of covariance operators. Only the upper triangle is set
// explicitly; the lower triangle always holds the exact transpose, and
// diagonal entries are symmetrized on the way in.
class CovarianceSet {
 public:
  CovarianceSet() = default;
  explicit CovarianceSet(int process_count);

  int process_count() const { return size_; }
  void resize(int process_count);

  void set(int j, int jp, GridOperator op);
  const GridOperator& get(int j, int jp) const;
  bool has(int j, int jp) const;

 private:
  int index(int j, int jp) const;
  int size_ = 0;
  std::vector<GridOperator> table_;
  std::vector<bool> present_;
};

// Everything estimated from one dataset: grids, means, covariance surfaces,
// noise variances and normalization weights. Kernels are on the normalized
// scale when `normalized` is set; means and noise variances always stay on
// the original data scale.
struct ProcessModel {
  std::vector<std::string> process_ids;
  std::vector<TimeGridPtr> grids;
  std::vector<GridFunction> means;
  CovarianceSet covariances;
  std::vector<double> noise_vars;
  std::vector<double> norm_weights;
  std::vector<double> mean_bandwidths;
  std::vector<double> surface_bandwidths;
  bool normalized = false;

  int process_count() const { return static_cast<int>(grids.size()); }
};

struct EstimationOptions {
  int grid_size = 51;
  TimeGridPtr shared_grid;                   // overrides per-process uniform grids
  double mean_bandwidth = 0.0;               // 0 picks by generalized cross-validation
  double surface_bandwidth = 0.0;            // 0 falls back to the fraction below
  double surface_bandwidth_fraction = 0.10;  // of the process interval length
  double noise_central_fraction = 0.5;
  bool normalize = true;
};

GridFunction estimate_mean(const LongitudinalDataset& dataset, int process, TimeGridPtr grid,
                           double bandwidth);

// Smooths centered raw products (U_jk - mean_j(t_jk))(U_j'l - mean_j'(t_j'l))
// over all co-observing subjects onto grid_j x grid_j'. For j = j' the
// same-time pairs k = l are left out (they carry the measurement noise) and
// the result is symmetrized.
GridOperator estimate_cross_covariance(const LongitudinalDataset& dataset, int j, int jp,
                                       const GridFunction& mean_j, const GridFunction& mean_jp,
                                       double bandwidth_j, double bandwidth_jp);

// Yao-style noise recovery: smooth the squared centered observations along
// the diagonal, subtract the covariance diagonal, clamp at zero, and average
// over the central part of the interval.
double estimate_noise_variance(const LongitudinalDataset& dataset, int process,
                               const GridFunction& mean, const GridOperator& self_covariance,
                               double bandwidth, double central_fraction = 0.5);

// w_j = (integral of the variance diagonal)^(-1/2).
double normalization_weight(const GridOperator& self_covariance, int process);

// Scales every kernel by w_j w_j'. Idempotence guard: throws when the model
// is already normalized.
void normalize_model(ProcessModel& model);

ProcessModel estimate_model(const LongitudinalDataset& dataset,
                            const EstimationOptions& options = {});

}  // namespace fgcca

#endif
