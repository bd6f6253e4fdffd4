#ifndef FGCCA_SOLVER_HPP
#define FGCCA_SOLVER_HPP

#include <string>
#include <vector>

#include "fgcca/covariance.hpp"
#include "fgcca/grid.hpp"

namespace fgcca {

// Link functions applied to the pairwise inner products. `abs_value` is not
// differentiable at 0; its derivative returns the subgradient 0 there.
enum class Scheme { identity, square, abs_value };

Scheme scheme_from_string(const std::string& name);
std::string scheme_to_string(Scheme scheme);

double scheme_g(Scheme scheme, double x);
double scheme_gprime(Scheme scheme, double x);

enum class DeflationMode { orthogonal, uncorrelated };
enum class InitMode { deterministic_svd, random };

DeflationMode deflation_from_string(const std::string& name);
std::string deflation_to_string(DeflationMode mode);
InitMode init_from_string(const std::string& name);
std::string init_to_string(InitMode mode);

struct FgccaConfig {
  Eigen::MatrixXd connection;  // symmetric, zero diagonal, nonnegative
  Eigen::VectorXd tau;         // one entry per process, in (0, 1]
  Scheme scheme = Scheme::identity;
  double epsilon = 1e-8;
  int max_iters = 1000;
  int n_components = 1;
  DeflationMode deflation = DeflationMode::orthogonal;
  InitMode init = InitMode::deterministic_svd;
  unsigned long long seed = 0;
  bool sign_convention = true;

  // require_connected insists every process carries a positive connection
  // weight; the response extension relaxes that for processes tied to the
  // fit only through the response block.
  void validate(int process_count, bool require_connected = true) const;

  // Fully connected design with unit weights and tau = 1 everywhere.
  static FgccaConfig defaults(int process_count);
};

struct SolverState {
  std::vector<GridFunction> functions;
  std::vector<double> criterion_trace;  // value at init, then one entry per sweep
  int iterations = 0;
  bool converged = false;
};

// Sum of c_jj' g(<f_j, K_jj' f_j'>) over ordered pairs j != j'; the symmetric
// design counts every unordered pair twice.
double criterion(const std::vector<GridFunction>& functions, const CovarianceSet& covariances,
                 const Eigen::MatrixXd& connection, Scheme scheme);

// 2 sum_{j' != j} c_jj' g'(<f_j, K_jj' f_j'>) K_jj' f_j'.
GridFunction gradient_j(int j, const std::vector<GridFunction>& functions,
                        const CovarianceSet& covariances, const Eigen::MatrixXd& connection,
                        Scheme scheme);

// v -> tau_j v + (1 - tau_j) K_jj v.
Metric build_metric(int j, const FgccaConfig& config, const CovarianceSet& covariances);

// M^{-1} grad, scaled so <x, M x> = 1. Throws stationary-point on a zero
// gradient; the sweep catches that and keeps the previous function.
GridFunction update_j(const GridFunction& gradient, const Metric& metric);

// Flips f so its largest-magnitude value is positive.
void apply_sign_convention(GridFunction& f);

// Block ascent over processes (Algorithm: sweep j = 1..J with the freshest
// functions), stopping when the criterion gain per sweep drops below epsilon.
// The trace it records is monotone up to 1e-10 slack. When sign_convention is
// set the returned functions are flipped afterwards; for odd schemes the
// criterion of the flipped functions can differ from the last trace entry.
SolverState fit_single(const CovarianceSet& covariances, const FgccaConfig& config);
SolverState fit_single(const CovarianceSet& covariances, const FgccaConfig& config,
                       std::vector<GridFunction> init);

// Default starting point: per process, the top eigenfunction of the summed
// connected cross-covariance maps (or seeded Gaussian noise), M-normalized.
std::vector<GridFunction> initial_functions(const CovarianceSet& covariances,
                                            const FgccaConfig& config);

}  // namespace fgcca

#endif
