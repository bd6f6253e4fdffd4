#ifndef FGCCA_SERIALIZATION_HPP
#define FGCCA_SERIALIZATION_HPP

#include <string>
#include <utility>
#include <vector>

#include "fgcca/components.hpp"
#include "fgcca/covariance.hpp"
#include "fgcca/simulation.hpp"

namespace fgcca {

// Stamped into every JSON artifact; loaders refuse other versions.
inline constexpr int kFormatVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

// FNV-1a over the raw bytes of a file, 16 hex digits.
std::string file_hash(const std::string& path);

// model.json: grids, means, covariance kernels, noise, scaling.
void save_model(const ProcessModel& model, const std::string& path);
ProcessModel load_model(const std::string& path);

// fit.json: canonical functions, traces, convergence flags, deflation
// scalars, the effective config, and the per-order response directions when
// the fit used a response block (empty otherwise).
void save_fit(const FgccaFit& fit, const std::vector<Eigen::VectorXd>& response_directions,
              const std::string& path);

struct LoadedFit {
  FgccaFit fit;
  std::vector<Eigen::VectorXd> response_directions;
};
LoadedFit load_fit(const std::string& path);

// Config parsing with full defaulting. Unknown keys are rejected so typos
// fail loudly; the result is validated before it is returned.
FgccaConfig parse_fit_config(const std::string& json_text, int process_count);
EstimationOptions parse_estimation_options(const std::string& json_text);
SimSpec parse_sim_spec(const std::string& json_text);

// Effective settings echoed back as canonical JSON text. Parsing the echo
// reproduces the same settings.
std::string effective_fit_config(const FgccaConfig& config);
std::string effective_estimation_options(const EstimationOptions& options);
std::string effective_sim_spec(const SimSpec& spec);

// One manifest per output directory. config_json holds the canonical
// effective-config text for the run; timings are deliberately not recorded
// so reruns stay byte-identical.
struct RunManifest {
  std::string command;
  std::string config_json;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, hash
  unsigned long long seed = 0;
};
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace fgcca

#endif
