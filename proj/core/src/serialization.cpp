#include "fgcca/serialization.hpp"

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fgcca {

namespace {

using ordered_json = nlohmann::ordered_json;

uint64_t fnv1a(const std::string& bytes) {
  uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string hex16(uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write '" + path + "'");
  out << content;
  if (!out) fail(ErrorCode::io_error, "cannot write '" + path + "'");
}

ordered_json parse_json(const std::string& text, const std::string& what) {
  try {
    return ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    fail(ErrorCode::parse_error, what + ": " + e.what());
  }
}

ordered_json load_json(const std::string& path) {
  return parse_json(read_file(path), path);
}

void reject_unknown_keys(const ordered_json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key()))
      fail(ErrorCode::schema_error, where + ": unknown key '" + item.key() + "'");
  }
}

void check_artifact_header(const ordered_json& j, const std::string& type,
                           const std::string& path) {
  if (!j.is_object()) fail(ErrorCode::schema_error, path + ": expected a JSON object");
  if (!j.contains("format_version") || !j["format_version"].is_number_integer())
    fail(ErrorCode::schema_error, path + ": missing format_version");
  const int version = j["format_version"].get<int>();
  if (version != kFormatVersion)
    fail(ErrorCode::schema_error,
         path + ": format_version " + std::to_string(version) + " is not supported");
  if (!j.contains("type") || j["type"] != type)
    fail(ErrorCode::schema_error, path + ": expected a '" + type + "' file");
}

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json out = ordered_json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

ordered_json matrix_json(const Eigen::MatrixXd& m) {
  ordered_json out = ordered_json::array();
  for (int r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Eigen::VectorXd vector_from_json(const ordered_json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorCode::schema_error, where + ": expected an array of numbers");
  Eigen::VectorXd out(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorCode::schema_error, where + ": expected an array of numbers");
    out(static_cast<int>(i)) = j[i].get<double>();
  }
  return out;
}

Eigen::MatrixXd matrix_from_json(const ordered_json& j, const std::string& where) {
  if (!j.is_array() || j.empty())
    fail(ErrorCode::schema_error, where + ": expected a non-empty array of rows");
  const size_t cols = j[0].is_array() ? j[0].size() : 0;
  Eigen::MatrixXd out(j.size(), cols);
  for (size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      fail(ErrorCode::schema_error, where + ": rows must be arrays of equal length");
    for (size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        fail(ErrorCode::schema_error, where + ": expected numeric entries");
      out(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
    }
  }
  return out;
}

double number_field(const ordered_json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_number())
    fail(ErrorCode::schema_error, where + ": missing numeric field '" + key + "'");
  return j[key].get<double>();
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string file_hash(const std::string& path) { return hex16(fnv1a(read_file(path))); }

void save_model(const ProcessModel& model, const std::string& path) {
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["type"] = "model";
  doc["library_version"] = kLibraryVersion;
  doc["normalized"] = model.normalized;

  ordered_json processes = ordered_json::array();
  for (int j = 0; j < model.process_count(); ++j) {
    ordered_json p;
    p["id"] = model.process_ids[j];
    p["grid"] = vector_json(model.grids[j]->points());
    p["mean"] = vector_json(model.means[j].values);
    p["noise_var"] = model.noise_vars[j];
    p["norm_weight"] = model.norm_weights[j];
    p["mean_bandwidth"] = model.mean_bandwidths[j];
    p["surface_bandwidth"] = model.surface_bandwidths[j];
    processes.push_back(std::move(p));
  }
  doc["processes"] = std::move(processes);

  ordered_json covariances = ordered_json::array();
  for (int j = 0; j < model.process_count(); ++j) {
    for (int jp = j; jp < model.process_count(); ++jp) {
      if (!model.covariances.has(j, jp)) continue;
      ordered_json entry;
      entry["row"] = j;
      entry["col"] = jp;
      entry["kernel"] = matrix_json(model.covariances.get(j, jp).kernel);
      covariances.push_back(std::move(entry));
    }
  }
  doc["covariances"] = std::move(covariances);

  write_file(path, dump(doc));
}

ProcessModel load_model(const std::string& path) {
  const ordered_json doc = load_json(path);
  check_artifact_header(doc, "model", path);
  if (!doc.contains("processes") || !doc["processes"].is_array() || doc["processes"].empty())
    fail(ErrorCode::schema_error, path + ": missing processes");

  ProcessModel model;
  model.normalized = doc.value("normalized", false);
  for (const ordered_json& p : doc["processes"]) {
    const std::string where = path + ": process " + std::to_string(model.process_count() + 1);
    if (!p.contains("id") || !p["id"].is_string())
      fail(ErrorCode::schema_error, where + ": missing id");
    model.process_ids.push_back(p["id"].get<std::string>());
    Eigen::VectorXd points = vector_from_json(p.value("grid", ordered_json::array()), where);
    if (points.size() < 2) fail(ErrorCode::schema_error, where + ": grid needs at least 2 points");
    TimeGridPtr grid;
    try {
      grid = std::make_shared<TimeGrid>(std::move(points));
    } catch (const FgccaError& e) {
      fail(ErrorCode::schema_error, where + ": " + e.detail());
    }
    Eigen::VectorXd mean = vector_from_json(p.value("mean", ordered_json::array()), where);
    if (mean.size() != grid->size())
      fail(ErrorCode::schema_error, where + ": mean length does not match the grid");
    model.means.emplace_back(grid, std::move(mean));
    model.grids.push_back(std::move(grid));
    model.noise_vars.push_back(number_field(p, "noise_var", where));
    model.norm_weights.push_back(number_field(p, "norm_weight", where));
    model.mean_bandwidths.push_back(number_field(p, "mean_bandwidth", where));
    model.surface_bandwidths.push_back(number_field(p, "surface_bandwidth", where));
  }

  const int n = model.process_count();
  model.covariances.resize(n);
  if (!doc.contains("covariances") || !doc["covariances"].is_array())
    fail(ErrorCode::schema_error, path + ": missing covariances");
  for (const ordered_json& entry : doc["covariances"]) {
    const int j = entry.contains("row") && entry["row"].is_number_integer()
                      ? entry["row"].get<int>()
                      : -1;
    const int jp = entry.contains("col") && entry["col"].is_number_integer()
                       ? entry["col"].get<int>()
                       : -1;
    if (j < 0 || jp < j || jp >= n)
      fail(ErrorCode::schema_error, path + ": covariance entry has invalid row/col");
    const std::string where =
        path + ": covariance (" + std::to_string(j) + ", " + std::to_string(jp) + ")";
    Eigen::MatrixXd kernel = matrix_from_json(entry.value("kernel", ordered_json::array()), where);
    if (kernel.rows() != model.grids[j]->size() || kernel.cols() != model.grids[jp]->size())
      fail(ErrorCode::schema_error, where + ": kernel shape does not match the grids");
    model.covariances.set(j, jp,
                          GridOperator(model.grids[j], model.grids[jp], std::move(kernel)));
  }
  return model;
}

void save_fit(const FgccaFit& fit, const std::vector<Eigen::VectorXd>& response_directions,
              const std::string& path) {
  if (!response_directions.empty() &&
      static_cast<int>(response_directions.size()) != fit.orders())
    fail(ErrorCode::dimension_mismatch, "expected one response direction per order");
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["type"] = "fit";
  doc["library_version"] = kLibraryVersion;
  doc["config"] = parse_json(effective_fit_config(fit.config), "config");

  ordered_json grids = ordered_json::array();
  for (int j = 0; j < fit.process_count(); ++j)
    grids.push_back(vector_json(fit.functions.front()[j].grid->points()));
  doc["grids"] = std::move(grids);

  ordered_json orders = ordered_json::array();
  for (int m = 0; m < fit.orders(); ++m) {
    ordered_json entry;
    ordered_json functions = ordered_json::array();
    for (const GridFunction& f : fit.functions[m]) functions.push_back(vector_json(f.values));
    entry["functions"] = std::move(functions);
    entry["trace"] = fit.traces[m];
    entry["converged"] = static_cast<bool>(fit.converged[m]);
    if (m < static_cast<int>(fit.deflation_d.size()))
      entry["deflation_d"] = fit.deflation_d[m];
    if (!response_directions.empty())
      entry["response_direction"] = vector_json(response_directions[m]);
    orders.push_back(std::move(entry));
  }
  doc["orders"] = std::move(orders);

  write_file(path, dump(doc));
}

LoadedFit load_fit(const std::string& path) {
  const ordered_json doc = load_json(path);
  check_artifact_header(doc, "fit", path);
  if (!doc.contains("grids") || !doc["grids"].is_array() || doc["grids"].empty())
    fail(ErrorCode::schema_error, path + ": missing grids");

  std::vector<TimeGridPtr> grids;
  for (const ordered_json& g : doc["grids"]) {
    Eigen::VectorXd points = vector_from_json(g, path + ": grids");
    try {
      grids.push_back(std::make_shared<TimeGrid>(std::move(points)));
    } catch (const FgccaError& e) {
      fail(ErrorCode::schema_error, path + ": " + e.detail());
    }
  }

  LoadedFit out;
  out.fit.config = parse_fit_config(doc.value("config", ordered_json::object()).dump(),
                                    static_cast<int>(grids.size()));
  if (!doc.contains("orders") || !doc["orders"].is_array() || doc["orders"].empty())
    fail(ErrorCode::schema_error, path + ": missing orders");
  for (const ordered_json& entry : doc["orders"]) {
    const std::string where = path + ": order " + std::to_string(out.fit.orders() + 1);
    if (!entry.contains("functions") || !entry["functions"].is_array() ||
        entry["functions"].size() != grids.size())
      fail(ErrorCode::schema_error, where + ": expected one function per process");
    std::vector<GridFunction> functions;
    for (size_t j = 0; j < grids.size(); ++j) {
      Eigen::VectorXd values = vector_from_json(entry["functions"][j], where);
      if (values.size() != grids[j]->size())
        fail(ErrorCode::schema_error, where + ": function length does not match the grid");
      functions.emplace_back(grids[j], std::move(values));
    }
    out.fit.functions.push_back(std::move(functions));
    std::vector<double> trace;
    for (const ordered_json& v : entry.value("trace", ordered_json::array())) {
      if (!v.is_number()) fail(ErrorCode::schema_error, where + ": trace must be numeric");
      trace.push_back(v.get<double>());
    }
    out.fit.traces.push_back(std::move(trace));
    out.fit.converged.push_back(entry.value("converged", false));
    if (entry.contains("deflation_d")) {
      std::vector<double> d;
      for (const ordered_json& v : entry["deflation_d"]) {
        if (!v.is_number()) fail(ErrorCode::schema_error, where + ": deflation_d must be numeric");
        d.push_back(v.get<double>());
      }
      out.fit.deflation_d.push_back(std::move(d));
    }
    if (entry.contains("response_direction"))
      out.response_directions.push_back(vector_from_json(entry["response_direction"], where));
  }
  if (!out.response_directions.empty() &&
      static_cast<int>(out.response_directions.size()) != out.fit.orders())
    fail(ErrorCode::schema_error, path + ": response directions must cover every order");
  return out;
}

FgccaConfig parse_fit_config(const std::string& json_text, int process_count) {
  const ordered_json j = parse_json(json_text, "fit config");
  if (!j.is_object()) fail(ErrorCode::schema_error, "fit config: expected a JSON object");
  reject_unknown_keys(j,
                      {"connection", "tau", "scheme", "epsilon", "max_iters", "n_components",
                       "deflation", "init", "seed", "sign_convention"},
                      "fit config");

  FgccaConfig config = FgccaConfig::defaults(process_count);
  if (j.contains("connection"))
    config.connection = matrix_from_json(j["connection"], "fit config: connection");
  if (j.contains("tau")) {
    if (j["tau"].is_number())
      config.tau = Eigen::VectorXd::Constant(process_count, j["tau"].get<double>());
    else
      config.tau = vector_from_json(j["tau"], "fit config: tau");
  }
  if (j.contains("scheme")) {
    if (!j["scheme"].is_string()) fail(ErrorCode::schema_error, "fit config: scheme must be a string");
    config.scheme = scheme_from_string(j["scheme"].get<std::string>());
  }
  if (j.contains("epsilon")) config.epsilon = number_field(j, "epsilon", "fit config");
  if (j.contains("max_iters"))
    config.max_iters = static_cast<int>(number_field(j, "max_iters", "fit config"));
  if (j.contains("n_components"))
    config.n_components = static_cast<int>(number_field(j, "n_components", "fit config"));
  if (j.contains("deflation")) {
    if (!j["deflation"].is_string())
      fail(ErrorCode::schema_error, "fit config: deflation must be a string");
    config.deflation = deflation_from_string(j["deflation"].get<std::string>());
  }
  if (j.contains("init")) {
    if (!j["init"].is_string()) fail(ErrorCode::schema_error, "fit config: init must be a string");
    config.init = init_from_string(j["init"].get<std::string>());
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      fail(ErrorCode::schema_error, "fit config: seed must be an integer");
    config.seed = j["seed"].get<unsigned long long>();
  }
  if (j.contains("sign_convention")) {
    if (!j["sign_convention"].is_boolean())
      fail(ErrorCode::schema_error, "fit config: sign_convention must be a boolean");
    config.sign_convention = j["sign_convention"].get<bool>();
  }
  config.validate(process_count);
  return config;
}

EstimationOptions parse_estimation_options(const std::string& json_text) {
  const ordered_json j = parse_json(json_text, "estimation options");
  if (!j.is_object()) fail(ErrorCode::schema_error, "estimation options: expected a JSON object");
  reject_unknown_keys(j,
                      {"grid_size", "mean_bandwidth", "surface_bandwidth",
                       "surface_bandwidth_fraction", "noise_central_fraction", "normalize"},
                      "estimation options");

  EstimationOptions options;
  if (j.contains("grid_size"))
    options.grid_size = static_cast<int>(number_field(j, "grid_size", "estimation options"));
  if (j.contains("mean_bandwidth"))
    options.mean_bandwidth = number_field(j, "mean_bandwidth", "estimation options");
  if (j.contains("surface_bandwidth"))
    options.surface_bandwidth = number_field(j, "surface_bandwidth", "estimation options");
  if (j.contains("surface_bandwidth_fraction"))
    options.surface_bandwidth_fraction =
        number_field(j, "surface_bandwidth_fraction", "estimation options");
  if (j.contains("noise_central_fraction"))
    options.noise_central_fraction =
        number_field(j, "noise_central_fraction", "estimation options");
  if (j.contains("normalize")) {
    if (!j["normalize"].is_boolean())
      fail(ErrorCode::schema_error, "estimation options: normalize must be a boolean");
    options.normalize = j["normalize"].get<bool>();
  }
  if (options.grid_size < 2)
    fail(ErrorCode::invalid_config, "estimation options: grid_size must be at least 2");
  return options;
}

SimSpec parse_sim_spec(const std::string& json_text) {
  const ordered_json j = parse_json(json_text, "simulation spec");
  if (!j.is_object()) fail(ErrorCode::schema_error, "simulation spec: expected a JSON object");
  reject_unknown_keys(j,
                      {"processes", "basis_size", "score_cov", "subjects", "grid_size",
                       "sparsity", "sigma2", "seed"},
                      "simulation spec");

  SimSpec spec;
  if (j.contains("processes"))
    spec.processes = static_cast<int>(number_field(j, "processes", "simulation spec"));
  if (j.contains("basis_size"))
    spec.basis_size = static_cast<int>(number_field(j, "basis_size", "simulation spec"));
  if (j.contains("subjects"))
    spec.subjects = static_cast<int>(number_field(j, "subjects", "simulation spec"));
  if (j.contains("grid_size"))
    spec.grid_size = static_cast<int>(number_field(j, "grid_size", "simulation spec"));
  if (j.contains("sparsity")) {
    if (!j["sparsity"].is_string())
      fail(ErrorCode::schema_error, "simulation spec: sparsity must be a string");
    spec.sparsity = sparsity_from_string(j["sparsity"].get<std::string>());
  }
  if (j.contains("sigma2")) spec.sigma2 = number_field(j, "sigma2", "simulation spec");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      fail(ErrorCode::schema_error, "simulation spec: seed must be an integer");
    spec.seed = j["seed"].get<unsigned long long>();
  }
  if (j.contains("score_cov") && j["score_cov"] != "default")
    spec.score_cov = matrix_from_json(j["score_cov"], "simulation spec: score_cov");
  spec.validate();
  return spec;
}

std::string effective_fit_config(const FgccaConfig& config) {
  ordered_json j;
  j["connection"] = matrix_json(config.connection);
  j["tau"] = vector_json(config.tau);
  j["scheme"] = scheme_to_string(config.scheme);
  j["epsilon"] = config.epsilon;
  j["max_iters"] = config.max_iters;
  j["n_components"] = config.n_components;
  j["deflation"] = deflation_to_string(config.deflation);
  j["init"] = init_to_string(config.init);
  j["seed"] = config.seed;
  j["sign_convention"] = config.sign_convention;
  return dump(j);
}

std::string effective_estimation_options(const EstimationOptions& options) {
  ordered_json j;
  j["grid_size"] = options.grid_size;
  j["mean_bandwidth"] = options.mean_bandwidth;
  j["surface_bandwidth"] = options.surface_bandwidth;
  j["surface_bandwidth_fraction"] = options.surface_bandwidth_fraction;
  j["noise_central_fraction"] = options.noise_central_fraction;
  j["normalize"] = options.normalize;
  return dump(j);
}

std::string effective_sim_spec(const SimSpec& spec) {
  ordered_json j;
  j["processes"] = spec.processes;
  j["basis_size"] = spec.basis_size;
  if (spec.score_cov.size() == 0)
    j["score_cov"] = "default";
  else
    j["score_cov"] = matrix_json(spec.score_cov);
  j["subjects"] = spec.subjects;
  j["grid_size"] = spec.grid_size;
  j["sparsity"] = sparsity_to_string(spec.sparsity);
  j["sigma2"] = spec.sigma2;
  j["seed"] = spec.seed;
  return dump(j);
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  ordered_json doc;
  doc["format_version"] = kFormatVersion;
  doc["type"] = "manifest";
  doc["library_version"] = kLibraryVersion;
  doc["command"] = manifest.command;
  doc["seed"] = manifest.seed;
  ordered_json inputs = ordered_json::array();
  for (const auto& [input_path, hash] : manifest.inputs) {
    ordered_json entry;
    entry["path"] = input_path;
    entry["hash"] = hash;
    inputs.push_back(std::move(entry));
  }
  doc["inputs"] = std::move(inputs);
  doc["config"] = manifest.config_json.empty()
                      ? ordered_json(nullptr)
                      : parse_json(manifest.config_json, "manifest config");
  doc["timings"] = nullptr;
  write_file(path, dump(doc));
}

}  // namespace fgcca
