#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fgcca/components.hpp"
#include "fgcca/covariance.hpp"
#include "fgcca/dataset.hpp"
#include "fgcca/deflation.hpp"
#include "fgcca/response.hpp"
#include "fgcca/serialization.hpp"
#include "fgcca/simulation.hpp"

namespace {

using fgcca::ErrorCode;
using fgcca::fail;
using ordered_json = nlohmann::ordered_json;

// Validation problems exit 2, numerical trouble exits 3.
int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_grid:
    case ErrorCode::incompatible_grid:
    case ErrorCode::schema_error:
    case ErrorCode::parse_error:
    case ErrorCode::range_error:
    case ErrorCode::duplicate_observation:
    case ErrorCode::insufficient_data:
    case ErrorCode::no_overlap:
    case ErrorCode::invalid_config:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::extrapolation:
    case ErrorCode::reconstruction_basis:
    case ErrorCode::io_error:
      return 2;
    default:
      return 3;
  }
}

std::string fmt(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
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

std::string prepare_out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) fail(ErrorCode::io_error, "cannot create output directory '" + out + "'");
  return (std::filesystem::path(out) / "").string();
}

void write_log(const std::string& out_dir, const std::vector<std::string>& lines) {
  std::string text;
  for (const std::string& line : lines) text += line + "\n";
  write_file(out_dir + "run.log", text);
}

ordered_json parse_object(const std::string& text, const std::string& what) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    fail(ErrorCode::parse_error, what + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::schema_error, what + ": expected a JSON object");
  return j;
}

struct FitOptions {
  std::string data_path;
  std::string config_path;
  std::string schema_path;
  std::string response_path;
  std::string out = "fgcca_out";
  long long seed = -1;  // negative keeps the config's seed
};

int run_fit(const FitOptions& opt) {
  ordered_json config_doc = ordered_json::object();
  if (!opt.config_path.empty())
    config_doc = parse_object(read_file(opt.config_path), opt.config_path);
  for (const auto& item : config_doc.items()) {
    if (item.key() != "estimation" && item.key() != "fit" && item.key() != "response")
      fail(ErrorCode::schema_error, "config: unknown section '" + item.key() + "'");
  }
  if (config_doc.contains("response") && opt.response_path.empty())
    fail(ErrorCode::invalid_config,
         "config has a response section but no response file was given");

  const fgcca::EstimationOptions est_options = fgcca::parse_estimation_options(
      config_doc.value("estimation", ordered_json::object()).dump());
  double response_bandwidth = 0.0;
  bool response_standardize = false;
  if (config_doc.contains("response")) {
    const ordered_json& r = config_doc["response"];
    for (const auto& item : r.items()) {
      if (item.key() != "bandwidth" && item.key() != "standardize")
        fail(ErrorCode::schema_error, "config: unknown response key '" + item.key() + "'");
    }
    if (r.contains("bandwidth")) response_bandwidth = r["bandwidth"].get<double>();
    if (r.contains("standardize")) response_standardize = r["standardize"].get<bool>();
  }

  fgcca::DatasetSchema schema;
  if (!opt.schema_path.empty()) schema = fgcca::load_schema(opt.schema_path);
  const fgcca::LongitudinalDataset dataset = fgcca::load_csv(opt.data_path, schema);

  fgcca::FgccaConfig config = fgcca::parse_fit_config(
      config_doc.value("fit", ordered_json::object()).dump(), dataset.process_count());
  if (opt.seed >= 0) config.seed = static_cast<unsigned long long>(opt.seed);

  const fgcca::ProcessModel model = fgcca::estimate_model(dataset, est_options);

  std::vector<std::string> log;
  fgcca::FgccaFit fit;
  std::vector<Eigen::VectorXd> response_directions;
  if (!opt.response_path.empty()) {
    const fgcca::RawResponse raw = fgcca::load_response_csv(opt.response_path);
    const fgcca::ResponseBlock block = fgcca::build_response_block(
        dataset, model, raw, response_bandwidth, response_standardize);
    for (const std::string& w : block.warnings) log.push_back("warning: " + w);
    fgcca::ResponseFit rfit =
        fgcca::fit_response_higher_order(model.covariances, block, config);
    fit = std::move(rfit.fit);
    response_directions = std::move(rfit.a);
  } else {
    fit = fgcca::fit_higher_order(model, config);
  }
  for (int m = 0; m < fit.orders(); ++m) {
    if (!fit.converged[m])
      log.push_back("warning: order " + std::to_string(m + 1) +
                    " stopped at the iteration cap before converging");
  }

  const fgcca::ScoreModel score_model = fgcca::build_score_model(model, fit);
  if (score_model.psd_adjusted)
    log.push_back("warning: the score covariance needed an eigenvalue clamp");

  std::vector<Eigen::VectorXd> scores;
  scores.reserve(dataset.subject_count());
  for (int i = 0; i < dataset.subject_count(); ++i)
    scores.push_back(fgcca::blup_scores(fgcca::subject_observations(dataset, i), score_model));
  const fgcca::ComponentSet components = fgcca::decorrelate(scores, score_model);
  for (const std::string& w : components.warnings) log.push_back("warning: " + w);

  const std::string out_dir = prepare_out_dir(opt.out);
  fgcca::save_model(model, out_dir + "model.json");
  fgcca::save_fit(fit, response_directions, out_dir + "fit.json");

  std::string components_csv = "subject_id,process_id,order,xi,y\n";
  for (int i = 0; i < dataset.subject_count(); ++i)
    for (int j = 0; j < fit.process_count(); ++j)
      for (int m = 0; m < fit.orders(); ++m)
        components_csv += dataset.subject(i) + "," + model.process_ids[j] + "," +
                          std::to_string(m + 1) + "," + fmt(components.xi[j](i, m)) + "," +
                          fmt(components.y[j](i, m)) + "\n";
  write_file(out_dir + "components.csv", components_csv);

  std::string trace_csv = "order,sweep,criterion\n";
  for (int m = 0; m < fit.orders(); ++m)
    for (size_t s = 0; s < fit.traces[m].size(); ++s)
      trace_csv += std::to_string(m + 1) + "," + std::to_string(s) + "," +
                   fmt(fit.traces[m][s]) + "\n";
  write_file(out_dir + "trace.csv", trace_csv);

  ordered_json effective;
  effective["estimation"] =
      ordered_json::parse(fgcca::effective_estimation_options(est_options));
  effective["fit"] = ordered_json::parse(fgcca::effective_fit_config(config));
  if (opt.response_path.empty())
    effective["response"] = nullptr;
  else
    effective["response"] = {{"bandwidth", response_bandwidth},
                             {"standardize", response_standardize}};

  fgcca::RunManifest manifest;
  manifest.command = "fit";
  manifest.config_json = effective.dump(2) + "\n";
  manifest.seed = config.seed;
  manifest.inputs.emplace_back(opt.data_path, fgcca::file_hash(opt.data_path));
  if (!opt.schema_path.empty())
    manifest.inputs.emplace_back(opt.schema_path, fgcca::file_hash(opt.schema_path));
  if (!opt.config_path.empty())
    manifest.inputs.emplace_back(opt.config_path, fgcca::file_hash(opt.config_path));
  if (!opt.response_path.empty())
    manifest.inputs.emplace_back(opt.response_path, fgcca::file_hash(opt.response_path));
  fgcca::write_manifest(manifest, out_dir + "manifest.json");
  write_log(out_dir, log);
  return 0;
}

struct SimulateOptions {
  std::string spec_path;
  std::string out = "fgcca_out";
  int sim = 1;
  int replicates = 20;
  int threads = 1;
  long long seed = -1;
};

int run_simulate(const SimulateOptions& opt) {
  fgcca::SimSpec spec = fgcca::parse_sim_spec(read_file(opt.spec_path));
  if (opt.seed >= 0) spec.seed = static_cast<unsigned long long>(opt.seed);
  if (opt.replicates < 1) fail(ErrorCode::invalid_config, "replicates must be at least 1");
  if (opt.threads < 1) fail(ErrorCode::invalid_config, "threads must be at least 1");

  fgcca::BenchReport report;
  switch (opt.sim) {
    case 1: report = fgcca::run_sim1(spec, opt.replicates, opt.threads); break;
    case 2: report = fgcca::run_sim2(spec, opt.replicates, opt.threads); break;
    case 3: report = fgcca::run_sim3(spec, opt.replicates, opt.threads); break;
    default: fail(ErrorCode::invalid_config, "sim must be 1, 2 or 3");
  }

  const std::string out_dir = prepare_out_dir(opt.out);
  const std::string stem = fgcca::bench_file_stem(report);
  fgcca::write_bench_csv(report, out_dir + stem + ".csv");
  fgcca::write_bench_summary(report, out_dir + stem + ".json");

  ordered_json effective;
  effective["sim"] = opt.sim;
  effective["replicates"] = opt.replicates;
  effective["spec"] = ordered_json::parse(fgcca::effective_sim_spec(spec));

  fgcca::RunManifest manifest;
  manifest.command = "simulate";
  manifest.config_json = effective.dump(2) + "\n";
  manifest.seed = spec.seed;
  manifest.inputs.emplace_back(opt.spec_path, fgcca::file_hash(opt.spec_path));
  fgcca::write_manifest(manifest, out_dir + "manifest.json");

  std::vector<std::string> log;
  if (report.failures > 0)
    log.push_back("warning: " + std::to_string(report.failures) + " of " +
                  std::to_string(report.replicates) + " replicates failed");
  write_log(out_dir, log);
  return 0;
}

// Loads a fit directory and rebuilds the scoring model around it.
fgcca::ScoreModel load_score_model(const std::string& model_dir, fgcca::ProcessModel* model_out) {
  const std::filesystem::path dir(model_dir);
  fgcca::ProcessModel model = fgcca::load_model((dir / "model.json").string());
  const fgcca::LoadedFit loaded = fgcca::load_fit((dir / "fit.json").string());
  if (loaded.fit.process_count() != model.process_count())
    fail(ErrorCode::dimension_mismatch,
         "fit and model disagree on the number of processes");
  fgcca::ScoreModel score_model = fgcca::build_score_model(model, loaded.fit);
  if (model_out) *model_out = std::move(model);
  return score_model;
}

// Observations for one subject arranged on the model's process order; a
// subject or process missing from the data contributes an empty sample.
std::vector<fgcca::SparseSample> observations_for(const fgcca::LongitudinalDataset& dataset,
                                                 const std::vector<int>& process_map,
                                                 int subject) {
  std::vector<fgcca::SparseSample> out(process_map.size());
  if (subject < 0) return out;
  for (size_t j = 0; j < process_map.size(); ++j)
    if (process_map[j] >= 0) out[j] = dataset.sample(subject, process_map[j]);
  return out;
}

// model process index -> dataset process index (-1 when absent); unknown
// dataset processes are refused.
std::vector<int> map_processes(const fgcca::ProcessModel& model,
                               const fgcca::LongitudinalDataset& dataset) {
  for (const fgcca::ProcessInfo& info : dataset.processes()) {
    if (std::find(model.process_ids.begin(), model.process_ids.end(), info.id) ==
        model.process_ids.end())
      fail(ErrorCode::invalid_config,
           "process '" + info.id + "' does not appear in the model");
  }
  std::vector<int> map(model.process_ids.size());
  for (size_t j = 0; j < model.process_ids.size(); ++j)
    map[j] = dataset.process_index(model.process_ids[j]);
  return map;
}

struct PredictOptions {
  std::string model_dir;
  std::string partial_path;
  std::string targets_path;
  std::string out = "fgcca_out";
};

struct TargetRow {
  std::string subject;
  int process = 0;  // model process index
  double time = 0.0;
  double actual = 0.0;
  bool has_actual = false;
};

std::vector<TargetRow> load_targets(const std::string& path, const fgcca::ProcessModel& model,
                                    bool* with_actual) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::schema_error, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool has_value = line == "subject_id,process_id,time,value";
  if (!has_value && line != "subject_id,process_id,time")
    fail(ErrorCode::schema_error,
         path + ": header must be subject_id,process_id,time with an optional value column");
  *with_actual = has_value;

  std::vector<TargetRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    const size_t expected = has_value ? 4u : 3u;
    if (fields.size() != expected)
      fail(ErrorCode::parse_error,
           path + ": line " + std::to_string(line_no) + ": expected " +
               std::to_string(expected) + " fields");
    TargetRow row;
    row.subject = fields[0];
    const auto at =
        std::find(model.process_ids.begin(), model.process_ids.end(), fields[1]);
    if (at == model.process_ids.end())
      fail(ErrorCode::invalid_config,
           path + ": line " + std::to_string(line_no) + ": unknown process '" + fields[1] + "'");
    row.process = static_cast<int>(at - model.process_ids.begin());
    try {
      row.time = std::stod(fields[2]);
      if (has_value) {
        row.actual = std::stod(fields[3]);
        row.has_actual = true;
      }
    } catch (const std::exception&) {
      fail(ErrorCode::parse_error,
           path + ": line " + std::to_string(line_no) + ": malformed number");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int run_predict(const PredictOptions& opt) {
  fgcca::ProcessModel model;
  const fgcca::ScoreModel score_model = load_score_model(opt.model_dir, &model);
  const fgcca::LongitudinalDataset partial = fgcca::load_csv(opt.partial_path);
  const std::vector<int> process_map = map_processes(model, partial);

  bool with_actual = false;
  const std::vector<TargetRow> targets =
      load_targets(opt.targets_path, model, &with_actual);

  // Group rows by subject and process so each group costs one conditioning.
  std::map<std::pair<std::string, int>, std::vector<size_t>> groups;
  for (size_t r = 0; r < targets.size(); ++r)
    groups[{targets[r].subject, targets[r].process}].push_back(r);

  std::vector<std::string> log;
  std::vector<double> predicted(targets.size());
  std::string last_warned;
  for (const auto& [key, row_indices] : groups) {
    const int subject = partial.subject_index(key.first);
    if (subject < 0 && key.first != last_warned) {
      log.push_back("warning: subject '" + key.first +
                    "' has no observations; predicting the mean");
      last_warned = key.first;
    }
    Eigen::VectorXd times(row_indices.size());
    for (size_t k = 0; k < row_indices.size(); ++k) times(k) = targets[row_indices[k]].time;
    const Eigen::VectorXd values = fgcca::predict_points(
        observations_for(partial, process_map, subject), score_model, key.second, times);
    for (size_t k = 0; k < row_indices.size(); ++k) predicted[row_indices[k]] = values(k);
  }

  const std::string out_dir = prepare_out_dir(opt.out);
  std::string csv = with_actual ? "subject_id,process_id,time,value,actual,squared_error\n"
                                : "subject_id,process_id,time,value\n";
  for (size_t r = 0; r < targets.size(); ++r) {
    const TargetRow& row = targets[r];
    csv += row.subject + "," + model.process_ids[row.process] + "," + fmt(row.time) + "," +
           fmt(predicted[r]);
    if (with_actual) {
      const double err = predicted[r] - row.actual;
      csv += "," + fmt(row.actual) + "," + fmt(err * err);
    }
    csv += "\n";
  }
  write_file(out_dir + "predictions.csv", csv);

  fgcca::RunManifest manifest;
  manifest.command = "predict";
  manifest.seed = 0;
  manifest.inputs.emplace_back(opt.partial_path, fgcca::file_hash(opt.partial_path));
  manifest.inputs.emplace_back(opt.targets_path, fgcca::file_hash(opt.targets_path));
  fgcca::write_manifest(manifest, out_dir + "manifest.json");
  write_log(out_dir, log);
  return 0;
}

struct ReconstructOptions {
  std::string model_dir;
  std::string data_path;
  std::string subjects;  // comma separated, empty keeps all
  std::string out = "fgcca_out";
};

int run_reconstruct(const ReconstructOptions& opt) {
  fgcca::ProcessModel model;
  const fgcca::ScoreModel score_model = load_score_model(opt.model_dir, &model);
  const fgcca::LongitudinalDataset dataset = fgcca::load_csv(opt.data_path);
  const std::vector<int> process_map = map_processes(model, dataset);

  std::vector<int> subjects;
  if (opt.subjects.empty()) {
    for (int i = 0; i < dataset.subject_count(); ++i) subjects.push_back(i);
  } else {
    std::stringstream ss(opt.subjects);
    std::string id;
    while (std::getline(ss, id, ',')) {
      const int at = dataset.subject_index(id);
      if (at < 0) fail(ErrorCode::invalid_config, "unknown subject '" + id + "'");
      subjects.push_back(at);
    }
  }

  std::string csv = "subject_id,process_id,time,value\n";
  for (int subject : subjects) {
    const Eigen::VectorXd scores = fgcca::blup_scores(
        observations_for(dataset, process_map, subject), score_model);
    const std::vector<fgcca::GridFunction> curves = fgcca::reconstruct(scores, score_model);
    for (size_t j = 0; j < curves.size(); ++j) {
      const Eigen::VectorXd& points = curves[j].grid->points();
      for (int g = 0; g < points.size(); ++g)
        csv += dataset.subject(subject) + "," + model.process_ids[j] + "," + fmt(points(g)) +
               "," + fmt(curves[j].values(g)) + "\n";
    }
  }

  const std::string out_dir = prepare_out_dir(opt.out);
  write_file(out_dir + "reconstructions.csv", csv);

  fgcca::RunManifest manifest;
  manifest.command = "reconstruct";
  manifest.seed = 0;
  manifest.inputs.emplace_back(opt.data_path, fgcca::file_hash(opt.data_path));
  fgcca::write_manifest(manifest, out_dir + "manifest.json");
  write_log(out_dir, {});
  return 0;
}

struct SummarizeOptions {
  std::string data_path;
  std::string schema_path;
  std::string out;  // optional
};

int run_summarize(const SummarizeOptions& opt) {
  fgcca::DatasetSchema schema;
  if (!opt.schema_path.empty()) schema = fgcca::load_schema(opt.schema_path);
  const fgcca::LongitudinalDataset dataset = fgcca::load_csv(opt.data_path, schema);

  std::string csv =
      "process_id,subjects_observed,total_observations,min_count,median_count,max_count,"
      "time_min,time_max\n";
  for (const fgcca::ProcessSummary& s : fgcca::summarize(dataset))
    csv += s.id + "," + std::to_string(s.subjects_observed) + "," +
           std::to_string(s.total_observations) + "," + std::to_string(s.min_count) + "," +
           fmt(s.median_count) + "," + std::to_string(s.max_count) + "," + fmt(s.time_min) +
           "," + fmt(s.time_max) + "\n";
  std::cout << csv;

  if (!opt.out.empty()) {
    const std::string out_dir = prepare_out_dir(opt.out);
    write_file(out_dir + "summary.csv", csv);
    fgcca::RunManifest manifest;
    manifest.command = "summarize";
    manifest.seed = 0;
    manifest.inputs.emplace_back(opt.data_path, fgcca::file_hash(opt.data_path));
    if (!opt.schema_path.empty())
      manifest.inputs.emplace_back(opt.schema_path, fgcca::file_hash(opt.schema_path));
    fgcca::write_manifest(manifest, out_dir + "manifest.json");
    write_log(out_dir, {});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional canonical correlation fits for sparse longitudinal data"};
  app.require_subcommand(1);

  FitOptions fit;
  CLI::App* cmd_fit = app.add_subcommand("fit", "Estimate a model and fit canonical functions");
  cmd_fit->add_option("data", fit.data_path, "Observations CSV")->required();
  cmd_fit->add_option("--config", fit.config_path, "JSON config file");
  cmd_fit->add_option("--schema", fit.schema_path, "Dataset schema JSON");
  cmd_fit->add_option("--response", fit.response_path, "Response CSV");
  cmd_fit->add_option("--out", fit.out, "Output directory");
  cmd_fit->add_option("--seed", fit.seed, "Override the config seed");

  SimulateOptions sim;
  CLI::App* cmd_sim = app.add_subcommand("simulate", "Run a simulation benchmark");
  cmd_sim->add_option("spec", sim.spec_path, "Simulation spec JSON")->required();
  cmd_sim->add_option("--sim", sim.sim, "Which simulation (1, 2 or 3)");
  cmd_sim->add_option("--replicates", sim.replicates, "Replicate count");
  cmd_sim->add_option("--threads", sim.threads, "Worker threads");
  cmd_sim->add_option("--seed", sim.seed, "Override the spec seed");
  cmd_sim->add_option("--out", sim.out, "Output directory");

  PredictOptions predict;
  CLI::App* cmd_predict = app.add_subcommand("predict", "Predict values at target times");
  cmd_predict->add_option("model_dir", predict.model_dir, "Directory from a fit run")->required();
  cmd_predict->add_option("partial", predict.partial_path, "Partial observations CSV")->required();
  cmd_predict->add_option("targets", predict.targets_path, "Targets CSV")->required();
  cmd_predict->add_option("--out", predict.out, "Output directory");

  ReconstructOptions reconstruct;
  CLI::App* cmd_reconstruct =
      app.add_subcommand("reconstruct", "Reconstruct full trajectories");
  cmd_reconstruct->add_option("model_dir", reconstruct.model_dir, "Directory from a fit run")
      ->required();
  cmd_reconstruct->add_option("data", reconstruct.data_path, "Observations CSV")->required();
  cmd_reconstruct->add_option("--subjects", reconstruct.subjects,
                              "Comma-separated subject ids (default: all)");
  cmd_reconstruct->add_option("--out", reconstruct.out, "Output directory");

  SummarizeOptions summarize;
  CLI::App* cmd_summarize = app.add_subcommand("summarize", "Describe a dataset");
  cmd_summarize->add_option("data", summarize.data_path, "Observations CSV")->required();
  cmd_summarize->add_option("--schema", summarize.schema_path, "Dataset schema JSON");
  cmd_summarize->add_option("--out", summarize.out, "Also write summary.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_fit->parsed()) return run_fit(fit);
    if (cmd_sim->parsed()) return run_simulate(sim);
    if (cmd_predict->parsed()) return run_predict(predict);
    if (cmd_reconstruct->parsed()) return run_reconstruct(reconstruct);
    if (cmd_summarize->parsed()) return run_summarize(summarize);
  } catch (const fgcca::FgccaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
