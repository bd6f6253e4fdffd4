#include "fgcca/serialization.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace fgcca {
namespace {

template <typename Fn>
void expect_error(Fn&& fn, ErrorCode code, const std::string& fragment = {}) {
  try {
    fn();
    FAIL() << "expected an error";
  } catch (const FgccaError& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    if (!fragment.empty())
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

std::string temp_path(const std::string& name) { return ::testing::TempDir() + name; }

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  out << content;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

ProcessModel sample_model() {
  ProcessModel model;
  model.process_ids = {"hr", "bp"};
  model.grids = {TimeGrid::uniform(0.0, 1.0, 7), TimeGrid::uniform(0.0, 2.0, 5)};
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd mean(model.grids[j]->size());
    for (int i = 0; i < mean.size(); ++i) mean(i) = 0.1 * j + 0.3 * i;
    model.means.emplace_back(model.grids[j], std::move(mean));
  }
  model.covariances.resize(2);
  Eigen::MatrixXd self0 = Eigen::MatrixXd::Random(7, 7);
  self0 = (self0 + self0.transpose()).eval();
  Eigen::MatrixXd self1 = Eigen::MatrixXd::Random(5, 5);
  self1 = (self1 + self1.transpose()).eval();
  model.covariances.set(0, 0, GridOperator(model.grids[0], model.grids[0], self0));
  model.covariances.set(1, 1, GridOperator(model.grids[1], model.grids[1], self1));
  model.covariances.set(0, 1,
                        GridOperator(model.grids[0], model.grids[1], Eigen::MatrixXd::Random(7, 5)));
  model.noise_vars = {0.25, 1.0 / 3.0};
  model.norm_weights = {1.5, 0.75};
  model.mean_bandwidths = {0.1, 0.2};
  model.surface_bandwidths = {0.15, 0.25};
  model.normalized = true;
  return model;
}

FgccaFit sample_fit() {
  FgccaFit fit;
  fit.config = FgccaConfig::defaults(2);
  fit.config.n_components = 2;
  fit.config.tau << 0.7, 1.0;
  fit.config.scheme = Scheme::square;
  fit.config.deflation = DeflationMode::uncorrelated;
  fit.config.seed = 42;
  const TimeGridPtr grid_a = TimeGrid::uniform(0.0, 1.0, 6);
  const TimeGridPtr grid_b = TimeGrid::uniform(0.0, 1.0, 4);
  for (int m = 0; m < 2; ++m) {
    std::vector<GridFunction> functions;
    Eigen::VectorXd a(6), b(4);
    for (int i = 0; i < 6; ++i) a(i) = std::sin(m + 1.0 + i);
    for (int i = 0; i < 4; ++i) b(i) = std::cos(m + 2.0 + i);
    functions.emplace_back(grid_a, std::move(a));
    functions.emplace_back(grid_b, std::move(b));
    fit.functions.push_back(std::move(functions));
    fit.traces.push_back({0.1 * m, 0.5 + m, 0.6 + m});
    fit.converged.push_back(m == 0);
    fit.deflation_d.push_back({1.1 + m, 2.2 + m});
  }
  return fit;
}

TEST(FileHash, StableAndContentSensitive) {
  const std::string path = temp_path("hash_in.txt");
  write_text(path, "alpha beta\n");
  const std::string first = file_hash(path);
  EXPECT_EQ(first.size(), 16u);
  EXPECT_EQ(file_hash(path), first);
  write_text(path, "alpha beta!\n");
  EXPECT_NE(file_hash(path), first);
  expect_error([&] { file_hash(temp_path("absent.txt")); }, ErrorCode::io_error);
}

TEST(ModelFiles, RoundTripIsExact) {
  const ProcessModel model = sample_model();
  const std::string path = temp_path("model.json");
  save_model(model, path);
  const ProcessModel loaded = load_model(path);

  EXPECT_EQ(loaded.process_ids, model.process_ids);
  EXPECT_EQ(loaded.normalized, model.normalized);
  for (int j = 0; j < 2; ++j) {
    EXPECT_EQ((loaded.grids[j]->points() - model.grids[j]->points()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((loaded.means[j].values - model.means[j].values).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(loaded.noise_vars[j], model.noise_vars[j]);
    EXPECT_EQ(loaded.norm_weights[j], model.norm_weights[j]);
    EXPECT_EQ(loaded.mean_bandwidths[j], model.mean_bandwidths[j]);
    EXPECT_EQ(loaded.surface_bandwidths[j], model.surface_bandwidths[j]);
  }
  for (int j = 0; j < 2; ++j)
    for (int jp = j; jp < 2; ++jp) {
      ASSERT_TRUE(loaded.covariances.has(j, jp));
      EXPECT_EQ((loaded.covariances.get(j, jp).kernel - model.covariances.get(j, jp).kernel)
                    .cwiseAbs()
                    .maxCoeff(),
                0.0);
    }

  save_model(loaded, temp_path("model_again.json"));
  EXPECT_EQ(slurp(path), slurp(temp_path("model_again.json")));
}

TEST(ModelFiles, RejectsMalformedFiles) {
  expect_error([&] { load_model(temp_path("missing_model.json")); }, ErrorCode::io_error);

  const std::string path = temp_path("bad_model.json");
  write_text(path, "{ not json");
  expect_error([&] { load_model(path); }, ErrorCode::parse_error);

  write_text(path, "{\"format_version\": 1, \"type\": \"fit\"}");
  expect_error([&] { load_model(path); }, ErrorCode::schema_error, "model");

  write_text(path, "{\"format_version\": 99, \"type\": \"model\"}");
  expect_error([&] { load_model(path); }, ErrorCode::schema_error, "format_version 99");

  ProcessModel model = sample_model();
  model.covariances.set(0, 1,
                        GridOperator(model.grids[0], model.grids[1], Eigen::MatrixXd::Zero(7, 5)));
  save_model(model, path);
  std::string text = slurp(path);
  const size_t at = text.find("\"col\": 1");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 8, "\"col\": 9");
  write_text(path, text);
  expect_error([&] { load_model(path); }, ErrorCode::schema_error, "row/col");
}

TEST(FitFiles, RoundTripIsExact) {
  const FgccaFit fit = sample_fit();
  Eigen::VectorXd direction(3);
  direction << 0.6, -0.8, 0.0;
  const std::vector<Eigen::VectorXd> directions = {direction, (2.0 * direction).eval()};
  const std::string path = temp_path("fit.json");
  save_fit(fit, directions, path);
  const LoadedFit loaded = load_fit(path);

  ASSERT_EQ(loaded.fit.orders(), 2);
  ASSERT_EQ(loaded.fit.process_count(), 2);
  for (int m = 0; m < 2; ++m) {
    for (int j = 0; j < 2; ++j)
      EXPECT_EQ((loaded.fit.functions[m][j].values - fit.functions[m][j].values)
                    .cwiseAbs()
                    .maxCoeff(),
                0.0);
    EXPECT_EQ(loaded.fit.traces[m], fit.traces[m]);
    EXPECT_EQ(loaded.fit.converged[m], fit.converged[m]);
    EXPECT_EQ(loaded.fit.deflation_d[m], fit.deflation_d[m]);
  }
  EXPECT_EQ(loaded.fit.config.scheme, fit.config.scheme);
  EXPECT_EQ(loaded.fit.config.deflation, fit.config.deflation);
  EXPECT_EQ(loaded.fit.config.seed, fit.config.seed);
  EXPECT_EQ((loaded.fit.config.tau - fit.config.tau).cwiseAbs().maxCoeff(), 0.0);
  ASSERT_EQ(loaded.response_directions.size(), 2u);
  EXPECT_EQ((loaded.response_directions[0] - directions[0]).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((loaded.response_directions[1] - directions[1]).cwiseAbs().maxCoeff(), 0.0);

  save_fit(fit, {}, temp_path("fit_plain.json"));
  EXPECT_TRUE(load_fit(temp_path("fit_plain.json")).response_directions.empty());
  expect_error([&] { save_fit(fit, {direction}, temp_path("fit_bad.json")); },
               ErrorCode::dimension_mismatch);
}

TEST(FitConfigParsing, AppliesDefaultsAndOverrides) {
  const FgccaConfig defaults = parse_fit_config("{}", 3);
  EXPECT_EQ(defaults.connection.rows(), 3);
  EXPECT_EQ(defaults.connection(0, 1), 1.0);
  EXPECT_EQ(defaults.connection(1, 1), 0.0);
  EXPECT_EQ(defaults.tau.size(), 3);
  EXPECT_EQ(defaults.tau(2), 1.0);
  EXPECT_EQ(defaults.scheme, Scheme::identity);
  EXPECT_EQ(defaults.n_components, 1);

  const FgccaConfig custom = parse_fit_config(
      R"({"tau": 0.5, "scheme": "square", "n_components": 4, "deflation": "uncorrelated",
          "init": "random", "seed": 9, "sign_convention": false, "epsilon": 1e-6})",
      2);
  EXPECT_EQ(custom.tau(0), 0.5);
  EXPECT_EQ(custom.tau(1), 0.5);
  EXPECT_EQ(custom.scheme, Scheme::square);
  EXPECT_EQ(custom.n_components, 4);
  EXPECT_EQ(custom.deflation, DeflationMode::uncorrelated);
  EXPECT_EQ(custom.init, InitMode::random);
  EXPECT_EQ(custom.seed, 9ull);
  EXPECT_FALSE(custom.sign_convention);
  EXPECT_EQ(custom.epsilon, 1e-6);

  const FgccaConfig arrays = parse_fit_config(
      R"({"tau": [0.4, 1.0], "connection": [[0, 2], [2, 0]]})", 2);
  EXPECT_EQ(arrays.tau(0), 0.4);
  EXPECT_EQ(arrays.connection(0, 1), 2.0);
}

TEST(FitConfigParsing, RejectsBadInput) {
  expect_error([&] { parse_fit_config("{\"bogus\": 1}", 2); }, ErrorCode::schema_error, "bogus");
  expect_error([&] { parse_fit_config("not json", 2); }, ErrorCode::parse_error);
  expect_error([&] { parse_fit_config("{\"tau\": 0.0}", 2); }, ErrorCode::invalid_config,
               "tau must lie in (0, 1]");
  expect_error([&] { parse_fit_config("{\"scheme\": \"cubic\"}", 2); }, ErrorCode::invalid_config,
               "cubic");
  expect_error([&] { parse_fit_config("{\"connection\": [[0, 1]]}", 2); },
               ErrorCode::invalid_config);
}

TEST(EstimationOptionsParsing, DefaultsAndValidation) {
  const EstimationOptions defaults = parse_estimation_options("{}");
  EXPECT_EQ(defaults.grid_size, 51);
  EXPECT_TRUE(defaults.normalize);

  const EstimationOptions custom = parse_estimation_options(
      R"({"grid_size": 31, "mean_bandwidth": 0.2, "surface_bandwidth": 0.3, "normalize": false})");
  EXPECT_EQ(custom.grid_size, 31);
  EXPECT_EQ(custom.mean_bandwidth, 0.2);
  EXPECT_EQ(custom.surface_bandwidth, 0.3);
  EXPECT_FALSE(custom.normalize);

  expect_error([&] { parse_estimation_options("{\"grid_size\": 1}"); }, ErrorCode::invalid_config);
  expect_error([&] { parse_estimation_options("{\"smoothing\": 1}"); }, ErrorCode::schema_error,
               "smoothing");
}

TEST(SimSpecParsing, RoundTripsThroughTheEcho) {
  SimSpec spec;
  spec.processes = 2;
  spec.basis_size = 3;
  spec.subjects = 44;
  spec.grid_size = 21;
  spec.sparsity = Sparsity::medium;
  spec.sigma2 = 0.7;
  spec.seed = 123;
  spec.score_cov = SimSpec::default_score_cov(2, 3) * 0.5;

  const SimSpec parsed = parse_sim_spec(effective_sim_spec(spec));
  EXPECT_EQ(parsed.processes, spec.processes);
  EXPECT_EQ(parsed.basis_size, spec.basis_size);
  EXPECT_EQ(parsed.subjects, spec.subjects);
  EXPECT_EQ(parsed.grid_size, spec.grid_size);
  EXPECT_EQ(parsed.sparsity, spec.sparsity);
  EXPECT_EQ(parsed.sigma2, spec.sigma2);
  EXPECT_EQ(parsed.seed, spec.seed);
  EXPECT_EQ((parsed.score_cov - spec.score_cov).cwiseAbs().maxCoeff(), 0.0);

  spec.score_cov.resize(0, 0);
  const SimSpec defaulted = parse_sim_spec(effective_sim_spec(spec));
  EXPECT_EQ(defaulted.score_cov.size(), 0);

  expect_error([&] { parse_sim_spec("{\"sparsity\": \"extreme\"}"); }, ErrorCode::invalid_config,
               "extreme");
  expect_error([&] { parse_sim_spec("{\"replicates\": 3}"); }, ErrorCode::schema_error,
               "replicates");

  const FgccaConfig config = parse_fit_config(effective_fit_config(sample_fit().config), 2);
  EXPECT_EQ(config.scheme, Scheme::square);
  EXPECT_EQ(config.tau(0), 0.7);
}

TEST(Manifest, WritesDeterministicJsonWithoutTimings) {
  RunManifest manifest;
  manifest.command = "fit";
  manifest.config_json = effective_estimation_options(EstimationOptions{});
  manifest.seed = 7;
  const std::string input = temp_path("manifest_input.csv");
  write_text(input, "subject_id,process,time,value\n");
  manifest.inputs = {{input, file_hash(input)}};

  const std::string a = temp_path("manifest_a.json");
  const std::string b = temp_path("manifest_b.json");
  write_manifest(manifest, a);
  write_manifest(manifest, b);
  EXPECT_EQ(slurp(a), slurp(b));

  const std::string text = slurp(a);
  EXPECT_NE(text.find("\"timings\": null"), std::string::npos);
  EXPECT_NE(text.find("\"command\": \"fit\""), std::string::npos);
  EXPECT_NE(text.find(file_hash(input)), std::string::npos);
}

}  // namespace
}  // namespace fgcca
