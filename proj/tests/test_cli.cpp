#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fgcca/serialization.hpp"
#include "fgcca/simulation.hpp"

namespace fs = std::filesystem;
using namespace fgcca;

namespace {

struct RunResult {
  int status = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FGCCA_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {};
  RunResult result;
  char buffer[4096];
  size_t got;
  while ((got = fread(buffer, 1, sizeof(buffer), pipe)) > 0)
    result.output.append(buffer, got);
  const int rc = pclose(pipe);
  result.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return result;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

void expect_same_dir(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names_a, names_b;
  for (const auto& entry : fs::directory_iterator(a)) names_a.push_back(entry.path().filename());
  for (const auto& entry : fs::directory_iterator(b)) names_b.push_back(entry.path().filename());
  std::sort(names_a.begin(), names_a.end());
  std::sort(names_b.begin(), names_b.end());
  ASSERT_EQ(names_a, names_b);
  for (const std::string& name : names_a)
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name << " differs";
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::current_path() / (std::string("cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Dense two-process dataset from the simulation generator; every subject is
  // observed on the full grid so smoothing never runs out of corner data.
  std::string make_toy_data(const std::string& name = "toy.csv") const {
    SimSpec spec;
    spec.processes = 2;
    spec.basis_size = 2;
    spec.subjects = 40;
    spec.grid_size = 21;
    spec.sparsity = Sparsity::dense;
    spec.sigma2 = 0.04;
    spec.seed = 9;
    const std::string out = path(name);
    write_csv(generate(spec).dataset, out);
    return out;
  }

  std::string make_fit_config(const std::string& name = "config.json") const {
    const std::string out = path(name);
    write_text(out,
               "{\n"
               "  \"estimation\": {\"grid_size\": 21, \"mean_bandwidth\": 0.1,"
               " \"surface_bandwidth\": 0.12},\n"
               "  \"fit\": {\"n_components\": 2}\n"
               "}\n");
    return out;
  }

  fs::path dir_;
};

TEST_F(CliTest, FitWritesTheFullOutputSet) {
  const std::string data = make_toy_data();
  const std::string config = make_fit_config();
  const RunResult r =
      run_cli("fit " + data + " --config " + config + " --out " + path("run"));
  ASSERT_EQ(r.status, 0) << r.output;
  for (const char* name :
       {"model.json", "fit.json", "components.csv", "trace.csv", "manifest.json", "run.log"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / name)) << name;

  const LoadedFit loaded = load_fit(path("run/fit.json"));
  EXPECT_EQ(loaded.fit.orders(), 2);
  EXPECT_EQ(loaded.fit.process_count(), 2);

  const auto components = read_csv_rows(dir_ / "run" / "components.csv");
  EXPECT_EQ(components.size(), 1u + 40u * 2u * 2u);

  // Each order's criterion trace never decreases between sweeps.
  const auto trace = read_csv_rows(dir_ / "run" / "trace.csv");
  ASSERT_GT(trace.size(), 2u);
  std::map<std::string, double> last;
  for (size_t k = 1; k < trace.size(); ++k) {
    const double value = std::stod(trace[k][2]);
    auto at = last.find(trace[k][0]);
    if (at != last.end()) EXPECT_GE(value, at->second - 1e-10) << "row " << k;
    last[trace[k][0]] = value;
  }

  const std::string manifest = slurp(dir_ / "run" / "manifest.json");
  EXPECT_NE(manifest.find("\"timings\": null"), std::string::npos);
  EXPECT_NE(manifest.find("\"command\": \"fit\""), std::string::npos);
}

TEST_F(CliTest, FitRerunsAreByteIdentical) {
  const std::string data = make_toy_data();
  const std::string config = make_fit_config();
  ASSERT_EQ(run_cli("fit " + data + " --config " + config + " --out " + path("a")).status, 0);
  ASSERT_EQ(run_cli("fit " + data + " --config " + config + " --out " + path("b")).status, 0);
  expect_same_dir(dir_ / "a", dir_ / "b");
}

TEST_F(CliTest, FitRejectsTauZero) {
  const std::string data = make_toy_data();
  write_text(dir_ / "bad.json", "{\"fit\": {\"tau\": 0.0}}\n");
  const RunResult r =
      run_cli("fit " + data + " --config " + path("bad.json") + " --out " + path("run"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("tau must lie in (0, 1]"), std::string::npos) << r.output;
}

TEST_F(CliTest, FitRejectsUnknownConfigSections) {
  const std::string data = make_toy_data();
  write_text(dir_ / "bad.json", "{\"bogus\": {}}\n");
  const RunResult r =
      run_cli("fit " + data + " --config " + path("bad.json") + " --out " + path("run"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("unknown section 'bogus'"), std::string::npos) << r.output;
}

TEST_F(CliTest, SimulateWritesBenchFiles) {
  write_text(dir_ / "spec.json",
             "{\"processes\": 2, \"basis_size\": 2, \"subjects\": 30, \"grid_size\": 30,"
             " \"sparsity\": \"medium\", \"sigma2\": 0.25, \"seed\": 11}\n");
  const RunResult r = run_cli("simulate " + path("spec.json") +
                              " --sim 3 --replicates 2 --out " + path("sim"));
  ASSERT_EQ(r.status, 0) << r.output;

  std::string csv_name, json_name;
  for (const auto& entry : fs::directory_iterator(dir_ / "sim")) {
    const std::string name = entry.path().filename();
    if (name.starts_with("sim3_") && name.ends_with(".csv")) csv_name = name;
    if (name.starts_with("sim3_") && name.ends_with(".json")) json_name = name;
  }
  ASSERT_FALSE(csv_name.empty());
  ASSERT_FALSE(json_name.empty());
  const auto rows = read_csv_rows(dir_ / "sim" / csv_name);
  ASSERT_GT(rows.size(), 1u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"replicate", "method", "process", "order",
                                               "function_mse", "component_mse", "mrse"}));
  EXPECT_NE(slurp(dir_ / "sim" / "manifest.json").find("\"timings\": null"),
            std::string::npos);
}

TEST_F(CliTest, SimulateIsByteIdenticalAcrossThreadCounts) {
  write_text(dir_ / "spec.json",
             "{\"processes\": 2, \"basis_size\": 2, \"subjects\": 30, \"grid_size\": 30,"
             " \"sparsity\": \"medium\", \"sigma2\": 0.25, \"seed\": 11}\n");
  ASSERT_EQ(run_cli("simulate " + path("spec.json") + " --sim 3 --replicates 2 --threads 1 --out " +
                    path("a"))
                .status,
            0);
  ASSERT_EQ(run_cli("simulate " + path("spec.json") + " --sim 3 --replicates 2 --threads 3 --out " +
                    path("b"))
                .status,
            0);
  expect_same_dir(dir_ / "a", dir_ / "b");
}

TEST_F(CliTest, SimulateRejectsUnknownSparsity) {
  write_text(dir_ / "spec.json", "{\"processes\": 2, \"sparsity\": \"extreme\"}\n");
  const RunResult r = run_cli("simulate " + path("spec.json") + " --out " + path("sim"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("unknown sparsity 'extreme'"), std::string::npos) << r.output;
}

TEST_F(CliTest, PredictMatchesReconstructionAtGridTimes) {
  const std::string data = make_toy_data();
  const std::string config = make_fit_config();
  ASSERT_EQ(run_cli("fit " + data + " --config " + config + " --out " + path("run")).status, 0);

  const auto data_rows = read_csv_rows(data);
  const std::string subject = data_rows[1][0];
  ASSERT_EQ(run_cli("reconstruct " + path("run") + " " + data + " --subjects " + subject +
                    " --out " + path("rec"))
                .status,
            0);
  const auto rec_rows = read_csv_rows(dir_ / "rec" / "reconstructions.csv");
  ASSERT_GT(rec_rows.size(), 1u);

  // Feed the reconstruction's own time stamps back in as targets.
  std::string targets = "subject_id,process_id,time\n";
  for (size_t k = 1; k < rec_rows.size(); ++k)
    targets += rec_rows[k][0] + "," + rec_rows[k][1] + "," + rec_rows[k][2] + "\n";
  write_text(dir_ / "targets.csv", targets);
  ASSERT_EQ(run_cli("predict " + path("run") + " " + data + " " + path("targets.csv") +
                    " --out " + path("pred"))
                .status,
            0);

  const auto pred_rows = read_csv_rows(dir_ / "pred" / "predictions.csv");
  ASSERT_EQ(pred_rows.size(), rec_rows.size());
  for (size_t k = 1; k < rec_rows.size(); ++k) {
    EXPECT_EQ(pred_rows[k][2], rec_rows[k][2]);
    EXPECT_NEAR(std::stod(pred_rows[k][3]), std::stod(rec_rows[k][3]), 1e-8) << "row " << k;
  }
}

TEST_F(CliTest, PredictFallsBackToTheMeanForUnseenSubjects) {
  const std::string data = make_toy_data();
  const std::string config = make_fit_config();
  ASSERT_EQ(run_cli("fit " + data + " --config " + config + " --out " + path("run")).status, 0);

  const auto data_rows = read_csv_rows(data);
  const std::string process = data_rows[1][1];
  write_text(dir_ / "targets.csv",
             "subject_id,process_id,time,value\nzz_unseen," + process + ",0.5,0.0\n");
  const RunResult r = run_cli("predict " + path("run") + " " + data + " " +
                              path("targets.csv") + " --out " + path("pred"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(slurp(dir_ / "pred" / "run.log").find("predicting the mean"), std::string::npos);

  const auto pred_rows = read_csv_rows(dir_ / "pred" / "predictions.csv");
  ASSERT_EQ(pred_rows.size(), 2u);
  EXPECT_EQ(pred_rows[0].size(), 6u);  // value column adds actual and squared_error
  EXPECT_EQ(pred_rows[1][4], "0");
}

TEST_F(CliTest, SummarizePrintsOneRowPerProcess) {
  const std::string data = make_toy_data();
  const RunResult r = run_cli("summarize " + data);
  ASSERT_EQ(r.status, 0) << r.output;
  std::stringstream ss(r.output);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(ss, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0],
            "process_id,subjects_observed,total_observations,min_count,median_count,"
            "max_count,time_min,time_max");
}

TEST_F(CliTest, HelpAndMissingSubcommands) {
  EXPECT_EQ(run_cli("--help").status, 0);
  EXPECT_EQ(run_cli("").status, 2);
  const RunResult r = run_cli("fit");
  EXPECT_EQ(r.status, 2);
}

}  // namespace
