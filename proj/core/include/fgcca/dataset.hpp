#ifndef FGCCA_DATASET_HPP
#define FGCCA_DATASET_HPP

#include <map>
#include <string>
#include <vector>

#include "fgcca/grid.hpp"

namespace fgcca {

// All observations of one process for one subject. Times are sorted and
// strictly increasing; n() may be zero for subjects never seen by a process.
struct SparseSample {
  Eigen::VectorXd times;
  Eigen::VectorXd values;

  int n() const { return static_cast<int>(times.size()); }
};

struct ProcessInfo {
  std::string id;
  std::string label;            // optional display name, defaults to id
  double interval_start = 0.0;  // closed observation interval
  double interval_end = 0.0;
};

// Optional declaration accompanying a CSV file: process order, labels and
// observation intervals. Anything not declared is inferred from the data.
struct DatasetSchema {
  struct Declared {
    std::string id;
    std::string label;
    bool has_interval = false;
    double interval_start = 0.0;
    double interval_end = 0.0;
  };
  std::vector<Declared> processes;
};

DatasetSchema load_schema(const std::string& path);
DatasetSchema parse_schema(const std::string& json_text);

// Sparse irregular longitudinal observations for J processes over N subjects.
// Immutable once built; subjects are held in lexicographic order so the same
// rows always produce the same dataset regardless of row order on disk.
class LongitudinalDataset {
 public:
  LongitudinalDataset(std::vector<ProcessInfo> processes, std::vector<std::string> subjects,
                      std::vector<std::vector<SparseSample>> samples);

  int process_count() const { return static_cast<int>(processes_.size()); }
  int subject_count() const { return static_cast<int>(subjects_.size()); }

  const std::vector<ProcessInfo>& processes() const { return processes_; }
  const ProcessInfo& process(int j) const { return processes_.at(j); }
  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::string& subject(int i) const { return subjects_.at(i); }

  // -1 when the id is unknown.
  int process_index(const std::string& id) const;
  int subject_index(const std::string& id) const;

  const SparseSample& sample(int subject, int process) const {
    return samples_.at(subject).at(process);
  }

  int total_observations(int process) const;

 private:
  std::vector<ProcessInfo> processes_;
  std::vector<std::string> subjects_;
  std::vector<std::vector<SparseSample>> samples_;  // [subject][process]
};

LongitudinalDataset load_csv(const std::string& path, const DatasetSchema& schema = {});
void write_csv(const LongitudinalDataset& dataset, const std::string& path);

struct ProcessSummary {
  std::string id;
  int subjects_observed = 0;  // subjects with at least one observation
  long total_observations = 0;
  int min_count = 0;          // over observed subjects
  double median_count = 0.0;
  int max_count = 0;
  double time_min = 0.0;
  double time_max = 0.0;
};

std::vector<ProcessSummary> summarize(const LongitudinalDataset& dataset);

}  // namespace fgcca

#endif
