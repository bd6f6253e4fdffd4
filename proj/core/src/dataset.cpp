#include "fgcca/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fgcca {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

double parse_double(const std::string& field, const char* what, long line_number) {
  const std::string t = trim(field);
  double out = 0.0;
  const char* begin = t.data();
  const char* end = begin + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end || t.empty()) {
    std::ostringstream msg;
    msg << "line " << line_number << ": " << what << " '" << field << "' is not a number";
    fail(ErrorCode::parse_error, msg.str());
  }
  if (!std::isfinite(out)) {
    std::ostringstream msg;
    msg << "line " << line_number << ": " << what << " '" << field << "' is not finite";
    fail(ErrorCode::parse_error, msg.str());
  }
  return out;
}

struct RawRow {
  std::string subject;
  std::string process;
  double time;
  double value;
  long line_number;
};

}  // namespace

DatasetSchema parse_schema(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("schema is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("processes") || !doc["processes"].is_array())
    fail(ErrorCode::schema_error, "schema must be an object with a 'processes' array");
  DatasetSchema schema;
  for (const auto& entry : doc["processes"]) {
    if (!entry.is_object() || !entry.contains("id") || !entry["id"].is_string())
      fail(ErrorCode::schema_error, "each schema process needs a string 'id'");
    DatasetSchema::Declared decl;
    decl.id = entry["id"].get<std::string>();
    if (decl.id.empty()) fail(ErrorCode::schema_error, "process id must not be empty");
    if (entry.contains("label")) {
      if (!entry["label"].is_string())
        fail(ErrorCode::schema_error, "process label must be a string");
      decl.label = entry["label"].get<std::string>();
    }
    if (entry.contains("interval")) {
      const auto& iv = entry["interval"];
      if (!iv.is_array() || iv.size() != 2 || !iv[0].is_number() || !iv[1].is_number())
        fail(ErrorCode::schema_error,
             "process interval must be a [start, end] pair for process '" + decl.id + "'");
      decl.has_interval = true;
      decl.interval_start = iv[0].get<double>();
      decl.interval_end = iv[1].get<double>();
      if (!(decl.interval_start < decl.interval_end))
        fail(ErrorCode::schema_error,
             "interval start must be below its end for process '" + decl.id + "'");
    }
    for (const auto& earlier : schema.processes)
      if (earlier.id == decl.id)
        fail(ErrorCode::schema_error, "process '" + decl.id + "' declared twice");
    schema.processes.push_back(std::move(decl));
  }
  return schema;
}

DatasetSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open schema file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_schema(buffer.str());
}

LongitudinalDataset::LongitudinalDataset(std::vector<ProcessInfo> processes,
                                         std::vector<std::string> subjects,
                                         std::vector<std::vector<SparseSample>> samples)
    : processes_(std::move(processes)), subjects_(std::move(subjects)),
      samples_(std::move(samples)) {
  if (processes_.empty()) fail(ErrorCode::insufficient_data, "dataset declares no process");
  if (samples_.size() != subjects_.size())
    fail(ErrorCode::dimension_mismatch, "sample table does not match the subject list");
  for (size_t i = 0; i + 1 < subjects_.size(); ++i)
    if (!(subjects_[i] < subjects_[i + 1]))
      fail(ErrorCode::invalid_config, "subjects must be sorted and distinct");
  for (const auto& p : processes_)
    if (!(p.interval_start < p.interval_end))
      fail(ErrorCode::degenerate_process,
           "process '" + p.id + "' has an empty observation interval");
  for (size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].size() != processes_.size())
      fail(ErrorCode::dimension_mismatch, "sample table does not match the process list");
    for (size_t j = 0; j < samples_[i].size(); ++j) {
      const SparseSample& s = samples_[i][j];
      if (s.times.size() != s.values.size())
        fail(ErrorCode::dimension_mismatch,
             "subject '" + subjects_[i] + "' has mismatched time and value counts");
      for (int k = 0; k + 1 < s.n(); ++k)
        if (!(s.times(k) < s.times(k + 1)))
          fail(ErrorCode::duplicate_observation,
               "subject '" + subjects_[i] + "' has unsorted or repeated times for process '" +
                   processes_[j].id + "'");
      for (int k = 0; k < s.n(); ++k) {
        if (!std::isfinite(s.times(k)) || !std::isfinite(s.values(k)))
          fail(ErrorCode::parse_error, "subject '" + subjects_[i] + "' has non-finite data");
        if (s.times(k) < processes_[j].interval_start || s.times(k) > processes_[j].interval_end)
          fail(ErrorCode::range_error,
               "subject '" + subjects_[i] + "' observes process '" + processes_[j].id +
                   "' outside its declared interval");
      }
    }
  }
}

int LongitudinalDataset::process_index(const std::string& id) const {
  for (size_t j = 0; j < processes_.size(); ++j)
    if (processes_[j].id == id) return static_cast<int>(j);
  return -1;
}

int LongitudinalDataset::subject_index(const std::string& id) const {
  const auto it = std::lower_bound(subjects_.begin(), subjects_.end(), id);
  if (it == subjects_.end() || *it != id) return -1;
  return static_cast<int>(it - subjects_.begin());
}

int LongitudinalDataset::total_observations(int process) const {
  int total = 0;
  for (int i = 0; i < subject_count(); ++i) total += sample(i, process).n();
  return total;
}

LongitudinalDataset load_csv(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::schema_error, "file " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  const auto column = [&](const char* name) {
    for (size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    fail(ErrorCode::schema_error, std::string("missing column '") + name + "' in " + path);
  };
  const int col_subject = column("subject_id");
  const int col_process = column("process_id");
  const int col_time = column("time");
  const int col_value = column("value");
  const size_t min_fields =
      static_cast<size_t>(std::max({col_subject, col_process, col_time, col_value})) + 1;

  std::vector<RawRow> rows;
  long line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < min_fields) {
      std::ostringstream msg;
      msg << "line " << line_number << ": expected at least " << min_fields << " fields, got "
          << fields.size();
      fail(ErrorCode::parse_error, msg.str());
    }
    RawRow row;
    row.subject = fields[col_subject];
    row.process = fields[col_process];
    if (row.subject.empty()) {
      std::ostringstream msg;
      msg << "line " << line_number << ": empty subject_id";
      fail(ErrorCode::parse_error, msg.str());
    }
    if (row.process.empty()) {
      std::ostringstream msg;
      msg << "line " << line_number << ": empty process_id";
      fail(ErrorCode::parse_error, msg.str());
    }
    row.time = parse_double(fields[col_time], "time", line_number);
    row.value = parse_double(fields[col_value], "value", line_number);
    row.line_number = line_number;
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::insufficient_data, "file " + path + " has no data rows");

  // Process order: schema order first, then remaining ids lexicographically.
  std::vector<ProcessInfo> processes;
  std::map<std::string, int> process_of;
  for (const auto& decl : schema.processes) {
    ProcessInfo info;
    info.id = decl.id;
    info.label = decl.label.empty() ? decl.id : decl.label;
    process_of[decl.id] = static_cast<int>(processes.size());
    processes.push_back(std::move(info));
  }
  {
    std::vector<std::string> extra;
    for (const auto& row : rows)
      if (!process_of.count(row.process)) {
        process_of[row.process] = -1;  // placeholder
        extra.push_back(row.process);
      }
    std::sort(extra.begin(), extra.end());
    for (const auto& id : extra) {
      ProcessInfo info;
      info.id = id;
      info.label = id;
      process_of[id] = static_cast<int>(processes.size());
      processes.push_back(std::move(info));
    }
  }
  const int nproc = static_cast<int>(processes.size());

  std::vector<std::string> subjects;
  for (const auto& row : rows) subjects.push_back(row.subject);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  std::map<std::string, int> subject_of;
  for (size_t i = 0; i < subjects.size(); ++i) subject_of[subjects[i]] = static_cast<int>(i);

  struct Obs {
    double time;
    double value;
    long line_number;
  };
  std::vector<std::vector<std::vector<Obs>>> grouped(
      subjects.size(), std::vector<std::vector<Obs>>(nproc));
  for (const auto& row : rows)
    grouped[subject_of[row.subject]][process_of[row.process]].push_back(
        {row.time, row.value, row.line_number});

  // Declared intervals win; otherwise use the observed range per process.
  std::vector<double> lo(nproc, std::numeric_limits<double>::infinity());
  std::vector<double> hi(nproc, -std::numeric_limits<double>::infinity());
  for (const auto& row : rows) {
    const int j = process_of[row.process];
    lo[j] = std::min(lo[j], row.time);
    hi[j] = std::max(hi[j], row.time);
  }
  for (int j = 0; j < nproc; ++j) {
    const DatasetSchema::Declared* decl = nullptr;
    for (const auto& d : schema.processes)
      if (d.id == processes[j].id) decl = &d;
    if (decl && decl->has_interval) {
      processes[j].interval_start = decl->interval_start;
      processes[j].interval_end = decl->interval_end;
    } else if (lo[j] < hi[j]) {
      processes[j].interval_start = lo[j];
      processes[j].interval_end = hi[j];
    } else {
      fail(ErrorCode::degenerate_process,
           "process '" + processes[j].id +
               "' has no declared interval and its observed times do not span one");
    }
  }

  std::vector<std::vector<SparseSample>> samples(subjects.size(),
                                                 std::vector<SparseSample>(nproc));
  for (size_t i = 0; i < subjects.size(); ++i) {
    for (int j = 0; j < nproc; ++j) {
      auto& obs = grouped[i][j];
      std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) {
        return a.time < b.time || (a.time == b.time && a.line_number < b.line_number);
      });
      for (size_t k = 0; k + 1 < obs.size(); ++k) {
        if (obs[k].time == obs[k + 1].time) {
          std::ostringstream msg;
          msg << "line " << obs[k + 1].line_number << ": duplicate observation of subject '"
              << subjects[i] << "', process '" << processes[j].id << "' at time "
              << obs[k + 1].time << " (first seen on line " << obs[k].line_number << ")";
          fail(ErrorCode::duplicate_observation, msg.str());
        }
      }
      SparseSample& s = samples[i][j];
      s.times.resize(obs.size());
      s.values.resize(obs.size());
      for (size_t k = 0; k < obs.size(); ++k) {
        if (obs[k].time < processes[j].interval_start ||
            obs[k].time > processes[j].interval_end) {
          std::ostringstream msg;
          msg << "line " << obs[k].line_number << ": time " << obs[k].time
              << " lies outside the declared interval [" << processes[j].interval_start << ", "
              << processes[j].interval_end << "] of process '" << processes[j].id << "'";
          fail(ErrorCode::range_error, msg.str());
        }
        s.times(k) = obs[k].time;
        s.values(k) = obs[k].value;
      }
    }
  }

  return LongitudinalDataset(std::move(processes), std::move(subjects), std::move(samples));
}

void write_csv(const LongitudinalDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path);
  out << "subject_id,process_id,time,value\n";
  char buf[64];
  for (int i = 0; i < dataset.subject_count(); ++i) {
    for (int j = 0; j < dataset.process_count(); ++j) {
      const SparseSample& s = dataset.sample(i, j);
      for (int k = 0; k < s.n(); ++k) {
        out << dataset.subject(i) << ',' << dataset.process(j).id << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", s.times(k));
        out << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", s.values(k));
        out << buf << '\n';
      }
    }
  }
  if (!out) fail(ErrorCode::io_error, "failed while writing " + path);
}

std::vector<ProcessSummary> summarize(const LongitudinalDataset& dataset) {
  std::vector<ProcessSummary> out;
  for (int j = 0; j < dataset.process_count(); ++j) {
    ProcessSummary s;
    s.id = dataset.process(j).id;
    std::vector<int> counts;
    double tmin = std::numeric_limits<double>::infinity();
    double tmax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < dataset.subject_count(); ++i) {
      const SparseSample& sample = dataset.sample(i, j);
      if (sample.n() == 0) continue;
      counts.push_back(sample.n());
      s.total_observations += sample.n();
      tmin = std::min(tmin, sample.times(0));
      tmax = std::max(tmax, sample.times(sample.n() - 1));
    }
    s.subjects_observed = static_cast<int>(counts.size());
    if (!counts.empty()) {
      std::sort(counts.begin(), counts.end());
      s.min_count = counts.front();
      s.max_count = counts.back();
      const size_t mid = counts.size() / 2;
      s.median_count = counts.size() % 2 == 1
                           ? counts[mid]
                           : 0.5 * (counts[mid - 1] + counts[mid]);
      s.time_min = tmin;
      s.time_max = tmax;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fgcca
