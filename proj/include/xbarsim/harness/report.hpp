#pragma once

// RunReport CSV. Column order is fixed:
//   seed,config_hash,crossbar_hash,method,s,size,mitigation,
//   software_accuracy,nonideal_accuracy,mean_nf,compression_rate,wall_time_s
// Floats use 6 significant digits (%.6g). Rows are kept sorted by
// (seed, method, s, size, mitigation, config_hash, crossbar_hash), so the
// file content does not depend on the order in which cells finished.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "xbarsim/error.hpp"
#include "xbarsim/pruning.hpp"

namespace xbarsim::harness {

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "seed", "config_hash", "crossbar_hash", "method", "s", "size", "mitigation",
      "software_accuracy", "nonideal_accuracy", "mean_nf", "compression_rate", "wall_time_s"};
  return cols;
}

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct ReportRow {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string crossbar_hash;
  PruneMethod method = PruneMethod::none;
  double s = 0.0;
  int size = 0;
  std::string mitigation = "none";
  double software_accuracy = 0.0;
  double nonideal_accuracy = 0.0;
  double mean_nf = 0.0;
  double compression_rate = 1.0;
  double wall_time_s = 0.0;

  std::vector<std::string> fields() const {
    return {std::to_string(seed), config_hash, crossbar_hash, to_string(method), fmt6(s),
            std::to_string(size), mitigation, fmt6(software_accuracy), fmt6(nonideal_accuracy),
            fmt6(mean_nf), fmt6(compression_rate), fmt6(wall_time_s)};
  }

  /// Sort key; numeric fields compare by their rendered value so that a row
  /// read back from disk sorts exactly like the row that was written.
  auto key() const {
    return std::make_tuple(seed, static_cast<int>(method), std::stod(fmt6(s)), size, mitigation,
                           config_hash, crossbar_hash);
  }
};

inline void check_finite(const ReportRow& r) {
  for (double v : {r.s, r.software_accuracy, r.nonideal_accuracy, r.mean_nf, r.compression_rate,
                   r.wall_time_s})
    if (!std::isfinite(v)) throw NumericError("report row has a non-finite field");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string join_csv(const std::vector<std::string>& f) {
  std::string s;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) s += ',';
    s += f[i];
  }
  return s;
}

inline ReportRow parse_row(const std::vector<std::string>& f, const std::string& where) {
  if (f.size() != report_columns().size()) throw IoError(where + ": wrong number of columns");
  try {
    ReportRow r;
    r.seed = std::stoull(f[0]);
    r.config_hash = f[1];
    r.crossbar_hash = f[2];
    r.method = parse_prune_method(f[3]);
    r.s = std::stod(f[4]);
    r.size = std::stoi(f[5]);
    r.mitigation = f[6];
    r.software_accuracy = std::stod(f[7]);
    r.nonideal_accuracy = std::stod(f[8]);
    r.mean_nf = std::stod(f[9]);
    r.compression_rate = std::stod(f[10]);
    r.wall_time_s = std::stod(f[11]);
    return r;
  } catch (const std::logic_error&) {
    throw IoError(where + ": malformed row");
  }
}

inline std::vector<ReportRow> read_report(const std::filesystem::path& path) {
  std::vector<ReportRow> rows;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (split_csv_line(line) != report_columns())
    throw IoError("'" + path.string() + "' does not start with the RunReport header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    rows.push_back(parse_row(split_csv_line(line), path.string() + ":" + std::to_string(lineno)));
  }
  return rows;
}

inline void sort_rows(std::vector<ReportRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.key() < b.key(); });
}

inline std::string render_report(std::vector<ReportRow> rows) {
  sort_rows(rows);
  std::string out = join_csv(report_columns()) + '\n';
  for (const auto& r : rows) {
    check_finite(r);
    out += join_csv(r.fields()) + '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  write_text(path, render_report(rows));
}

/// Merges `rows` into an existing report (or creates it) and rewrites it sorted.
inline void append_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::vector<ReportRow> all;
  if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) all = read_report(path);
  all.insert(all.end(), rows.begin(), rows.end());
  write_report(path, all);
}

}  // namespace xbarsim::harness
