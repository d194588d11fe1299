#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowgp/core.hpp"
#include "flowgp/likelihoods.hpp"
#include "flowgp/sampler.hpp"

namespace flowgp {

using json = nlohmann::json;

/// Shortest text that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;  ///< one row per record

  Index column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Index>(i);
    throw ConfigError("csv: no column named '" + name + "'");
  }
};

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& rows) {
  if (!header.empty() && static_cast<Index>(header.size()) != rows.cols())
    throw DimensionError("write_csv: header has " + std::to_string(header.size()) + " names for " +
                         std::to_string(rows.cols()) + " columns");
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  if (!header.empty()) out << '\n';
  for (Index r = 0; r < rows.rows(); ++r) {
    for (Index c = 0; c < rows.cols(); ++c) out << (c ? "," : "") << format_double(rows(r, c));
    out << '\n';
  }
}

/// Reads a numeric CSV with a header row. Blank lines and lines starting with '#' are skipped.
inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::vector<std::vector<double>> rows;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \r\t") == std::string::npos) continue;
    auto cells = split(line, ',');
    if (!have_header) {
      t.header = cells;
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + c + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw ConfigError(path.string() + ": empty csv");
  t.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return t;
}

/// Header `sample,<p0>,<p1>,...` where each grid point's coordinates are joined by ';'.
inline void write_ensemble_csv(const std::filesystem::path& path, const Matrix& samples, const Points& locations) {
  if (locations.rows() != samples.cols()) throw DimensionError("write_ensemble_csv: locations do not match samples");
  std::vector<std::string> header{"sample"};
  for (Index i = 0; i < locations.rows(); ++i) {
    std::string h;
    for (Index d = 0; d < locations.cols(); ++d) h += (d ? ";" : "") + format_double(locations(i, d));
    header.push_back(h);
  }
  Matrix rows(samples.rows(), samples.cols() + 1);
  for (Index r = 0; r < samples.rows(); ++r) rows(r, 0) = static_cast<double>(r);
  rows.rightCols(samples.cols()) = samples;
  write_csv(path, header, rows);
}

struct EnsembleFile {
  Matrix samples;
  Points locations;
};

inline EnsembleFile read_ensemble_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "sample") throw ConfigError(path.string() + ": not an ensemble file");
  EnsembleFile e;
  const Index m = static_cast<Index>(t.header.size()) - 1;
  for (Index i = 0; i < m; ++i) {
    const auto parts = split(t.header[static_cast<std::size_t>(i + 1)], ';');
    if (i == 0) e.locations.resize(m, static_cast<Index>(parts.size()));
    if (static_cast<Index>(parts.size()) != e.locations.cols()) throw ConfigError(path.string() + ": ragged grid header");
    for (std::size_t d = 0; d < parts.size(); ++d) e.locations(i, static_cast<Index>(d)) = std::stod(parts[d]);
  }
  e.samples = t.values.rightCols(m);
  return e;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

/// Histogram beliefs: {"bandwidth": nu, "locations": [{"index": i, "edges": [...], "masses": [...]}, ...]}.
/// A location may give "x" instead of "index"; it is then matched to the nearest grid input.
inline std::shared_ptr<SmoothedHistogram> histogram_from_json(const json& j, const Points& grid,
                                                              double default_bandwidth = 0.5) {
  if (!j.contains("locations") || !j["locations"].is_array()) throw ConfigError("histogram JSON needs a 'locations' array");
  std::vector<HistogramLocation> locs;
  for (const auto& l : j["locations"]) {
    HistogramLocation h;
    if (l.contains("index")) {
      h.index = l["index"].get<Index>();
    } else if (l.contains("x")) {
      const double x = l["x"].get<double>();
      Index best = 0;
      (grid.col(0).array() - x).abs().minCoeff(&best);
      h.index = best;
    } else {
      throw ConfigError("histogram location needs 'index' or 'x'");
    }
    h.edges = l.at("edges").get<std::vector<double>>();
    h.masses = l.at("masses").get<std::vector<double>>();
    locs.push_back(std::move(h));
  }
  return std::make_shared<SmoothedHistogram>(grid.rows(), std::move(locs), j.value("bandwidth", default_bandwidth));
}

inline json histogram_to_json(const SmoothedHistogram& h) {
  json j;
  j["bandwidth"] = h.bandwidth();
  j["locations"] = json::array();
  for (const auto& l : h.locations()) j["locations"].push_back({{"index", l.index}, {"edges", l.edges}, {"masses", l.masses}});
  return j;
}

}  // namespace flowgp
