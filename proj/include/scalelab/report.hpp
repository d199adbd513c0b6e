#pragma once

// Linear baselines, scaling efficiency and percent-of-peak, paper-style table
// rendering, and re-verification of the published tables.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scalelab/error.hpp"
#include "scalelab/paper_fixtures.hpp"
#include "scalelab/topo.hpp"

namespace scalelab::report {

struct ScalingRecord {
  std::uint64_t units = 1;
  double epoch_time_s = 0;

  bool operator==(const ScalingRecord&) const = default;
};

struct ScalingRow {
  std::uint64_t units = 0;
  double epoch_time_s = 0;
  double linear_time_s = 0;
  std::optional<double> efficiency;  // undefined on the base row
  bool superlinear = false;

  bool operator==(const ScalingRow&) const = default;
};

struct ScalingReport {
  ScalingRecord base;
  std::vector<ScalingRow> rows;

  bool operator==(const ScalingReport&) const = default;
};

// linear(n) = base.time * base.units / n; efficiency(n) = linear(n) / time(n).
inline ScalingReport compute_scaling_report(std::span<const ScalingRecord> records, std::size_t base_index = 0) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no scaling records");
  if (base_index >= records.size()) throw Error(ErrorKind::InvalidInput, "base index out of range");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.units < 1) throw Error(ErrorKind::InvalidInput, "unit counts must be >= 1");
    if (!(r.epoch_time_s > 0) || !std::isfinite(r.epoch_time_s))
      throw Error(ErrorKind::NonPositiveTime, "record for " + std::to_string(r.units) + " units has time " +
                                                  std::to_string(r.epoch_time_s));
    if (i > 0 && r.units <= records[i - 1].units)
      throw Error(ErrorKind::InvalidInput, "unit counts must be strictly increasing");
  }

  ScalingReport rep{records[base_index], {}};
  const double work = rep.base.epoch_time_s * static_cast<double>(rep.base.units);
  for (std::size_t i = 0; i < records.size(); ++i) {
    ScalingRow row{records[i].units, records[i].epoch_time_s, work / static_cast<double>(records[i].units), {}, false};
    if (i != base_index) {
      row.efficiency = row.linear_time_s / row.epoch_time_s;
      row.superlinear = *row.efficiency > 1.0;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

struct PerfInput {
  std::uint64_t units = 1;
  double measured_pflops = 0;
};

struct PerfRecord {
  std::uint64_t units = 1;
  double measured_pflops = 0;
  double pct_of_peak = 0;  // ratio; 1.0 = 100 %
};

inline std::vector<PerfRecord> compute_percent_of_peak(std::span<const PerfInput> rows, double node_peak_flops) {
  if (!(node_peak_flops > 0)) throw Error(ErrorKind::InvalidInput, "node peak must be positive");
  std::vector<PerfRecord> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    const double peak_pflops = static_cast<double>(r.units) * node_peak_flops / 1e15;
    out.push_back({r.units, r.measured_pflops, r.measured_pflops / peak_pflops});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Number formatting and CSV helpers

// Shortest text that parses back to exactly the same double.
inline std::string format_exact(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// Fixed decimals with trailing zeros (and a bare point) stripped.
inline std::string format_trimmed(double v, int decimals) {
  auto s = format_fixed(v, decimals);
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  return s;
}

inline std::string format_significant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

// Two decimals for second-scale times; sub-centisecond times keep three
// significant digits instead of collapsing to 0.
inline std::string format_time(double v) {
  return v >= 0.01 ? format_trimmed(v, 2) : format_significant(v, 3);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error(ErrorKind::InvalidInput, "not a number: '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_count(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error(ErrorKind::InvalidInput, "not a count: '" + std::string(s) + "'");
  return v;
}

using CsvRow = std::vector<std::string>;

// Plain comma-separated text, no quoting. First row is the header.
inline std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    CsvRow row;
    std::size_t start = 0;
    while (true) {
      auto comma = line.find(',', start);
      row.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Rendering

enum class TableFormat { markdown, csv };

inline std::string render_table(const ScalingReport& rep, TableFormat format) {
  std::ostringstream out;
  if (format == TableFormat::markdown) {
    out << "Nodes | Training Time(s) per Epoch | Linear Time(s) per Epoch | Scaling Efficiency\n";
    out << "--- | --- | --- | ---\n";
    for (const auto& r : rep.rows) {
      out << r.units << " | " << format_time(r.epoch_time_s) << " | " << format_time(r.linear_time_s)
          << " | ";
      if (r.efficiency) {
        out << format_fixed(*r.efficiency * 100.0, 1) << "%";
        if (r.superlinear) out << " (superlinear)";
      } else {
        out << "-";
      }
      out << "\n";
    }
  } else {
    out << "units,time_s,linear_s,efficiency\n";
    for (const auto& r : rep.rows) {
      out << r.units << "," << format_exact(r.epoch_time_s) << "," << format_exact(r.linear_time_s) << ","
          << (r.efficiency ? format_exact(*r.efficiency) : std::string()) << "\n";
    }
  }
  return out.str();
}

// Reads the (units, time) columns back out of a rendered CSV report, or out of
// a `workers,epoch_time_s` measurement file.
inline std::vector<ScalingRecord> parse_scaling_csv(std::string_view text) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw Error(ErrorKind::EmptyInput, "empty CSV");
  const auto& header = rows.front();
  if (header.size() < 2 || !((header[0] == "units" && header[1] == "time_s") ||
                             (header[0] == "workers" && header[1] == "epoch_time_s")))
    throw Error(ErrorKind::InvalidInput, "CSV header must start with units,time_s or workers,epoch_time_s");
  std::vector<ScalingRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() < 2) throw Error(ErrorKind::InvalidInput, "CSV row " + std::to_string(i) + " too short");
    out.push_back({parse_count(rows[i][0]), parse_double(rows[i][1])});
  }
  if (out.empty()) throw Error(ErrorKind::EmptyInput, "CSV has no data rows");
  return out;
}

// `workers,epoch_time_s`, 6 significant digits.
inline std::string render_records_csv(std::span<const ScalingRecord> records) {
  std::ostringstream out;
  out << "workers,epoch_time_s\n";
  for (const auto& r : records) out << r.units << "," << format_significant(r.epoch_time_s, 6) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Published tables

struct PublishedScalingRow {
  std::uint64_t units = 0;
  double time_s = 0;
  double linear_s = 0;
  std::optional<double> efficiency_pct;
};

struct PublishedPerfRow {
  std::uint64_t units = 0;
  double measured_pflops = 0;
  double pct_peak = 0;
};

inline const FixtureTable& fixture(int number) {
  for (const auto& t : kPaperTables)
    if (t.number == number) return t;
  throw Error(ErrorKind::InvalidInput, "no published table " + std::to_string(number));
}

inline std::vector<PublishedScalingRow> published_scaling_table(int number) {
  if (number < 1 || number > 6) throw Error(ErrorKind::InvalidInput, "scaling tables are 1-6");
  auto rows = parse_csv(fixture(number).csv);
  std::vector<PublishedScalingRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    PublishedScalingRow row{parse_count(r.at(0)), parse_double(r.at(1)), parse_double(r.at(2)), {}};
    if (r.at(3) != "-") row.efficiency_pct = parse_double(r[3]);
    out.push_back(row);
  }
  return out;
}

inline std::vector<PublishedPerfRow> published_perf_table() {
  auto rows = parse_csv(fixture(7).csv);
  std::vector<PublishedPerfRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i)
    out.push_back({parse_count(rows[i].at(0)), parse_double(rows[i].at(1)), parse_double(rows[i].at(2))});
  return out;
}

inline std::vector<ScalingRecord> published_records(int number) {
  std::vector<ScalingRecord> out;
  for (const auto& r : published_scaling_table(number)) out.push_back({r.units, r.time_s});
  return out;
}

enum class Column { linear_time, efficiency, pct_of_peak };

inline std::string_view to_string(Column c) {
  switch (c) {
    case Column::linear_time: return "linear_time";
    case Column::efficiency: return "efficiency";
    case Column::pct_of_peak: return "pct_of_peak";
  }
  return "?";
}

struct Discrepancy {
  int table = 0;
  std::uint64_t units = 0;
  Column column = Column::linear_time;
  double printed = 0;
  double recomputed = 0;
  // Relative deviation in percent for linear times, percentage points otherwise.
  double deviation = 0;
};

struct VerifyOptions {
  std::optional<int> table;
  double efficiency_tolerance_pp = 0.15;
  double linear_tolerance_pct = 0.5;
  double peak_tolerance_pp = 0.3;
  // fp64, nominal frequency: the normalization that reproduces Table 7.
  double node_peak_flops = topo::peak_flops(topo::sng_node(), topo::Precision::fp64, topo::FreqMode::nominal);
};

// Recomputes every derived cell from the time column and the base row and
// lists the printed cells that disagree beyond tolerance.
inline std::vector<Discrepancy> verify_published_tables(const VerifyOptions& opts = {}) {
  std::vector<Discrepancy> out;
  for (int t = 1; t <= 6; ++t) {
    if (opts.table && *opts.table != t) continue;
    const auto published = published_scaling_table(t);
    const auto records = published_records(t);
    const auto rep = compute_scaling_report(records);
    for (std::size_t i = 0; i < published.size(); ++i) {
      const auto& p = published[i];
      const auto& r = rep.rows[i];
      const double lin_dev = std::abs(r.linear_time_s - p.linear_s) / p.linear_s * 100.0;
      if (lin_dev > opts.linear_tolerance_pct)
        out.push_back({t, p.units, Column::linear_time, p.linear_s, r.linear_time_s, lin_dev});
      if (p.efficiency_pct && r.efficiency) {
        const double eff = *r.efficiency * 100.0;
        const double dev = std::abs(eff - *p.efficiency_pct);
        if (dev > opts.efficiency_tolerance_pp)
          out.push_back({t, p.units, Column::efficiency, *p.efficiency_pct, eff, dev});
      }
    }
  }
  if (!opts.table || *opts.table == 7) {
    const auto published = published_perf_table();
    std::vector<PerfInput> inputs;
    for (const auto& p : published) inputs.push_back({p.units, p.measured_pflops});
    const auto perf = compute_percent_of_peak(inputs, opts.node_peak_flops);
    for (std::size_t i = 0; i < published.size(); ++i) {
      const double pct = perf[i].pct_of_peak * 100.0;
      const double dev = std::abs(pct - published[i].pct_peak);
      if (dev > opts.peak_tolerance_pp)
        out.push_back({7, published[i].units, Column::pct_of_peak, published[i].pct_peak, pct, dev});
    }
  }
  return out;
}

inline std::string render_discrepancies(const std::vector<Discrepancy>& ds) {
  std::ostringstream out;
  out << "table,units,column,printed,recomputed,deviation\n";
  for (const auto& d : ds) {
    out << d.table << "," << d.units << "," << to_string(d.column) << "," << format_exact(d.printed) << ","
        << format_fixed(d.recomputed, 4) << "," << format_fixed(d.deviation, 4)
        << (d.column == Column::linear_time ? "%" : "pp") << "\n";
  }
  return out.str();
}

}  // namespace scalelab::report
