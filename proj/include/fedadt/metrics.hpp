#pragma once

// Metrics log: CSV persistence and the derived report columns.
//
// Column order is fixed:
//   virtual_time,round,test_accuracy,test_loss,mean_staleness,max_staleness,corrections_applied
// Reals are written in shortest round-trip form, so parse(write(x)) == x.
//
// Round lookups use last-observation-carried-forward: the accuracy at round r
// is the one from the last evaluation with round <= r. A round earlier than
// the first evaluation maps to the first (initial) evaluation.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "fedadt/error.hpp"
#include "fedadt/federation.hpp"

namespace fedadt {

struct MetricsRecord {
  double virtual_time = 0.0;
  Timestamp round = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double mean_staleness = 0.0;  // over arrivals since the previous record
  Timestamp max_staleness = 0;  // likewise
  std::uint64_t corrections_applied = 0;  // cumulative

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr const char* kMetricsHeader =
    "virtual_time,round,test_accuracy,test_loss,mean_staleness,max_staleness,corrections_applied";

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_real: to_chars failed");
  return std::string(buf, end);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << detail::format_real(r.virtual_time) << ',' << r.round << ','
       << detail::format_real(r.test_accuracy) << ',' << detail::format_real(r.test_loss) << ','
       << detail::format_real(r.mean_staleness) << ',' << r.max_staleness << ','
       << r.corrections_applied << '\n';
  }
}

inline std::vector<MetricsRecord> read_metrics_csv(std::istream& is,
                                                   const std::string& name = "<metrics>") {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(name, "empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader)
    throw ParseError(name, "unexpected header '" + line + "' (schema mismatch)");
  std::vector<MetricsRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    auto bad = [&](const char* what) {
      return ParseError(name, "line " + std::to_string(line_no) + ": " + what);
    };
    if (f.size() != 7) throw bad("expected 7 fields");
    MetricsRecord r;
    if (!detail::parse_number(f[0], r.virtual_time) || !detail::parse_number(f[1], r.round) ||
        !detail::parse_number(f[2], r.test_accuracy) ||
        !detail::parse_number(f[3], r.test_loss) ||
        !detail::parse_number(f[4], r.mean_staleness) ||
        !detail::parse_number(f[5], r.max_staleness) ||
        !detail::parse_number(f[6], r.corrections_applied))
      throw bad("malformed number");
    if (!rows.empty() && !(r.virtual_time > rows.back().virtual_time))
      throw bad("virtual_time is not strictly increasing");
    rows.push_back(r);
  }
  return rows;
}

inline void save_metrics(const std::string& path, const std::vector<MetricsRecord>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write metrics file " + path);
  write_metrics_csv(os, rows);
  if (!os) throw std::runtime_error("write failed for " + path);
}

inline std::vector<MetricsRecord> load_metrics(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open metrics file " + path);
  return read_metrics_csv(is, path);
}

// Earliest virtual time whose accuracy reaches `target`; nullopt means Fail.
inline std::optional<double> time_to_target(const std::vector<MetricsRecord>& rows,
                                            double target) {
  for (const auto& r : rows)
    if (r.test_accuracy >= target) return r.virtual_time;
  return std::nullopt;
}

inline double accuracy_at_round(const std::vector<MetricsRecord>& rows, Timestamp round) {
  if (rows.empty()) throw InvalidInput("accuracy_at_round: empty log");
  double acc = rows.front().test_accuracy;
  for (const auto& r : rows) {
    if (r.round > round) break;
    acc = r.test_accuracy;
  }
  return acc;
}

struct ReportRow {
  std::string run;
  double final_accuracy = 0.0;
  std::optional<double> time_to_target;
  double accuracy_at_tg = 0.0;
  double accuracy_at_10tg = 0.0;
};

inline std::vector<ReportRow> report(
    const std::vector<std::pair<std::string, std::vector<MetricsRecord>>>& runs, double target,
    Timestamp warmup_rounds) {
  if (runs.empty()) throw InvalidInput("report: no runs");
  std::vector<ReportRow> out;
  for (const auto& [name, rows] : runs) {
    if (rows.empty()) throw ParseError(name, "metrics log has no rows");
    ReportRow r;
    r.run = name;
    r.final_accuracy = rows.back().test_accuracy;
    r.time_to_target = time_to_target(rows, target);
    r.accuracy_at_tg = accuracy_at_round(rows, warmup_rounds);
    r.accuracy_at_10tg = accuracy_at_round(rows, 10 * warmup_rounds);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << "run,final_accuracy,time_to_target,accuracy_at_tg,accuracy_at_10tg\n";
  for (const auto& r : rows) {
    os << r.run << ',' << detail::format_real(r.final_accuracy) << ','
       << (r.time_to_target ? detail::format_real(*r.time_to_target) : std::string("Fail"))
       << ',' << detail::format_real(r.accuracy_at_tg) << ','
       << detail::format_real(r.accuracy_at_10tg) << '\n';
  }
}

inline void write_report_text(std::ostream& os, const std::vector<ReportRow>& rows, double target,
                              Timestamp warmup_rounds) {
  std::size_t width = 3;
  for (const auto& r : rows) width = std::max(width, r.run.size());
  std::ostringstream tt;
  tt << "time@" << target;
  os << std::left << std::setw(static_cast<int>(width)) << "run" << "  " << std::right
     << std::setw(10) << "final_acc" << "  " << std::setw(14) << tt.str() << "  "
     << std::setw(12) << ("acc@" + std::to_string(warmup_rounds)) << "  " << std::setw(12)
     << ("acc@" + std::to_string(10 * warmup_rounds)) << '\n';
  for (const auto& r : rows) {
    std::ostringstream t;
    if (r.time_to_target)
      t << std::fixed << std::setprecision(1) << *r.time_to_target;
    else
      t << "Fail";
    os << std::left << std::setw(static_cast<int>(width)) << r.run << "  " << std::right
       << std::fixed << std::setprecision(4) << std::setw(10) << r.final_accuracy << "  "
       << std::setw(14) << t.str() << "  " << std::setw(12) << r.accuracy_at_tg << "  "
       << std::setw(12) << r.accuracy_at_10tg << '\n';
  }
}

}  // namespace fedadt
