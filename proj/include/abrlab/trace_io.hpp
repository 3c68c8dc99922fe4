#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "abrlab/types.hpp"

namespace abrlab {

namespace csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double number(const std::string& field, const std::string& file, int lineno) {
  const char* b = field.data();
  const char* e = b + field.size();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e)
    throw ParseError(file + ":" + std::to_string(lineno) + ": malformed number '" + field + "'");
  return v;
}

// Shortest representation that round-trips a double exactly.
inline std::string format(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(buf, buf + std::string(buf).size(), back);
    if (back == v) break;
  }
  return buf;
}

}  // namespace csv

inline constexpr const char* kTraceHeader = "t_s,bandwidth_mbps,prop_delay_ms";

// Trace CSV: header `t_s,bandwidth_mbps,prop_delay_ms`, one row per second.
inline NetTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("trace: cannot open '" + path + "'");
  NetTrace trace;
  trace.id = std::filesystem::path(path).stem().string();
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path + ":1: empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader)
    throw ParseError(path + ":1: expected header '" + std::string(kTraceHeader) + "'");
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    if (f.size() != 3)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 columns");
    BandwidthSample s;
    s.t_s = csv::number(f[0], path, lineno);
    s.bandwidth_mbps = csv::number(f[1], path, lineno);
    s.prop_delay_ms = csv::number(f[2], path, lineno);
    if (s.bandwidth_mbps < 0.0)
      throw ParseError(path + ":" + std::to_string(lineno) + ": negative bandwidth");
    if (s.prop_delay_ms < 0.0)
      throw ParseError(path + ":" + std::to_string(lineno) + ": negative prop delay");
    if (!trace.samples.empty() && s.t_s <= trace.samples.back().t_s)
      throw ParseError(path + ":" + std::to_string(lineno) + ": non-monotonic timestamp");
    trace.samples.push_back(s);
  }
  trace.validate();
  return trace;
}

inline void save_trace(const NetTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw DataError("trace: cannot write '" + path + "'");
  out << kTraceHeader << "\n";
  for (const auto& s : trace.samples)
    out << csv::format(s.t_s) << "," << csv::format(s.bandwidth_mbps) << ","
        << csv::format(s.prop_delay_ms) << "\n";
}

// Feedback CSV for the `estimate` subcommand: t_s,throughput_mbps,loss_ratio,delay_ms
inline std::vector<LinkFeedback> load_feedback(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("feedback: cannot open '" + path + "'");
  std::vector<LinkFeedback> out;
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.find("t_s") == 0) continue;  // optional header
    }
    const auto f = csv::split(line);
    if (f.size() < 4)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 4 columns");
    LinkFeedback fb;
    fb.t_s = csv::number(f[0], path, lineno);
    fb.throughput_mbps = csv::number(f[1], path, lineno);
    fb.loss_ratio = csv::number(f[2], path, lineno);
    fb.delay_ms = csv::number(f[3], path, lineno);
    if (f.size() > 4) fb.jitter_ms = csv::number(f[4], path, lineno);
    fb.validate();
    out.push_back(fb);
  }
  if (out.empty()) throw ParseError(path + ": no feedback rows");
  return out;
}

}  // namespace abrlab
