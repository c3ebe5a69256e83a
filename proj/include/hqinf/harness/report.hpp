#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hqinf/queue_sim.hpp"

namespace hqinf::harness {

/// How a point statistic is judged:
///   abs   |estimate - target| < tolerance
///   rel   |estimate - target| / |target| < tolerance
///   below estimate < tolerance (target unused)
///   at_least estimate >= tolerance
///   less  estimate < target (strict)
///   info  never fails
enum class CheckKind { abs, rel, below, at_least, less, info };

inline const char* to_string(CheckKind k) {
  switch (k) {
    case CheckKind::abs: return "abs";
    case CheckKind::rel: return "rel";
    case CheckKind::below: return "below";
    case CheckKind::at_least: return "at_least";
    case CheckKind::less: return "less";
    case CheckKind::info: return "info";
  }
  return "?";
}

struct PointStat {
  std::string label;
  long n = 0;
  double t = std::numeric_limits<double>::quiet_NaN();
  double y = std::numeric_limits<double>::quiet_NaN();
  double estimate = 0.0;
  double target = std::numeric_limits<double>::quiet_NaN();
  double abs_err = std::numeric_limits<double>::quiet_NaN();
  double rel_err = std::numeric_limits<double>::quiet_NaN();
  double tolerance = std::numeric_limits<double>::quiet_NaN();
  CheckKind kind = CheckKind::info;
  bool pass = true;
};

inline PointStat judge(std::string label, long n, double t, double y, double estimate, double target, double tolerance,
                       CheckKind kind) {
  PointStat p;
  p.label = std::move(label);
  p.n = n;
  p.t = t;
  p.y = y;
  p.estimate = estimate;
  p.target = target;
  p.tolerance = tolerance;
  p.kind = kind;
  if (std::isfinite(target)) {
    p.abs_err = std::abs(estimate - target);
    if (target != 0.0) p.rel_err = p.abs_err / std::abs(target);
  }
  switch (kind) {
    case CheckKind::abs: p.pass = p.abs_err < tolerance; break;
    case CheckKind::rel: p.pass = p.rel_err < tolerance; break;
    case CheckKind::below: p.pass = estimate < tolerance; break;
    case CheckKind::at_least: p.pass = estimate >= tolerance; break;
    case CheckKind::less: p.pass = estimate < target; break;
    case CheckKind::info: p.pass = true; break;
  }
  return p;
}

struct LabeledSurface {
  long n = 0;
  TwoParamField field;
};

struct ExperimentReport {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string config_echo;
  std::vector<PointStat> points;
  std::vector<LabeledSurface> surfaces;
  double runtime_seconds = 0.0;

  bool verdict() const {
    for (const auto& p : points)
      if (!p.pass) return false;
    return true;
  }
  std::size_t failures() const {
    std::size_t f = 0;
    for (const auto& p : points) f += p.pass ? 0 : 1;
    return f;
  }
  void add(PointStat p) { points.push_back(std::move(p)); }
};

namespace detail {

inline nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["experiment"] = r.experiment;
  j["seed"] = r.seed;
  j["verdict"] = r.verdict() ? "pass" : "fail";
  j["failures"] = r.failures();
  j["runtime_seconds"] = r.runtime_seconds;
  j["config"] = r.config_echo;
  j["points"] = nlohmann::json::array();
  for (const auto& p : r.points)
    j["points"].push_back({{"label", p.label},
                           {"n", p.n},
                           {"t", detail::number(p.t)},
                           {"y", detail::number(p.y)},
                           {"estimate", detail::number(p.estimate)},
                           {"target", detail::number(p.target)},
                           {"abs_err", detail::number(p.abs_err)},
                           {"rel_err", detail::number(p.rel_err)},
                           {"tolerance", detail::number(p.tolerance)},
                           {"kind", to_string(p.kind)},
                           {"pass", p.pass}});
  j["surfaces"] = nlohmann::json::array();
  for (const auto& s : r.surfaces) j["surfaces"].push_back({{"label", s.field.label}, {"n", s.n}});
  return j;
}

/// label,kind,n,t,y,estimate,target,abs_err,rel_err,tolerance,pass
inline void write_summary_csv(std::ostream& os, const ExperimentReport& r) {
  os << "label,kind,n,t,y,estimate,target,abs_err,rel_err,tolerance,pass\n";
  for (const auto& p : r.points)
    os << p.label << ',' << to_string(p.kind) << ',' << p.n << ',' << format_number(p.t) << ','
       << format_number(p.y) << ',' << format_number(p.estimate) << ',' << format_number(p.target) << ','
       << format_number(p.abs_err) << ',' << format_number(p.rel_err) << ',' << format_number(p.tolerance) << ','
       << (p.pass ? 1 : 0) << '\n';
}

/// report.json, summary.csv and plotdata/<label>_n<n>.csv under out_dir.
inline void emit(const ExperimentReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "plotdata");
  {
    auto out = detail::open_out(out_dir / "report.json");
    out << to_json(r).dump(2) << '\n';
  }
  {
    auto out = detail::open_out(out_dir / "summary.csv");
    write_summary_csv(out, r);
  }
  for (const auto& s : r.surfaces) {
    auto out = detail::open_out(out_dir / "plotdata" / (s.field.label + "_n" + std::to_string(s.n) + ".csv"));
    write_field_csv(out, s.field);
  }
}

}  // namespace hqinf::harness
