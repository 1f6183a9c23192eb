#include "wgpath/timeline.hpp"

#include "wgpath/json_util.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace wgpath {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

RecoveredTimeline recover_time(const PathDiagnostics& diag, double F0, double FK, double v_floor) {
  return recover_time(diag.v, F0, FK, v_floor);
}

RecoveredTimeline recover_time(const Vec& v, double F0, double FK, double v_floor) {
  const long k = static_cast<long>(v.size()) - 1;
  if (k < 1) throw std::invalid_argument("recover_time: need at least one segment");
  if (!(F0 > FK)) {
    throw std::invalid_argument("recover_time: free energy does not decrease along the path");
  }
  const double dtau = 1.0 / static_cast<double>(k);
  double denom = 0.0;
  for (long j = 1; j <= k; ++j) denom += 0.5 * (v(j - 1) + v(j)) * dtau;
  RecoveredTimeline tl;
  tl.F0 = F0;
  tl.FK = FK;
  tl.c = (F0 - FK) / denom;
  tl.t.push_back(0.0);
  for (long j = 1; j <= k; ++j) {
    const bool cut = v(j - 1) <= v_floor || v(j) <= v_floor;
    const double dt = cut ? kInf : 0.5 * tl.c * dtau * (1.0 / v(j - 1) + 1.0 / v(j));
    tl.dt.push_back(dt);
    tl.censored_segments.push_back(cut);
    tl.censored = tl.censored || cut;
    tl.t.push_back(tl.t.back() + dt);
  }
  return tl;
}

PhysicalTimeConfig export_mesh(const RecoveredTimeline& tl) {
  PhysicalTimeConfig cfg;
  cfg.steps = tl.segments();
  cfg.mesh.push_back(0.0);
  double last = 0.0;
  for (long j = 0; j < tl.segments(); ++j) {
    double dt = tl.dt[static_cast<size_t>(j)];
    if (tl.censored_segments[static_cast<size_t>(j)]) {
      if (last <= 0.0) throw std::invalid_argument("export_mesh: first segment is censored");
      dt = last;
    }
    last = dt;
    cfg.mesh.push_back(cfg.mesh.back() + dt);
  }
  cfg.horizon = cfg.mesh.back();
  return cfg;
}

nlohmann::json to_json(const RecoveredTimeline& tl) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json t = nlohmann::json::array();
  nlohmann::json dt = nlohmann::json::array();
  for (double x : tl.t) t.push_back(num(x));
  for (double x : tl.dt) dt.push_back(num(x));
  return {{"c", tl.c}, {"t", t}, {"dt", dt}, {"censored", tl.censored},
          {"F0", tl.F0}, {"FK", tl.FK}};
}

RecoveredTimeline timeline_from_json(const nlohmann::json& j) {
  const JsonObject o(j, "timeline");
  RecoveredTimeline tl;
  tl.c = o.get<double>("c");
  tl.censored = o.get<bool>("censored");
  tl.F0 = o.get_or<double>("F0", 0.0);
  tl.FK = o.get_or<double>("FK", 0.0);
  for (const auto& x : o.raw("t")) tl.t.push_back(x.is_null() ? kInf : x.get<double>());
  for (const auto& x : o.raw("dt")) {
    tl.dt.push_back(x.is_null() ? kInf : x.get<double>());
    tl.censored_segments.push_back(x.is_null());
  }
  o.finish();
  if (tl.t.size() != tl.dt.size() + 1) throw ConfigError("timeline: t needs one more entry than dt");
  return tl;
}

}  // namespace wgpath
