#pragma once

// Physical time along a geometric path. The Wasserstein speed is c per unit of
// the path parameter, and dt/dtau = c / |V|; the segment durations follow from
// a midpoint rule in 1/|V|.

#include "wgpath/losses.hpp"
#include "wgpath/velocity.hpp"

#include "json.hpp"

#include <vector>

namespace wgpath {

inline constexpr double kVelocityFloor = 1e-8;

struct RecoveredTimeline {
  double c = 0.0;
  std::vector<double> t;   // K+1 timestamps; +inf after a censored segment
  std::vector<double> dt;  // K durations; +inf for censored segments
  std::vector<bool> censored_segments;
  bool censored = false;
  double F0 = 0.0;
  double FK = 0.0;
  [[nodiscard]] long segments() const { return static_cast<long>(dt.size()); }
};

/// Throws std::invalid_argument unless F0 > FK.
RecoveredTimeline recover_time(const PathDiagnostics& diag, double F0, double FK,
                               double v_floor = kVelocityFloor);
RecoveredTimeline recover_time(const Vec& v, double F0, double FK, double v_floor = kVelocityFloor);

/// Explicit mesh for the physical-time loss. A censored segment takes the
/// duration of the segment before it.
PhysicalTimeConfig export_mesh(const RecoveredTimeline& tl);

/// {c, t, dt, censored}; censored entries are written as null.
nlohmann::json to_json(const RecoveredTimeline& tl);
RecoveredTimeline timeline_from_json(const nlohmann::json& j);

}  // namespace wgpath
