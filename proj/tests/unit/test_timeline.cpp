#include "doctest.h"
#include "wgpath/json_util.hpp"
#include "wgpath/timeline.hpp"

#include <cmath>
#include <random>

using namespace wgpath;

namespace {

// 1-D OU flow towards N(0, 1) from N(m0, s0^2): p_t = N(m(t), s(t)^2).
struct Ou1d {
  double m0 = 2.0;
  double s0 = 0.5;
  [[nodiscard]] double m(double t) const { return m0 * std::exp(-t); }
  [[nodiscard]] double s(double t) const {
    return std::sqrt(1.0 + (s0 * s0 - 1.0) * std::exp(-2.0 * t));
  }
  // |V|_{L2(p)} with V = -x - d/dx log p.
  [[nodiscard]] double speed(double t) const {
    const double sd = s(t);
    return std::sqrt(m(t) * m(t) + (1.0 / sd - sd) * (1.0 / sd - sd));
  }
  [[nodiscard]] double free_energy(double t) const {
    const double sd = s(t);
    return -0.5 * std::log(2.0 * M_PI * M_E * sd * sd) + 0.5 * (m(t) * m(t) + sd * sd);
  }
};

// Times at which the path has covered equal W2 arc length up to t_end.
std::vector<double> arclength_times(const Ou1d& ou, double t_end, long k) {
  const long fine = 200000;
  const double h = t_end / static_cast<double>(fine);
  std::vector<double> cum(static_cast<size_t>(fine + 1), 0.0);
  for (long i = 0; i < fine; ++i) {
    cum[static_cast<size_t>(i + 1)] = cum[static_cast<size_t>(i)] +
        h * ou.speed((static_cast<double>(i) + 0.5) * h);
  }
  std::vector<double> t(static_cast<size_t>(k + 1), 0.0);
  t.back() = t_end;
  long i = 0;
  for (long j = 1; j < k; ++j) {
    const double target = cum.back() * static_cast<double>(j) / static_cast<double>(k);
    while (cum[static_cast<size_t>(i + 1)] < target) ++i;
    const double frac = (target - cum[static_cast<size_t>(i)]) /
                        (cum[static_cast<size_t>(i + 1)] - cum[static_cast<size_t>(i)]);
    t[static_cast<size_t>(j)] = (static_cast<double>(i) + frac) * h;
  }
  return t;
}

}  // namespace

TEST_CASE("uniform speed gives uniform durations") {
  const long k = 5;
  const double v = 2.0;
  const double df = 3.0;
  const auto tl = recover_time(Vec::Constant(k + 1, v), 1.0 + df, 1.0);
  CHECK(tl.c == doctest::Approx(df / v));
  for (double dt : tl.dt) CHECK(dt == doctest::Approx(df / (static_cast<double>(k) * v * v)));
  CHECK(tl.t.back() == doctest::Approx(df / (v * v)));
  CHECK_FALSE(tl.censored);
  const auto mesh = export_mesh(tl);
  CHECK(mesh.steps == k);
  for (long j = 1; j <= k; ++j) {
    CHECK(mesh.mesh[static_cast<size_t>(j)] - mesh.mesh[static_cast<size_t>(j - 1)] ==
          doctest::Approx(tl.t.back() / static_cast<double>(k)));
  }
}

TEST_CASE("two-point example") {
  Vec v(2);
  v << 2.0, 1.0;
  const auto tl = recover_time(v, 3.0, 0.0);
  CHECK(tl.c == doctest::Approx(2.0));
  CHECK(tl.dt[0] == doctest::Approx(1.5));
  CHECK(tl.t[0] == 0.0);
  CHECK(tl.t[1] == doctest::Approx(1.5));
}

TEST_CASE("recover_time rejects non-descent paths") {
  CHECK_THROWS_AS(recover_time(Vec::Ones(4), 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(recover_time(Vec::Ones(4), 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("vanishing terminal speed censors the last segment") {
  Vec v(4);
  v << 3.0, 2.0, 1.0, 0.0;
  const auto tl = recover_time(v, 2.0, 0.0);
  CHECK(tl.censored);
  CHECK(tl.censored_segments == std::vector<bool>{false, false, true});
  CHECK(std::isinf(tl.dt[2]));
  CHECK(std::isinf(tl.t[3]));
  const auto mesh = export_mesh(tl);
  CHECK(mesh.mesh[3] == doctest::Approx(tl.t[2] + tl.dt[1]));
  CHECK(mesh.horizon == mesh.mesh[3]);
  CHECK_NOTHROW(mesh.validate());

  const auto j = to_json(tl);
  CHECK(j["dt"][2].is_null());
  CHECK(j["censored"] == true);
}

TEST_CASE("timeline JSON round trip preserves timestamps exactly") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  Vec v(8);
  for (long i = 0; i < 8; ++i) v(i) = u(rng);
  const auto tl = recover_time(v, 5.123456789, -0.3);
  const auto back = timeline_from_json(nlohmann::json::parse(to_json(tl).dump()));
  CHECK(back.c == tl.c);
  REQUIRE(back.t.size() == tl.t.size());
  for (size_t i = 0; i < tl.t.size(); ++i) CHECK(back.t[i] == tl.t[i]);
  for (size_t i = 0; i < tl.dt.size(); ++i) CHECK(back.dt[i] == tl.dt[i]);
  const auto m1 = export_mesh(tl);
  const auto m2 = export_mesh(back);
  for (size_t i = 0; i < m1.mesh.size(); ++i) CHECK(m1.mesh[i] == m2.mesh[i]);
  CHECK_THROWS_AS(timeline_from_json(nlohmann::json{{"c", 1.0}}), ConfigError);
}

TEST_CASE("timeline invariants on random speeds") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.05, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const long k = 2 + trial % 9;
    Vec v(k + 1);
    for (long i = 0; i <= k; ++i) v(i) = u(rng);
    const double f0 = u(rng) + 1.0;
    const double fk = f0 - u(rng);
    const auto tl = recover_time(v, f0, fk);
    CHECK(tl.t[0] == 0.0);
    CHECK(tl.c > 0.0);
    for (long j = 0; j < k; ++j) {
      CHECK(tl.dt[static_cast<size_t>(j)] > 0.0);
      CHECK(tl.t[static_cast<size_t>(j + 1)] > tl.t[static_cast<size_t>(j)]);
    }
    // Scaling every speed by lambda at fixed energy drop divides t_K by lambda^2.
    const double lambda = u(rng);
    const auto scaled = recover_time(lambda * v, f0, fk);
    CHECK(scaled.t.back() == doctest::Approx(tl.t.back() / (lambda * lambda)).epsilon(1e-12));
    // Slowing one interior layer lengthens its adjacent segments.
    const long i = 1 + trial % (k - 1);
    Vec slower = v;
    slower(i) *= 0.5;
    const auto tl2 = recover_time(slower, f0, fk);
    CHECK(tl2.dt[static_cast<size_t>(i)] > tl.dt[static_cast<size_t>(i)]);
    CHECK(tl2.dt[static_cast<size_t>(i - 1)] > tl.dt[static_cast<size_t>(i - 1)]);
  }
}

TEST_CASE("recovered times converge on the exact OU arc-length path") {
  const Ou1d ou;
  const double t_end = 2.0;
  std::vector<double> errs;
  const std::vector<long> ks = {4, 8, 16, 32};
  for (long k : ks) {
    const auto t = arclength_times(ou, t_end, k);
    Vec v(k + 1);
    for (long j = 0; j <= k; ++j) v(j) = ou.speed(t[static_cast<size_t>(j)]);
    const auto tl = recover_time(v, ou.free_energy(0.0), ou.free_energy(t_end));
    double err = 0.0;
    for (long j = 1; j <= k; ++j) {
      err = std::max(err, std::abs(tl.t[static_cast<size_t>(j)] - t[static_cast<size_t>(j)]));
    }
    errs.push_back(err);
  }
  const double slope = std::log(errs.front() / errs.back()) / std::log(32.0 / 4.0);
  CHECK(slope >= 1.0);
  CHECK(errs.back() < 1e-2);
}
