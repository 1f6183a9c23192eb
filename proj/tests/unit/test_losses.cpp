#include "doctest.h"
#include "analytic_paths.hpp"
#include "wgpath/losses.hpp"

#include <cmath>
#include <random>

using namespace wgpath;
using namespace wgpath::testing;

namespace {

std::vector<Mat> scalars(std::initializer_list<double> xs) {
  std::vector<Mat> out;
  for (double x : xs) out.emplace_back(Mat::Constant(1, 1, x));
  return out;
}

PathDiagnostics diag_of(const Vec& d, const Vec& v) {
  PathDiagnostics p;
  p.d = d;
  p.v = v;
  return p;
}

}  // namespace

TEST_CASE("geometric loss and penalties on small vectors") {
  CHECK(geometric_loss(scalars({0.0, 0.0}), scalars({1.0, 2.0, 3.0}))(0, 0) == 0.0);
  CHECK(geometric_loss(scalars({1.0, 1.0}), scalars({2.0, 2.0, 2.0}))(0, 0) == doctest::Approx(4.0));
  CHECK(arc_length_penalty(scalars({0.3, 0.3, 0.3}))(0, 0) < 1e-15);
  CHECK(arc_length_penalty(scalars({1.0, 3.0}))(0, 0) == doctest::Approx(0.5));
  CHECK(arc_action_penalty(scalars({5.0, 4.0, 3.0, 2.0}))(0, 0) == doctest::Approx(0.0));
  CHECK(arc_action_penalty(scalars({3.0, 1.0, 0.0}))(0, 0) == doctest::Approx(1.0 / 6.0));
  // Degenerate paths give zero rather than NaN.
  CHECK(arc_length_penalty(scalars({0.0, 0.0}))(0, 0) == 0.0);
  CHECK(arc_action_penalty(scalars({1.0, 1.0, 1.0}))(0, 0) == 0.0);
}

TEST_CASE("arc-length penalty matches a direct recomputation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const long k = 2 + trial;
    std::vector<Mat> d;
    double sum = 0.0;
    std::vector<double> raw;
    for (long i = 0; i < k; ++i) {
      raw.push_back(u(rng));
      sum += raw.back();
      d.emplace_back(Mat::Constant(1, 1, raw.back()));
    }
    const double mean = sum / k;
    double var = 0.0;
    for (double x : raw) var += (x - mean) * (x - mean);
    var /= k;
    CHECK(arc_length_penalty(d)(0, 0) == doctest::Approx(var / mean).epsilon(1e-12));
  }
}

TEST_CASE("total geometric loss combines its parts") {
  Vec d(3);
  d << 0.5, 0.7, 0.2;
  Vec v(4);
  v << 3.0, 2.0, 1.5, 0.5;
  const auto diag = diag_of(d, v);
  const double j = 0.5 * 2.5 + 0.7 * 1.75 + 0.2 * 1.0;
  CHECK(geometric_loss(diag) == doctest::Approx(j));
  GeometricConfig none{0.0, 0.0, ParametrizationPenalty::ArcLength};
  CHECK(total_geometric_loss(diag, 4.0, none) == doctest::Approx(j));
  GeometricConfig cfg{2.0, 3.0, ParametrizationPenalty::ArcLength};
  const double mean = d.mean();
  const double pen = (d.array() - mean).square().mean() / mean;
  CHECK(total_geometric_loss(diag, -1.5, cfg) == doctest::Approx(j - 3.0 + 3.0 * pen));
  PathDiagnostics with_f = diag;
  with_f.free_energy = Vec(4);
  with_f.free_energy << 4.0, 2.0, 1.0, 0.0;
  GeometricConfig action{1.0, 1.0, ParametrizationPenalty::ArcAction};
  const double drops_mean = -4.0 / 3.0;
  const double drops_var = ((4.0 / 3.0 - 2.0) * (4.0 / 3.0 - 2.0) + (1.0 / 3.0) * (1.0 / 3.0) * 2.0) / 3.0;
  CHECK(total_geometric_loss(with_f, 0.0, action) ==
        doctest::Approx(j + drops_var / std::abs(drops_mean)));
}

TEST_CASE("physical-time loss trivial cases") {
  PhysicalTimeConfig cfg;
  cfg.horizon = 2.0;
  cfg.steps = 4;
  Rng rng(1);
  const Mat z = BaseDistribution::standard_gaussian(2).sample(50, rng);
  std::vector<Mat> same(5, z);
  std::vector<Mat> zero(5, Mat::Zero(50, 2));
  CHECK(physical_time_loss(same, zero, cfg)(0, 0) == 0.0);

  Vec c(2);
  c << 0.3, -1.2;
  std::vector<Mat> moving;
  std::vector<Mat> constant;
  for (long k = 0; k <= 4; ++k) {
    moving.emplace_back(z.rowwise() + (0.5 * k) * c.transpose());
    constant.emplace_back(Mat(50, 2).rowwise() = c.transpose());
  }
  CHECK(physical_time_loss(moving, constant, cfg)(0, 0) < 1e-28);
}

TEST_CASE("physical-time loss of the exact OU trajectory matches a scalar computation") {
  const long k = 4;
  const long n = 64;
  Rng rng(8);
  const Mat z = BaseDistribution::standard_gaussian(1).sample(n, rng);
  PhysicalTimeConfig cfg;
  cfg.steps = k;
  std::vector<Mat> pos;
  std::vector<Mat> fields;
  for (long j = 0; j <= k; ++j) {
    pos.emplace_back(z * std::exp(-0.25 * j));
    fields.emplace_back(-pos.back());
  }
  const double loss = physical_time_loss(pos, fields, cfg)(0, 0);
  double expect = 0.0;
  for (long j = 1; j <= k; ++j) {
    const double a = std::exp(-0.25 * (j - 1));
    const double b = std::exp(-0.25 * j);
    const double eps = (b - a) / 0.25 + 0.5 * (a + b);
    double zz = 0.0;
    for (long i = 0; i < n; ++i) zz += z(i, 0) * z(i, 0);
    expect += 0.25 * eps * eps * zz / n;
  }
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("physical-time loss with explicit mesh and weights") {
  PhysicalTimeConfig cfg;
  cfg.steps = 2;
  cfg.mesh = {0.0, 0.5, 2.0};
  cfg.horizon = 2.0;
  cfg.weights = {1.0, 3.0};
  CHECK_NOTHROW(cfg.validate());
  const std::vector<Mat> pos = scalars({0.0, 1.0, 1.0});
  const std::vector<Mat> vel = scalars({0.0, 0.0, 0.0});
  // Segment 1: dt 0.5, increment 2 per unit time; segment 2 is still.
  CHECK(physical_time_loss(pos, vel, cfg)(0, 0) == doctest::Approx(0.5 * 4.0));
  PhysicalTimeConfig bad = cfg;
  bad.mesh = {0.0, 1.0, 1.0};
  CHECK_THROWS(bad.validate());
  bad.mesh = {0.1, 1.0, 2.0};
  CHECK_THROWS(bad.validate());
  PhysicalTimeConfig bad_w = cfg;
  bad_w.weights = {1.0, -1.0};
  CHECK_THROWS(bad_w.validate());
}

TEST_CASE("geometric loss converges with order two on the Gaussian slide") {
  const double exact = slide_geometric_integral();
  std::vector<double> ks;
  std::vector<double> errs;
  for (long k : {4L, 8L, 16L, 32L}) {
    ks.push_back(static_cast<double>(k));
    errs.push_back(std::abs(slide_geometric_loss(k, slide_mean) - exact));
  }
  CHECK(loglog_slope(ks, errs) == doctest::Approx(-2.0).epsilon(0.15));
}

TEST_CASE("geometric loss is nearly invariant under reparametrization") {
  const double a = slide_geometric_loss(64, slide_mean);
  const double b = slide_geometric_loss(64, [](double t) { return 3.0 * t; });
  const double c = slide_geometric_loss(64, [](double t) { return 3.0 * t * t * (3.0 - 2.0 * t); });
  CHECK(std::abs(a - b) / b <= 0.02);
  CHECK(std::abs(a - c) / c <= 0.02);
}

TEST_CASE("CN defect of the exact OU trajectory decays with order four") {
  std::vector<double> ks;
  std::vector<double> losses;
  for (long k : {4L, 8L, 16L}) {
    ks.push_back(static_cast<double>(k));
    losses.push_back(ou_exact_cn_loss(k, 20000, 5));
  }
  CHECK(loglog_slope(ks, losses) == doctest::Approx(-4.0).epsilon(0.125));
}

TEST_CASE("geometric action bounds the energy drop on the exact OU path") {
  // 1-D OU towards N(0, 1) from N(2, 0.25); layers are exact Gaussians at
  // uniform times, particles are standardized quantiles.
  const long k = 64;
  const double t_end = 3.0;
  const long n = 4000;
  const Vec z = standardized_normal_quantiles(n);
  FreeEnergySpec spec{InternalEnergySpec::entropy(), PotentialSpec::quadratic(Vec::Zero(1), Mat::Identity(1, 1)),
                      KernelSpec::none(), 1.0};
  std::vector<Mat> pos;
  std::vector<Mat> fields;
  Vec f(k + 1);
  for (long j = 0; j <= k; ++j) {
    const double t = t_end * j / k;
    const double m = 2.0 * std::exp(-t);
    const double s = std::sqrt(1.0 - 0.75 * std::exp(-2.0 * t));
    const Mat x = (m + s * z.array()).matrix();
    const Vec lq = (-0.5 * z.array().square() - std::log(s) - 0.5 * std::log(2.0 * M_PI)).matrix();
    const Mat score = -z / s;
    pos.push_back(x);
    fields.push_back(empirical_velocity(x, lq, score, spec));
    f(j) = free_energy_estimate(x, lq, spec);
  }
  PathBatch b;
  b.z = pos[0];
  b.positions = pos;
  b.layer_logdets.assign(k, Vec::Zero(n));
  const auto diag = segment_and_velocity_norms(b, fields);
  const double j_geo = geometric_loss(diag);
  const double drop = f(0) - f(k);
  CHECK(j_geo >= drop * (1.0 - 1e-3));
  CHECK(j_geo <= drop * 1.01);
  for (const auto& c : diag.cosine) CHECK(*c > 0.999);
}

TEST_CASE("recorded and plain losses agree") {
  Rng rng(2);
  std::vector<Mat> pos;
  std::vector<Mat> vel;
  for (int k = 0; k <= 3; ++k) {
    pos.push_back(BaseDistribution::standard_gaussian(2).sample(20, rng));
    vel.push_back(BaseDistribution::standard_gaussian(2).sample(20, rng));
  }
  PhysicalTimeConfig cfg;
  cfg.steps = 3;
  cfg.horizon = 0.7;
  ad::Tape t;
  std::vector<ad::Var> pv;
  std::vector<ad::Var> vv;
  std::vector<ad::Var> dv;
  std::vector<ad::Var> nv;
  std::vector<Mat> dm;
  std::vector<Mat> nm;
  for (int k = 0; k <= 3; ++k) {
    pv.push_back(t.constant(pos[static_cast<size_t>(k)]));
    vv.push_back(t.constant(vel[static_cast<size_t>(k)]));
    nv.push_back(velocity_norm(vv.back()));
    nm.push_back(velocity_norm(vel[static_cast<size_t>(k)]));
    if (k > 0) {
      dv.push_back(segment_length(pv[static_cast<size_t>(k - 1)], pv.back()));
      dm.push_back(segment_length(pos[static_cast<size_t>(k - 1)], pos[static_cast<size_t>(k)]));
    }
  }
  CHECK(physical_time_loss(pv, vv, cfg).scalar() ==
        doctest::Approx(physical_time_loss(pos, vel, cfg)(0, 0)).epsilon(1e-14));
  CHECK(geometric_loss(dv, nv).scalar() == doctest::Approx(geometric_loss(dm, nm)(0, 0)).epsilon(1e-14));
  CHECK(arc_length_penalty(dv).scalar() == doctest::Approx(arc_length_penalty(dm)(0, 0)).epsilon(1e-14));
  CHECK(arc_action_penalty(nv).scalar() == doctest::Approx(arc_action_penalty(nm)(0, 0)).epsilon(1e-14));
}
