#include "wgpath/oracles.hpp"

#include "wgpath/base_distribution.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace wgpath {

namespace {

constexpr double kEigFloor = 1e-12;

void check_pair(const GaussianState& a, const GaussianState& b, const char* who) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

// Eigenvalues floored; sqrt of the floored spectrum.
Mat sym_function(const Mat& s, const std::function<double(double)>& f) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("symmetric eigendecomposition failed");
  Vec ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = f(ev(i));
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

void GaussianState::validate() const {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw std::invalid_argument("GaussianState: covariance shape does not match the mean");
  }
  if (!covariance.isApprox(covariance.transpose(), 1e-10) &&
      (covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw std::invalid_argument("GaussianState: covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(covariance, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= kEigFloor) {
    throw std::invalid_argument("GaussianState: covariance is not positive definite");
  }
}

GaussianState GaussianState::fit(const Mat& x) {
  if (x.rows() < 2) throw std::invalid_argument("GaussianState::fit: need at least two samples");
  GaussianState g;
  g.mean = x.colwise().mean().transpose();
  const Mat c = x.rowwise() - g.mean.transpose();
  g.covariance = c.transpose() * c / static_cast<double>(x.rows() - 1);
  return g;
}

GaussianState ou_exact(double t, const GaussianState& initial, const GaussianState& target) {
  check_pair(initial, target, "ou_exact");
  if (t < 0.0) throw std::invalid_argument("ou_exact: negative time");
  const Mat& s = target.covariance;
  const Mat a = s.inverse();
  const Mat e = (-t * a).exp();
  GaussianState out;
  out.mean = target.mean + e * (initial.mean - target.mean);
  const Mat cov = e * initial.covariance * e.transpose() + s - e * s * e.transpose();
  out.covariance = 0.5 * (cov + cov.transpose());
  return out;
}

std::vector<std::vector<long>> diagonal_blocks(const Mat& s, double tol) {
  const long n = s.rows();
  std::vector<long> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0L);
  std::function<long(long)> find = [&](long i) {
    while (parent[static_cast<size_t>(i)] != i) i = parent[static_cast<size_t>(i)];
    return i;
  };
  for (long i = 0; i < n; ++i) {
    for (long j = i + 1; j < n; ++j) {
      if (std::abs(s(i, j)) > tol || std::abs(s(j, i)) > tol) {
        parent[static_cast<size_t>(find(j))] = find(i);
      }
    }
  }
  std::vector<std::vector<long>> blocks;
  std::vector<long> slot(static_cast<size_t>(n), -1);
  for (long i = 0; i < n; ++i) {
    const long r = find(i);
    if (slot[static_cast<size_t>(r)] < 0) {
      slot[static_cast<size_t>(r)] = static_cast<long>(blocks.size());
      blocks.emplace_back();
    }
    blocks[static_cast<size_t>(slot[static_cast<size_t>(r)])].push_back(i);
  }
  return blocks;
}

GaussianState ou_exact_blockwise(double t, const GaussianState& initial, const GaussianState& target) {
  check_pair(initial, target, "ou_exact_blockwise");
  if (t < 0.0) throw std::invalid_argument("ou_exact_blockwise: negative time");
  const auto blocks = diagonal_blocks(target.covariance);
  std::vector<long> owner(static_cast<size_t>(target.dim()));
  for (size_t b = 0; b < blocks.size(); ++b) {
    for (long i : blocks[b]) owner[static_cast<size_t>(i)] = static_cast<long>(b);
  }
  for (long i = 0; i < target.dim(); ++i) {
    for (long j = 0; j < target.dim(); ++j) {
      if (owner[static_cast<size_t>(i)] != owner[static_cast<size_t>(j)] &&
          initial.covariance(i, j) != 0.0) {
        throw std::invalid_argument("ou_exact_blockwise: initial covariance couples separate blocks");
      }
    }
  }
  GaussianState out{target.mean, Mat::Zero(target.dim(), target.dim())};
  for (const auto& idx : blocks) {
    const long m = static_cast<long>(idx.size());
    Mat s(m, m);
    Mat c0(m, m);
    Vec dm(m);
    for (long i = 0; i < m; ++i) {
      dm(i) = initial.mean(idx[static_cast<size_t>(i)]) - target.mean(idx[static_cast<size_t>(i)]);
      for (long j = 0; j < m; ++j) {
        s(i, j) = target.covariance(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        c0(i, j) = initial.covariance(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      }
    }
    const Mat e = sym_function(s, [t](double l) { return std::exp(-t / l); });
    const Mat decay = sym_function(s, [t](double l) { return l * (1.0 - std::exp(-2.0 * t / l)); });
    const Vec mb = e * dm;
    const Mat cb = e * c0 * e + decay;
    for (long i = 0; i < m; ++i) {
      out.mean(idx[static_cast<size_t>(i)]) += mb(i);
      for (long j = 0; j < m; ++j) {
        out.covariance(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]) =
            0.5 * (cb(i, j) + cb(j, i));
      }
    }
  }
  return out;
}

Mat spd_sqrt(const Mat& s) {
  return sym_function(s, [](double l) { return std::sqrt(std::max(l, kEigFloor)); });
}

double gaussian_w2(const GaussianState& a, const GaussianState& b) {
  check_pair(a, b, "gaussian_w2");
  const Mat rb = spd_sqrt(b.covariance);
  const Mat cross = spd_sqrt(rb * a.covariance * rb);
  const double tr = (a.covariance + b.covariance - 2.0 * cross).trace();
  const double w2 = (a.mean - b.mean).squaredNorm() + std::max(tr, 0.0);
  return std::sqrt(w2);
}

double nearest_ou_time(const GaussianState& layer, const GaussianState& initial,
                       const GaussianState& target, double t_max, long grid) {
  if (!(t_max > 0.0) || grid < 2) throw std::invalid_argument("nearest_ou_time: bad search range");
  auto dist = [&](double t) { return gaussian_w2(layer, ou_exact(t, initial, target)); };
  const double h = t_max / static_cast<double>(grid - 1);
  long best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (long i = 0; i < grid; ++i) {
    const double d = dist(h * static_cast<double>(i));
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  double lo = std::max(0.0, h * static_cast<double>(best - 1));
  double hi = std::min(t_max, h * static_cast<double>(best + 1));
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - g * (hi - lo);
  double x2 = lo + g * (hi - lo);
  double f1 = dist(x1);
  double f2 = dist(x2);
  for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = dist(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = dist(x2);
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<long> optimal_assignment(const Mat& cost) {
  const long n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("optimal_assignment: cost must be square");
  // Shortest augmenting paths with row/column potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0);
  std::vector<double> v(static_cast<size_t>(n + 1), 0.0);
  std::vector<long> p(static_cast<size_t>(n + 1), 0);
  std::vector<long> way(static_cast<size_t>(n + 1), 0);
  std::vector<double> minv(static_cast<size_t>(n + 1));
  std::vector<char> used(static_cast<size_t>(n + 1));
  // Column i of the transpose is row i of the cost, contiguous in memory.
  const Mat ct = cost.transpose();
  for (long i = 1; i <= n; ++i) {
    p[0] = i;
    long j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const long i0 = p[static_cast<size_t>(j0)];
      const double* row = ct.col(i0 - 1).data();
      const double ui = u[static_cast<size_t>(i0)];
      double delta = inf;
      long j1 = 0;
      for (long j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = row[j - 1] - ui - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (long j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const long j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<long> match(static_cast<size_t>(n));
  for (long j = 1; j <= n; ++j) match[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  return match;
}

double empirical_w2_exact(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("empirical_w2_exact: point sets differ in size or dimension");
  }
  const long n = a.rows();
  if (n == 0) return 0.0;
  const Vec na = a.rowwise().squaredNorm();
  const Vec nb = b.rowwise().squaredNorm();
  Mat cost = -2.0 * a * b.transpose();
  cost.colwise() += na;
  cost.rowwise() += nb.transpose();
  const auto match = optimal_assignment(cost);
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    total += (a.row(i) - b.row(match[static_cast<size_t>(i)])).squaredNorm();
  }
  return std::sqrt(total / static_cast<double>(n));
}

namespace {

// Mean squared difference of quantile functions of two sorted samples.
double quantile_msd(const Vec& a, const Vec& b) {
  const long na = a.size();
  const long nb = b.size();
  if (na == nb) return (a - b).squaredNorm() / static_cast<double>(na);
  // Merge the breakpoints of both step quantile functions.
  double total = 0.0;
  double prev = 0.0;
  long i = 0;
  long j = 0;
  while (i < na && j < nb) {
    const double ta = static_cast<double>(i + 1) / static_cast<double>(na);
    const double tb = static_cast<double>(j + 1) / static_cast<double>(nb);
    const double next = std::min(ta, tb);
    const double diff = a(i) - b(j);
    total += (next - prev) * diff * diff;
    prev = next;
    if (ta <= next) ++i;
    if (tb <= next) ++j;
  }
  return total;
}

double quantile_mad(const Vec& a, const Vec& b) {
  double total = 0.0;
  double prev = 0.0;
  long i = 0;
  long j = 0;
  const long na = a.size();
  const long nb = b.size();
  while (i < na && j < nb) {
    const double ta = static_cast<double>(i + 1) / static_cast<double>(na);
    const double tb = static_cast<double>(j + 1) / static_cast<double>(nb);
    const double next = std::min(ta, tb);
    total += (next - prev) * std::abs(a(i) - b(j));
    prev = next;
    if (ta <= next) ++i;
    if (tb <= next) ++j;
  }
  return total;
}

void sort_vec(Vec& v) { std::sort(v.data(), v.data() + v.size()); }

}  // namespace

double empirical_w2_sliced(const Mat& a, const Mat& b, long projections, std::uint64_t seed) {
  if (a.cols() != b.cols()) throw std::invalid_argument("empirical_w2_sliced: dimension mismatch");
  if (projections < 1) throw std::invalid_argument("empirical_w2_sliced: need at least one projection");
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("empirical_w2_sliced: empty set");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  double total = 0.0;
  for (long p = 0; p < projections; ++p) {
    Vec dir(a.cols());
    for (Eigen::Index c = 0; c < dir.size(); ++c) dir(c) = normal(rng);
    dir.normalize();
    Vec pa = a * dir;
    Vec pb = b * dir;
    sort_vec(pa);
    sort_vec(pb);
    total += quantile_msd(pa, pb);
  }
  return std::sqrt(total / static_cast<double>(projections));
}

W2Estimate empirical_w2(const Mat& a, const Mat& b, const EmpiricalW2Options& opts) {
  if (a.rows() == b.rows() && a.rows() <= opts.exact_limit) {
    return {empirical_w2_exact(a, b), "exact"};
  }
  return {empirical_w2_sliced(a, b, opts.projections, opts.seed), "sliced"};
}

double w1_1d(Vec a, Vec b) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("w1_1d: empty sample");
  sort_vec(a);
  sort_vec(b);
  return quantile_mad(a, b);
}

double w1_to_density(Vec samples, const Vec& grid, const Vec& density) {
  if (grid.size() < 2 || grid.size() != density.size()) {
    throw std::invalid_argument("w1_to_density: grid and density must match");
  }
  sort_vec(samples);
  const long m = grid.size();
  // Trapezoid CDF on the grid, normalized.
  Vec cdf = Vec::Zero(m);
  for (long i = 1; i < m; ++i) {
    cdf(i) = cdf(i - 1) + 0.5 * (density(i - 1) + density(i)) * (grid(i) - grid(i - 1));
  }
  cdf /= cdf(m - 1);
  const double n = static_cast<double>(samples.size());
  auto emp = [&](double x) {
    return static_cast<double>(std::upper_bound(samples.data(), samples.data() + samples.size(), x) -
                               samples.data()) / n;
  };
  double total = 0.0;
  for (long i = 1; i < m; ++i) {
    const double xm = 0.5 * (grid(i - 1) + grid(i));
    const double fm = 0.5 * (cdf(i - 1) + cdf(i));
    total += std::abs(emp(xm) - fm) * (grid(i) - grid(i - 1));
  }
  // Samples outside the grid contribute their distance to its ends.
  for (Eigen::Index k = 0; k < samples.size(); ++k) {
    if (samples(k) < grid(0)) total += (grid(0) - samples(k)) / n;
    if (samples(k) > grid(m - 1)) total += (samples(k) - grid(m - 1)) / n;
  }
  return total;
}

EulerMaruyamaResult euler_maruyama_1d(const PotentialSpec& potential, long n_paths, double dt,
                                      double t_end, std::uint64_t seed,
                                      std::vector<double> sample_times, const Vec& initial) {
  if (!(dt > 0.0)) throw std::invalid_argument("euler_maruyama_1d: dt must be positive");
  if (t_end < 0.0) throw std::invalid_argument("euler_maruyama_1d: negative horizon");
  if (n_paths < 1) throw std::invalid_argument("euler_maruyama_1d: need at least one path");
  if (potential.dimension().value_or(1) != 1) {
    throw std::invalid_argument("euler_maruyama_1d: potential is not one-dimensional");
  }
  if (sample_times.empty()) sample_times.push_back(t_end);
  std::sort(sample_times.begin(), sample_times.end());
  for (double s : sample_times) {
    if (s < 0.0 || s > t_end + 1e-12) throw std::invalid_argument("euler_maruyama_1d: sample time outside [0, t_end]");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Mat x(n_paths, 1);
  if (initial.size() > 0) {
    if (initial.size() != n_paths) throw std::invalid_argument("euler_maruyama_1d: initial size mismatch");
    x.col(0) = initial;
  } else {
    for (long i = 0; i < n_paths; ++i) x(i, 0) = normal(rng);
  }
  const long steps = static_cast<long>(std::llround(t_end / dt));
  const double noise = std::sqrt(2.0 * dt);
  EulerMaruyamaResult out;
  size_t next = 0;
  auto record = [&](long step) {
    const double t = static_cast<double>(step) * dt;
    while (next < sample_times.size() && sample_times[next] <= t + 0.5 * dt) {
      out.times.push_back(t);
      out.marginals.push_back(x.col(0));
      ++next;
    }
  };
  record(0);
  for (long s = 0; s < steps; ++s) {
    const Mat g = potential_gradients(x, potential);
    if (!g.allFinite()) {
      throw std::runtime_error("euler_maruyama_1d: non-finite drift at step " + std::to_string(s));
    }
    for (long i = 0; i < n_paths; ++i) x(i, 0) += -g(i, 0) * dt + noise * normal(rng);
    record(s + 1);
  }
  while (next < sample_times.size()) {
    out.times.push_back(static_cast<double>(steps) * dt);
    out.marginals.push_back(x.col(0));
    ++next;
  }
  return out;
}

SteadyStateSpec SteadyStateSpec::unit_disk() { return {}; }

SteadyStateSpec SteadyStateSpec::annulus(double inner, double outer) {
  SteadyStateSpec s;
  s.kind = SteadyStateKind::Annulus;
  s.inner = inner;
  s.outer = outer;
  s.validate();
  return s;
}

SteadyStateSpec SteadyStateSpec::gaussian_state(GaussianState g) {
  SteadyStateSpec s;
  s.kind = SteadyStateKind::Gaussian;
  s.gaussian = std::move(g);
  s.validate();
  return s;
}

void SteadyStateSpec::validate() const {
  if (kind == SteadyStateKind::Annulus && !(inner > 0.0 && inner < outer)) {
    throw std::invalid_argument("annulus radii must satisfy 0 < inner < outer");
  }
  if (kind == SteadyStateKind::Gaussian) gaussian.validate();
}

double SteadyStateSpec::radial_cdf(double r) const {
  switch (kind) {
    case SteadyStateKind::UnitDisk:
      return std::clamp(r * r, 0.0, 1.0);
    case SteadyStateKind::Annulus:
      return std::clamp((r * r - inner * inner) / (outer * outer - inner * inner), 0.0, 1.0);
    case SteadyStateKind::Gaussian: {
      // Mahalanobis radius is chi-distributed with dim degrees of freedom.
      const double a = 0.5 * static_cast<double>(gaussian.dim());
      return Eigen::numext::igamma(a, 0.5 * r * r);
    }
  }
  return 0.0;
}

SteadyStateReport steady_state_check(const Mat& particles, const SteadyStateSpec& spec) {
  spec.validate();
  if (spec.kind != SteadyStateKind::Gaussian && particles.cols() != 2) {
    throw std::invalid_argument("steady_state_check: disk and annulus checks need 2-D particles");
  }
  const long n = particles.rows();
  if (n < 1) throw std::invalid_argument("steady_state_check: no particles");
  Vec r(n);
  if (spec.kind == SteadyStateKind::Gaussian) {
    const Eigen::LLT<Mat> llt(spec.gaussian.covariance);
    const Mat c = (particles.rowwise() - spec.gaussian.mean.transpose()).transpose();
    r = llt.matrixL().solve(c).colwise().norm().transpose();
  } else {
    r = particles.rowwise().norm();
  }
  sort_vec(r);
  SteadyStateReport rep;
  rep.n = n;
  rep.max_radius = r(n - 1);
  rep.quantile_levels = {0.05, 0.25, 0.5, 0.75, 0.95};
  for (double q : rep.quantile_levels) {
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<long>(std::floor(pos));
    const long hi = std::min(lo + 1, n - 1);
    rep.quantiles.push_back(r(lo) + (pos - static_cast<double>(lo)) * (r(hi) - r(lo)));
  }
  const double dn = static_cast<double>(n);
  for (long i = 0; i < n; ++i) {
    const double f = spec.radial_cdf(r(i));
    rep.ks = std::max({rep.ks, static_cast<double>(i + 1) / dn - f, f - static_cast<double>(i) / dn});
  }
  // Asymptotic Kolmogorov quantile: sqrt(-ln(alpha/2)/2) at alpha = 0.01.
  rep.ks_critical_1pct = std::sqrt(-0.5 * std::log(0.005)) / std::sqrt(dn);
  return rep;
}

AnnulusFit fit_annulus(const Mat& particles) {
  if (particles.rows() < 2) throw std::invalid_argument("fit_annulus: need at least two particles");
  const Vec r2 = particles.rowwise().squaredNorm();
  const double mean = r2.mean();
  const double var = (r2.array() - mean).square().sum() / static_cast<double>(r2.size() - 1);
  // Uniform annulus: E|x|^2 = (a^2 + b^2)/2 and Var|x|^2 = (b^2 - a^2)^2 / 12.
  const double spread = std::sqrt(12.0 * var);
  return {std::sqrt(std::max(mean - 0.5 * spread, 0.0)), std::sqrt(mean + 0.5 * spread)};
}

Vec central_difference_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  Vec y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y(i) = x(i) + h;
    const double fp = f(y);
    y(i) = x(i) - h;
    const double fm = f(y);
    y(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace wgpath
