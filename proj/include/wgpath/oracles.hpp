#pragma once

// Reference solutions and metrics used to validate trained paths.

#include "wgpath/energy.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wgpath {

struct GaussianState {
  Vec mean;
  Mat covariance;

  /// Throws std::invalid_argument unless the covariance is symmetric with
  /// eigenvalues above 1e-12.
  void validate() const;
  [[nodiscard]] long dim() const { return mean.size(); }
  /// Sample mean and unbiased sample covariance of the rows of x.
  static GaussianState fit(const Mat& x);
};

/// Law at time t of dX = -S^{-1}(X - m) dt + sqrt(2) dW started from
/// `initial`, where (m, S) = target. Uses the matrix exponential of -S^{-1} t.
GaussianState ou_exact(double t, const GaussianState& initial, const GaussianState& target);
/// Same law, computed independently on each diagonal block of S through its
/// eigendecomposition. Requires an initial covariance that is also block
/// diagonal with the same blocks.
GaussianState ou_exact_blockwise(double t, const GaussianState& initial, const GaussianState& target);
/// Index sets of the connected diagonal blocks of a symmetric matrix.
std::vector<std::vector<long>> diagonal_blocks(const Mat& s, double tol = 0.0);

/// Symmetric square root with eigenvalues floored at 1e-12.
Mat spd_sqrt(const Mat& s);
/// Bures-Wasserstein distance.
double gaussian_w2(const GaussianState& a, const GaussianState& b);

/// Time in [0, t_max] at which the exact law is W2-nearest to `layer`,
/// by a dense grid search of `grid` points followed by golden-section
/// refinement in the bracketing cell.
double nearest_ou_time(const GaussianState& layer, const GaussianState& initial,
                       const GaussianState& target, double t_max, long grid = 4000);

struct W2Estimate {
  double value = 0.0;
  std::string method;  // "exact" or "sliced"
};

struct EmpiricalW2Options {
  long exact_limit = 2000;
  long projections = 128;
  std::uint64_t seed = 0;
};

/// Optimal assignment of rows under squared Euclidean cost; returns the
/// column matched to each row.
std::vector<long> optimal_assignment(const Mat& cost);
/// Exact W2 between equal-size point sets via the assignment problem.
double empirical_w2_exact(const Mat& a, const Mat& b);
/// Sliced W2 averaged over random directions (sizes may differ).
double empirical_w2_sliced(const Mat& a, const Mat& b, long projections, std::uint64_t seed);
/// Exact when both sets have the same size n <= exact_limit, sliced otherwise;
/// the chosen route is reported in the result.
W2Estimate empirical_w2(const Mat& a, const Mat& b, const EmpiricalW2Options& opts = {});

/// 1-D W1 between two samples (quantile functions, any sizes).
double w1_1d(Vec a, Vec b);
/// 1-D W1 between a sample and a density given on a uniform grid.
double w1_to_density(Vec samples, const Vec& grid, const Vec& density);

struct EulerMaruyamaResult {
  std::vector<double> times;
  std::vector<Vec> marginals;  // one sample of size n_paths per requested time
};

/// X_{j+1} = X_j - V'(X_j) dt + sqrt(2 dt) xi_j for a 1-D potential. Paths
/// start from `initial` (standard normal draws when empty). Throws
/// std::runtime_error with the step index on a non-finite drift.
EulerMaruyamaResult euler_maruyama_1d(const PotentialSpec& potential, long n_paths, double dt,
                                      double t_end, std::uint64_t seed,
                                      std::vector<double> sample_times = {},
                                      const Vec& initial = Vec());

enum class SteadyStateKind { UnitDisk, Annulus, Gaussian };

struct SteadyStateSpec {
  SteadyStateKind kind = SteadyStateKind::UnitDisk;
  double inner = 0.0;
  double outer = 1.0;
  GaussianState gaussian;

  static SteadyStateSpec unit_disk();
  static SteadyStateSpec annulus(double inner, double outer);
  static SteadyStateSpec gaussian_state(GaussianState g);
  void validate() const;
  /// CDF of the radius (Mahalanobis radius for the Gaussian kind).
  [[nodiscard]] double radial_cdf(double r) const;
};

struct SteadyStateReport {
  long n = 0;
  double max_radius = 0.0;
  std::vector<double> quantile_levels;
  std::vector<double> quantiles;
  double ks = 0.0;
  double ks_critical_1pct = 0.0;
  [[nodiscard]] bool ks_pass() const { return ks < ks_critical_1pct; }
};

SteadyStateReport steady_state_check(const Mat& particles, const SteadyStateSpec& spec);

/// Radii of a uniform annulus matched to the mean and variance of |x|^2.
struct AnnulusFit {
  double inner = 0.0;
  double outer = 0.0;
};
AnnulusFit fit_annulus(const Mat& particles);

/// Central differences of a scalar function.
Vec central_difference_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                                double h = 1e-5);

}  // namespace wgpath
