#pragma once

#include <Eigen/Dense>

#include <random>

namespace wgpath {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class BaseKind { StandardGaussian, UniformBox, GaussianMixture };

/// Initial distribution of the path. Rows of every matrix argument are points.
struct BaseDistribution {
  BaseKind kind = BaseKind::StandardGaussian;
  long dim = 1;
  // UniformBox
  Vec lo;
  Vec hi;
  /// Width of the Gaussian the box indicator is convolved with; 0 keeps the raw box.
  double smoothing = 0.0;
  // GaussianMixture
  Vec weights;
  Mat means;  // components x dim
  double variance = 1.0;

  static BaseDistribution standard_gaussian(long dim);
  static BaseDistribution uniform_box(const Vec& lo, const Vec& hi, double smoothing = 0.0);
  static BaseDistribution gaussian_mixture(const Vec& weights, const Mat& means, double variance);

  void validate() const;
  /// False only for the raw (unsmoothed) box.
  [[nodiscard]] bool has_smooth_score() const;

  [[nodiscard]] Mat sample(long n, Rng& rng) const;
  [[nodiscard]] Vec log_density(const Mat& z) const;
  /// Gradient of the log-density at each row of z.
  [[nodiscard]] Mat score(const Mat& z) const;
};

}  // namespace wgpath
