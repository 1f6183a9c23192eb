#include "wgpath/base_distribution.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace wgpath {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Phi(a) - Phi(b) for a > b, evaluated without cancellation in either tail.
double normal_interval(double a, double b) {
  constexpr double r = std::numbers::sqrt2;
  if (b > 0.0) return 0.5 * (std::erfc(b / r) - std::erfc(a / r));
  if (a < 0.0) return 0.5 * (std::erfc(-a / r) - std::erfc(-b / r));
  return 1.0 - 0.5 * std::erfc(a / r) - 0.5 * std::erfc(-b / r);
}

double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

BaseDistribution BaseDistribution::standard_gaussian(long dim) {
  BaseDistribution b;
  b.kind = BaseKind::StandardGaussian;
  b.dim = dim;
  b.validate();
  return b;
}

BaseDistribution BaseDistribution::uniform_box(const Vec& lo, const Vec& hi, double smoothing) {
  BaseDistribution b;
  b.kind = BaseKind::UniformBox;
  b.dim = static_cast<long>(lo.size());
  b.lo = lo;
  b.hi = hi;
  b.smoothing = smoothing;
  b.validate();
  return b;
}

BaseDistribution BaseDistribution::gaussian_mixture(const Vec& weights, const Mat& means,
                                                    double variance) {
  BaseDistribution b;
  b.kind = BaseKind::GaussianMixture;
  b.dim = static_cast<long>(means.cols());
  b.weights = weights / weights.sum();
  b.means = means;
  b.variance = variance;
  b.validate();
  return b;
}

void BaseDistribution::validate() const {
  if (dim < 1) throw std::invalid_argument("base distribution: dimension must be positive");
  switch (kind) {
    case BaseKind::StandardGaussian:
      break;
    case BaseKind::UniformBox:
      if (lo.size() != dim || hi.size() != dim || !(hi.array() > lo.array()).all()) {
        throw std::invalid_argument("uniform box: need lo < hi in every coordinate");
      }
      if (smoothing < 0.0) throw std::invalid_argument("uniform box: negative smoothing");
      break;
    case BaseKind::GaussianMixture:
      if (weights.size() != means.rows() || weights.size() == 0 || means.cols() != dim ||
          (weights.array() <= 0.0).any()) {
        throw std::invalid_argument("gaussian mixture: inconsistent weights/means");
      }
      if (!(variance > 0.0)) throw std::invalid_argument("gaussian mixture: variance must be > 0");
      break;
  }
}

bool BaseDistribution::has_smooth_score() const {
  return kind != BaseKind::UniformBox || smoothing > 0.0;
}

Mat BaseDistribution::sample(long n, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat z(n, dim);
  switch (kind) {
    case BaseKind::StandardGaussian:
      for (long i = 0; i < n; ++i) {
        for (long a = 0; a < dim; ++a) z(i, a) = normal(rng);
      }
      break;
    case BaseKind::UniformBox: {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (long i = 0; i < n; ++i) {
        for (long a = 0; a < dim; ++a) {
          z(i, a) = lo(a) + (hi(a) - lo(a)) * unif(rng);
          if (smoothing > 0.0) z(i, a) += smoothing * normal(rng);
        }
      }
      break;
    }
    case BaseKind::GaussianMixture: {
      std::discrete_distribution<long> pick(weights.data(), weights.data() + weights.size());
      const double sd = std::sqrt(variance);
      for (long i = 0; i < n; ++i) {
        const long c = pick(rng);
        for (long a = 0; a < dim; ++a) z(i, a) = means(c, a) + sd * normal(rng);
      }
      break;
    }
  }
  return z;
}

Vec BaseDistribution::log_density(const Mat& z) const {
  if (z.cols() != dim) throw std::invalid_argument("base log-density: dimension mismatch");
  const long n = static_cast<long>(z.rows());
  Vec out(n);
  switch (kind) {
    case BaseKind::StandardGaussian:
      out = -0.5 * z.rowwise().squaredNorm().array() - 0.5 * static_cast<double>(dim) * kLog2Pi;
      break;
    case BaseKind::UniformBox: {
      const double log_vol = (hi - lo).array().log().sum();
      for (long i = 0; i < n; ++i) {
        double s = -log_vol;
        for (long a = 0; a < dim; ++a) {
          if (smoothing > 0.0) {
            s += std::log(normal_interval((z(i, a) - lo(a)) / smoothing,
                                          (z(i, a) - hi(a)) / smoothing));
          } else if (z(i, a) < lo(a) || z(i, a) > hi(a)) {
            s = -std::numeric_limits<double>::infinity();
          }
        }
        out(i) = s;
      }
      break;
    }
    case BaseKind::GaussianMixture: {
      const long k = static_cast<long>(weights.size());
      const double c = -0.5 * static_cast<double>(dim) * (kLog2Pi + std::log(variance));
      for (long i = 0; i < n; ++i) {
        Vec lw(k);
        for (long j = 0; j < k; ++j) {
          lw(j) = std::log(weights(j)) + c -
                  0.5 * (z.row(i) - means.row(j)).squaredNorm() / variance;
        }
        const double m = lw.maxCoeff();
        out(i) = m + std::log((lw.array() - m).exp().sum());
      }
      break;
    }
  }
  return out;
}

Mat BaseDistribution::score(const Mat& z) const {
  if (z.cols() != dim) throw std::invalid_argument("base score: dimension mismatch");
  const long n = static_cast<long>(z.rows());
  switch (kind) {
    case BaseKind::StandardGaussian:
      return -z;
    case BaseKind::UniformBox: {
      if (smoothing <= 0.0) {
        throw std::domain_error("uniform box base has no smooth score; set a smoothing width");
      }
      Mat out(n, dim);
      for (long i = 0; i < n; ++i) {
        for (long a = 0; a < dim; ++a) {
          const double ta = (z(i, a) - lo(a)) / smoothing;
          const double tb = (z(i, a) - hi(a)) / smoothing;
          out(i, a) = (normal_pdf(ta) - normal_pdf(tb)) / (smoothing * normal_interval(ta, tb));
        }
      }
      return out;
    }
    case BaseKind::GaussianMixture: {
      const long k = static_cast<long>(weights.size());
      Mat out(n, dim);
      for (long i = 0; i < n; ++i) {
        Vec lw(k);
        for (long j = 0; j < k; ++j) {
          lw(j) = std::log(weights(j)) - 0.5 * (z.row(i) - means.row(j)).squaredNorm() / variance;
        }
        const Vec r = (lw.array() - lw.maxCoeff()).exp();
        const Vec resp = r / r.sum();
        out.row(i) = (resp.transpose() * means - z.row(i)) / variance;
      }
      return out;
    }
  }
  return Mat::Zero(n, dim);
}

}  // namespace wgpath
