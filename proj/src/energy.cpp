#include "wgpath/energy.hpp"

#include <cmath>
#include <memory>

namespace wgpath {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double clamped_sq_radius(const double* x, long d) {
  double r2 = 0.0;
  for (long a = 0; a < d; ++a) r2 += x[a] * x[a];
  return std::max(r2, kSingularRadius * kSingularRadius);
}

Vec fd_hvp(const std::function<Vec(const Vec&)>& grad, const Vec& x, const Vec& v) {
  const double vn = v.norm();
  if (vn == 0.0) return Vec::Zero(x.size());
  const double eps = 1e-5 * std::max(1.0, x.norm()) / vn;
  return (grad(x + eps * v) - grad(x - eps * v)) / (2.0 * eps);
}

// Raw-pointer evaluation of a kernel, used inside the pair loops.
struct KernelEval {
  const KernelSpec& s;
  long d;

  double value(const double* x) const {
    switch (s.kind) {
      case KernelKind::QuadraticLog: {
        const double r2 = clamped_sq_radius(x, d);
        return 0.5 * r2 - 0.5 * std::log(r2);
      }
      case KernelKind::GaussianAttraction: {
        double r2 = 0.0;
        for (long a = 0; a < d; ++a) r2 += x[a] * x[a];
        return -s.amplitude * std::exp(-r2 / s.width);
      }
      case KernelKind::Custom:
        return s.value_fn(Eigen::Map<const Vec>(x, d));
      case KernelKind::None:
        break;
    }
    return 0.0;
  }

  void grad(const double* x, double* out) const {
    switch (s.kind) {
      case KernelKind::QuadraticLog: {
        const double inv = 1.0 / clamped_sq_radius(x, d);
        for (long a = 0; a < d; ++a) out[a] = x[a] * (1.0 - inv);
        return;
      }
      case KernelKind::GaussianAttraction: {
        double r2 = 0.0;
        for (long a = 0; a < d; ++a) r2 += x[a] * x[a];
        const double f = s.amplitude * 2.0 / s.width * std::exp(-r2 / s.width);
        for (long a = 0; a < d; ++a) out[a] = f * x[a];
        return;
      }
      case KernelKind::Custom: {
        const Vec g = s.gradient_fn(Eigen::Map<const Vec>(x, d));
        for (long a = 0; a < d; ++a) out[a] = g(a);
        return;
      }
      case KernelKind::None:
        break;
    }
    for (long a = 0; a < d; ++a) out[a] = 0.0;
  }

  void hvp(const double* x, const double* v, double* out) const {
    switch (s.kind) {
      case KernelKind::QuadraticLog: {
        // Hessian: I - I/r^2 + 2 x x^T / r^4
        const double inv = 1.0 / clamped_sq_radius(x, d);
        double xv = 0.0;
        for (long a = 0; a < d; ++a) xv += x[a] * v[a];
        for (long a = 0; a < d; ++a) out[a] = v[a] * (1.0 - inv) + 2.0 * x[a] * xv * inv * inv;
        return;
      }
      case KernelKind::GaussianAttraction: {
        double r2 = 0.0;
        double xv = 0.0;
        for (long a = 0; a < d; ++a) {
          r2 += x[a] * x[a];
          xv += x[a] * v[a];
        }
        const double f = s.amplitude * 2.0 / s.width * std::exp(-r2 / s.width);
        for (long a = 0; a < d; ++a) out[a] = f * (v[a] - 2.0 / s.width * x[a] * xv);
        return;
      }
      case KernelKind::Custom: {
        const Eigen::Map<const Vec> xm(x, d);
        const Eigen::Map<const Vec> vm(v, d);
        const Vec h = s.hvp_fn ? s.hvp_fn(xm, vm) : fd_hvp(s.gradient_fn, xm, vm);
        for (long a = 0; a < d; ++a) out[a] = h(a);
        return;
      }
      case KernelKind::None:
        break;
    }
    for (long a = 0; a < d; ++a) out[a] = 0.0;
  }
};

void check_finite(const Mat& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!m.row(i).allFinite()) throw EvaluationError(std::string(what) + " is not finite", -1, i);
  }
}

}  // namespace

InternalEnergySpec InternalEnergySpec::entropy(double beta) {
  return {InternalKind::Entropy, 1.0, beta};
}

InternalEnergySpec InternalEnergySpec::power_law(double m, double beta) {
  return {InternalKind::PowerLaw, m, beta};
}

void InternalEnergySpec::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("internal energy: beta must be positive");
  }
  if (kind == InternalKind::PowerLaw && (!(m > 0.0) || m == 1.0 || !std::isfinite(m))) {
    throw std::invalid_argument("internal energy: power-law exponent must be positive and != 1");
  }
}

PotentialSpec PotentialSpec::none() { return {}; }

PotentialSpec PotentialSpec::quadratic(const Vec& mu, const Mat& sigma) {
  PotentialSpec p;
  p.kind = PotentialKind::QuadraticGaussianTarget;
  p.mu = mu;
  p.sigma = sigma;
  p.validate();
  p.precision = sigma.llt().solve(Mat::Identity(sigma.rows(), sigma.cols()));
  p.precision = 0.5 * (p.precision + p.precision.transpose()).eval();
  return p;
}

PotentialSpec PotentialSpec::styblinski_tang(double scale) {
  PotentialSpec p;
  p.kind = PotentialKind::StyblinskiTang;
  p.scale = scale;
  return p;
}

PotentialSpec PotentialSpec::log_confinement(double alpha1, double alpha2) {
  PotentialSpec p;
  p.kind = PotentialKind::LogConfinement;
  p.alpha1 = alpha1;
  p.alpha2 = alpha2;
  p.validate();
  return p;
}

PotentialSpec PotentialSpec::custom(std::function<double(const Vec&)> value,
                                    std::function<Vec(const Vec&)> gradient,
                                    std::function<Vec(const Vec&, const Vec&)> hvp) {
  PotentialSpec p;
  p.kind = PotentialKind::Custom;
  p.value_fn = std::move(value);
  p.gradient_fn = std::move(gradient);
  p.hvp_fn = std::move(hvp);
  p.validate();
  return p;
}

std::optional<long> PotentialSpec::dimension() const {
  if (kind == PotentialKind::QuadraticGaussianTarget) return static_cast<long>(mu.size());
  return std::nullopt;
}

void PotentialSpec::validate() const {
  switch (kind) {
    case PotentialKind::QuadraticGaussianTarget: {
      if (sigma.rows() != mu.size() || sigma.cols() != mu.size() || mu.size() == 0) {
        throw std::invalid_argument("quadratic potential: covariance shape does not match mean");
      }
      if (!(sigma - sigma.transpose()).isZero(1e-12)) {
        throw std::invalid_argument("quadratic potential: covariance is not symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Mat> es(sigma);
      if (es.eigenvalues().minCoeff() <= 0.0) {
        throw std::invalid_argument("quadratic potential: covariance is not positive definite");
      }
      break;
    }
    case PotentialKind::LogConfinement:
      if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) {
        throw std::invalid_argument("log confinement: alphas must be positive");
      }
      break;
    case PotentialKind::Custom:
      if (!value_fn || !gradient_fn) {
        throw std::invalid_argument("custom potential: value and gradient closures required");
      }
      break;
    default:
      break;
  }
}

KernelSpec KernelSpec::none() { return {}; }

KernelSpec KernelSpec::quadratic_log() {
  KernelSpec k;
  k.kind = KernelKind::QuadraticLog;
  return k;
}

KernelSpec KernelSpec::gaussian_attraction(double amplitude, double width) {
  KernelSpec k;
  k.kind = KernelKind::GaussianAttraction;
  k.amplitude = amplitude;
  k.width = width;
  k.validate();
  return k;
}

KernelSpec KernelSpec::custom(std::function<double(const Vec&)> value,
                              std::function<Vec(const Vec&)> gradient,
                              std::function<Vec(const Vec&, const Vec&)> hvp) {
  KernelSpec k;
  k.kind = KernelKind::Custom;
  k.value_fn = std::move(value);
  k.gradient_fn = std::move(gradient);
  k.hvp_fn = std::move(hvp);
  k.validate();
  return k;
}

void KernelSpec::validate() const {
  if (kind == KernelKind::GaussianAttraction && !(width > 0.0)) {
    throw std::invalid_argument("gaussian attraction: width must be positive");
  }
  if (kind == KernelKind::Custom && (!value_fn || !gradient_fn)) {
    throw std::invalid_argument("custom kernel: value and gradient closures required");
  }
}

void FreeEnergySpec::validate() const {
  if (internal) internal->validate();
  potential.validate();
  kernel.validate();
  // The zero functional is accepted: it backs the smoke preset.
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw std::invalid_argument("free energy: mass must be positive");
  }
}

Vec internal_velocity_term(double log_p, const Vec& score,
                           const std::optional<InternalEnergySpec>& spec) {
  if (!spec) return Vec::Zero(score.size());
  if (!std::isfinite(log_p) || !score.allFinite()) {
    throw EvaluationError("internal velocity: non-finite density or score", -1, -1);
  }
  if (spec->kind == InternalKind::Entropy) return -score / spec->beta;
  const double pm1 = std::exp((spec->m - 1.0) * log_p);
  return -(spec->m * pm1 / spec->beta) * score;
}

double potential_value(const Vec& x, const PotentialSpec& spec) {
  switch (spec.kind) {
    case PotentialKind::None:
      return 0.0;
    case PotentialKind::QuadraticGaussianTarget: {
      const Vec r = x - spec.mu;
      return 0.5 * r.dot(spec.precision * r);
    }
    case PotentialKind::StyblinskiTang: {
      double s = 0.0;
      for (Eigen::Index a = 0; a < x.size(); ++a) {
        const double t = x(a);
        s += t * t * t * t - 16.0 * t * t + 5.0 * t;
      }
      return spec.scale * s;
    }
    case PotentialKind::LogConfinement:
      return -(spec.alpha1 / spec.alpha2) * 0.5 * std::log(clamped_sq_radius(x.data(), x.size()));
    case PotentialKind::Custom:
      return spec.value_fn(x);
  }
  return 0.0;
}

Vec potential_gradient(const Vec& x, const PotentialSpec& spec) {
  switch (spec.kind) {
    case PotentialKind::None:
      return Vec::Zero(x.size());
    case PotentialKind::QuadraticGaussianTarget:
      return spec.precision * (x - spec.mu);
    case PotentialKind::StyblinskiTang:
      return spec.scale * x.unaryExpr([](double t) { return 4.0 * t * t * t - 32.0 * t + 5.0; });
    case PotentialKind::LogConfinement:
      return -(spec.alpha1 / spec.alpha2) / clamped_sq_radius(x.data(), x.size()) * x;
    case PotentialKind::Custom:
      return spec.gradient_fn(x);
  }
  return Vec::Zero(x.size());
}

Vec potential_hvp(const Vec& x, const Vec& v, const PotentialSpec& spec) {
  switch (spec.kind) {
    case PotentialKind::None:
      return Vec::Zero(x.size());
    case PotentialKind::QuadraticGaussianTarget:
      return spec.precision * v;
    case PotentialKind::StyblinskiTang:
      return spec.scale * (x.array().square() * 12.0 - 32.0).matrix().cwiseProduct(v);
    case PotentialKind::LogConfinement: {
      const double inv = 1.0 / clamped_sq_radius(x.data(), x.size());
      return -(spec.alpha1 / spec.alpha2) * (inv * v - 2.0 * inv * inv * x.dot(v) * x);
    }
    case PotentialKind::Custom:
      return spec.hvp_fn ? spec.hvp_fn(x, v) : fd_hvp(spec.gradient_fn, x, v);
  }
  return Vec::Zero(x.size());
}

double kernel_value(const Vec& x, const KernelSpec& spec) {
  return KernelEval{spec, static_cast<long>(x.size())}.value(x.data());
}

Vec kernel_gradient(const Vec& x, const KernelSpec& spec) {
  Vec out(x.size());
  KernelEval{spec, static_cast<long>(x.size())}.grad(x.data(), out.data());
  return out;
}

Vec kernel_hvp(const Vec& x, const Vec& v, const KernelSpec& spec) {
  Vec out(x.size());
  KernelEval{spec, static_cast<long>(x.size())}.hvp(x.data(), v.data(), out.data());
  return out;
}

Vec potential_values(const Mat& x, const PotentialSpec& spec) {
  Vec out(x.rows());
  if (!spec.active()) return Vec::Zero(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = potential_value(x.row(i).transpose(), spec);
  return out;
}

Mat potential_gradients(const Mat& x, const PotentialSpec& spec) {
  switch (spec.kind) {
    case PotentialKind::None:
      return Mat::Zero(x.rows(), x.cols());
    case PotentialKind::QuadraticGaussianTarget:
      return (x.rowwise() - spec.mu.transpose()) * spec.precision;
    case PotentialKind::StyblinskiTang:
      return spec.scale * x.unaryExpr([](double t) { return 4.0 * t * t * t - 32.0 * t + 5.0; });
    default:
      break;
  }
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = potential_gradient(x.row(i).transpose(), spec).transpose();
  }
  return out;
}

namespace {

Mat potential_hvps(const Mat& x, const Mat& v, const PotentialSpec& spec) {
  switch (spec.kind) {
    case PotentialKind::None:
      return Mat::Zero(x.rows(), x.cols());
    case PotentialKind::QuadraticGaussianTarget:
      return v * spec.precision;
    case PotentialKind::StyblinskiTang:
      return spec.scale * (x.array().square() * 12.0 - 32.0).matrix().cwiseProduct(v);
    default:
      break;
  }
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = potential_hvp(x.row(i).transpose(), v.row(i).transpose(), spec).transpose();
  }
  return out;
}

// Backward of interaction_velocity: -(weight) * sum_j H(x_i - x_j)(G_i - G_j).
Mat interaction_velocity_vjp(const Mat& x, const Mat& g, const KernelSpec& spec, double weight) {
  const long n = x.rows();
  const long d = x.cols();
  const RowMat xr = x;
  const RowMat gr = g;
  RowMat out = RowMat::Zero(n, d);
  const KernelEval k{spec, d};
  std::vector<double> diff(static_cast<size_t>(d));
  std::vector<double> dg(static_cast<size_t>(d));
  std::vector<double> h(static_cast<size_t>(d));
  for (long i = 0; i < n; ++i) {
    const double* xi = xr.row(i).data();
    const double* gi = gr.row(i).data();
    double* oi = out.row(i).data();
    for (long j = i + 1; j < n; ++j) {
      const double* xj = xr.row(j).data();
      const double* gj = gr.row(j).data();
      for (long a = 0; a < d; ++a) {
        diff[static_cast<size_t>(a)] = xi[a] - xj[a];
        dg[static_cast<size_t>(a)] = gi[a] - gj[a];
      }
      k.hvp(diff.data(), dg.data(), h.data());
      double* oj = out.row(j).data();
      for (long a = 0; a < d; ++a) {
        oi[a] -= weight * h[static_cast<size_t>(a)];
        oj[a] += weight * h[static_cast<size_t>(a)];
      }
    }
  }
  return out;
}

// sum_{j != i} grad W(x_i - x_j) for every i.
Mat interaction_gradient_sums(const Mat& x, const KernelSpec& spec) {
  const long n = x.rows();
  const long d = x.cols();
  const RowMat xr = x;
  RowMat out = RowMat::Zero(n, d);
  const KernelEval k{spec, d};
  std::vector<double> diff(static_cast<size_t>(d));
  std::vector<double> g(static_cast<size_t>(d));
  for (long i = 0; i < n; ++i) {
    const double* xi = xr.row(i).data();
    double* oi = out.row(i).data();
    for (long j = i + 1; j < n; ++j) {
      const double* xj = xr.row(j).data();
      for (long a = 0; a < d; ++a) diff[static_cast<size_t>(a)] = xi[a] - xj[a];
      k.grad(diff.data(), g.data());
      double* oj = out.row(j).data();
      for (long a = 0; a < d; ++a) {
        oi[a] += g[static_cast<size_t>(a)];
        oj[a] -= g[static_cast<size_t>(a)];
      }
    }
  }
  return out;
}

}  // namespace

Mat interaction_velocity(const Mat& x, const KernelSpec& spec, double weight) {
  if (!spec.active()) return Mat::Zero(x.rows(), x.cols());
  return -weight * interaction_gradient_sums(x, spec);
}

double interaction_mean(const Mat& x, const KernelSpec& spec) {
  const long n = x.rows();
  if (!spec.active()) return 0.0;
  if (n < 2) throw std::invalid_argument("interaction energy needs at least two particles");
  const long d = x.cols();
  const RowMat xr = x;
  const KernelEval k{spec, d};
  std::vector<double> diff(static_cast<size_t>(d));
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    const double* xi = xr.row(i).data();
    double row = 0.0;
    for (long j = i + 1; j < n; ++j) {
      const double* xj = xr.row(j).data();
      for (long a = 0; a < d; ++a) diff[static_cast<size_t>(a)] = xi[a] - xj[a];
      row += k.value(diff.data());
    }
    total += row;
  }
  return 2.0 * total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

ad::Var potential_values(const ad::Var& x, const PotentialSpec& spec) {
  Vec v = potential_values(x.value(), spec);
  return x.tape()->record_first_order(
      "potential_values", Mat(v), {x}, [spec](ad::BackwardContext<Mat>& c) {
        c.accumulate(0, ad::mul_col(potential_gradients(c.input(0), spec), c.grad()));
      });
}

ad::Var potential_gradients(const ad::Var& x, const PotentialSpec& spec) {
  return x.tape()->record_first_order(
      "potential_gradients", potential_gradients(x.value(), spec), {x},
      [spec](ad::BackwardContext<Mat>& c) {
        c.accumulate(0, potential_hvps(c.input(0), c.grad(), spec));
      });
}

ad::Var interaction_velocity(const ad::Var& x, const KernelSpec& spec, double weight) {
  return x.tape()->record_first_order(
      "interaction_velocity", interaction_velocity(x.value(), spec, weight), {x},
      [spec, weight](ad::BackwardContext<Mat>& c) {
        c.accumulate(0, interaction_velocity_vjp(c.input(0), c.grad(), spec, weight));
      });
}

ad::Var interaction_mean(const ad::Var& x, const KernelSpec& spec) {
  const double n = static_cast<double>(x.rows());
  return x.tape()->record_first_order(
      "interaction_mean", Mat::Constant(1, 1, interaction_mean(x.value(), spec)), {x},
      [spec, n](ad::BackwardContext<Mat>& c) {
        const double w = 2.0 * c.grad()(0, 0) / (n * (n - 1.0));
        c.accumulate(0, w * interaction_gradient_sums(c.input(0), spec));
      });
}

template <class T>
T internal_velocity(const T& log_q, const T& score, const InternalEnergySpec& spec, double mass) {
  if (spec.kind == InternalKind::Entropy) return ad::scale(score, -1.0 / spec.beta);
  const T pm1 = ad::exp(ad::scale(ad::add_scalar(log_q, std::log(mass)), spec.m - 1.0));
  return ad::scale(ad::mul_col(score, pm1), -spec.m / spec.beta);
}

template <class T>
T internal_energy_density(const T& log_q, const InternalEnergySpec& spec, double mass) {
  const T log_p = ad::add_scalar(log_q, std::log(mass));
  if (spec.kind == InternalKind::Entropy) return ad::scale(log_p, 1.0 / spec.beta);
  return ad::scale(ad::exp(ad::scale(log_p, spec.m - 1.0)), 1.0 / ((spec.m - 1.0) * spec.beta));
}

template Mat internal_velocity<Mat>(const Mat&, const Mat&, const InternalEnergySpec&, double);
template ad::Var internal_velocity<ad::Var>(const ad::Var&, const ad::Var&,
                                            const InternalEnergySpec&, double);
template Mat internal_energy_density<Mat>(const Mat&, const InternalEnergySpec&, double);
template ad::Var internal_energy_density<ad::Var>(const ad::Var&, const InternalEnergySpec&,
                                                  double);

double free_energy_estimate(const Mat& positions, const Vec& log_q, const FreeEnergySpec& spec) {
  const Eigen::Index n = positions.rows();
  if (log_q.size() != n) throw std::invalid_argument("free energy: batch size mismatch");
  if (n == 0) throw std::invalid_argument("free energy: empty batch");
  if (spec.kernel.active() && n < 2) {
    throw std::invalid_argument("free energy: interaction needs at least two particles");
  }
  Vec per = potential_values(positions, spec.potential);
  if (spec.internal) {
    const Mat u = internal_energy_density(Mat(log_q), *spec.internal, spec.mass);
    per += u.col(0);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(per(i))) throw EvaluationError("free energy term is not finite", -1, i);
  }
  double f = spec.mass * per.mean();
  if (spec.kernel.active()) {
    const double w = interaction_mean(positions, spec.kernel);
    if (!std::isfinite(w)) throw EvaluationError("interaction energy is not finite", -1, -1);
    f += 0.5 * spec.mass * spec.mass * w;
  }
  return f;
}

ad::Var free_energy_estimate(const ad::Var& positions, const ad::Var& log_q,
                             const FreeEnergySpec& spec) {
  ad::Tape* tape = positions.tape();
  ad::Var f = tape->constant(Mat::Zero(1, 1));
  bool any = false;
  if (spec.potential.active()) {
    f = ad::mean_all(potential_values(positions, spec.potential));
    any = true;
  }
  if (spec.internal) {
    ad::Var u = ad::mean_all(internal_energy_density(log_q, *spec.internal, spec.mass));
    f = any ? ad::add(f, u) : u;
    any = true;
  }
  if (any) f = ad::scale(f, spec.mass);
  if (spec.kernel.active()) {
    ad::Var w = ad::scale(interaction_mean(positions, spec.kernel), 0.5 * spec.mass * spec.mass);
    f = any ? ad::add(f, w) : w;
  }
  check_finite(f.value(), "free energy");
  return f;
}

}  // namespace wgpath
