#pragma once

// Free-energy functional: internal energy, external potential and pairwise
// interaction, with analytic gradients and Hessian-vector products.

#include "wgpath/autodiff.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

namespace wgpath {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when an energy term evaluates to a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, long layer, long particle)
      : std::runtime_error(what + " (layer " + std::to_string(layer) + ", particle " +
                           std::to_string(particle) + ")"),
        layer_(layer),
        particle_(particle) {}
  [[nodiscard]] long layer() const { return layer_; }
  [[nodiscard]] long particle() const { return particle_; }

 private:
  long layer_;
  long particle_;
};

/// Radius below which singular gradients are clamped.
inline constexpr double kSingularRadius = 1e-6;

enum class InternalKind { Entropy, PowerLaw };

struct InternalEnergySpec {
  InternalKind kind = InternalKind::Entropy;
  double m = 1.0;     // PowerLaw exponent
  double beta = 1.0;  // inverse temperature

  static InternalEnergySpec entropy(double beta = 1.0);
  static InternalEnergySpec power_law(double m, double beta = 1.0);
  void validate() const;
};

enum class PotentialKind { None, QuadraticGaussianTarget, StyblinskiTang, LogConfinement, Custom };

struct PotentialSpec {
  PotentialKind kind = PotentialKind::None;
  Vec mu;          // quadratic target mean
  Mat sigma;       // quadratic target covariance
  Mat precision;   // cached inverse of sigma
  double scale = 0.0;   // Styblinski-Tang prefactor
  double alpha1 = 1.0;  // log confinement numerator
  double alpha2 = 1.0;  // log confinement denominator
  std::function<double(const Vec&)> value_fn;
  std::function<Vec(const Vec&)> gradient_fn;
  /// Optional Hessian-vector product; central differences of gradient_fn otherwise.
  std::function<Vec(const Vec&, const Vec&)> hvp_fn;

  static PotentialSpec none();
  static PotentialSpec quadratic(const Vec& mu, const Mat& sigma);
  static PotentialSpec styblinski_tang(double scale);
  static PotentialSpec log_confinement(double alpha1, double alpha2);
  static PotentialSpec custom(std::function<double(const Vec&)> value,
                              std::function<Vec(const Vec&)> gradient,
                              std::function<Vec(const Vec&, const Vec&)> hvp = {});

  [[nodiscard]] bool active() const { return kind != PotentialKind::None; }
  /// Fixed dimension of the spec, if any.
  [[nodiscard]] std::optional<long> dimension() const;
  void validate() const;
};

enum class KernelKind { None, QuadraticLog, GaussianAttraction, Custom };

struct KernelSpec {
  KernelKind kind = KernelKind::None;
  double amplitude = 1.0;
  double width = 1.0;
  std::function<double(const Vec&)> value_fn;
  std::function<Vec(const Vec&)> gradient_fn;
  std::function<Vec(const Vec&, const Vec&)> hvp_fn;

  static KernelSpec none();
  static KernelSpec quadratic_log();
  static KernelSpec gaussian_attraction(double amplitude, double width);
  /// The kernel must be even: W(-x) = W(x).
  static KernelSpec custom(std::function<double(const Vec&)> value,
                           std::function<Vec(const Vec&)> gradient,
                           std::function<Vec(const Vec&, const Vec&)> hvp = {});

  [[nodiscard]] bool active() const { return kind != KernelKind::None; }
  void validate() const;
};

struct FreeEnergySpec {
  std::optional<InternalEnergySpec> internal;
  PotentialSpec potential;
  KernelSpec kernel;
  double mass = 1.0;

  void validate() const;
  [[nodiscard]] bool has_internal() const { return internal.has_value(); }
};

// Pointwise evaluations.

/// Internal-energy contribution to the velocity at a point with log-density
/// `log_p` (of the mass-carrying density) and score `score`.
Vec internal_velocity_term(double log_p, const Vec& score,
                           const std::optional<InternalEnergySpec>& spec);

double potential_value(const Vec& x, const PotentialSpec& spec);
Vec potential_gradient(const Vec& x, const PotentialSpec& spec);
Vec potential_hvp(const Vec& x, const Vec& v, const PotentialSpec& spec);

double kernel_value(const Vec& x, const KernelSpec& spec);
Vec kernel_gradient(const Vec& x, const KernelSpec& spec);
Vec kernel_hvp(const Vec& x, const Vec& v, const KernelSpec& spec);

/// Monte Carlo free energy of the particle batch `positions` (N x d), whose
/// probability log-densities are `log_q`. The mass-carrying density is mass*q.
double free_energy_estimate(const Mat& positions, const Vec& log_q, const FreeEnergySpec& spec);

// Batch evaluations on N x d particle matrices.

Vec potential_values(const Mat& x, const PotentialSpec& spec);
Mat potential_gradients(const Mat& x, const PotentialSpec& spec);
/// -(weight) * sum_{j != i} grad W(x_i - x_j) for every i.
Mat interaction_velocity(const Mat& x, const KernelSpec& spec, double weight);
/// Mean of W(x_i - x_j) over ordered pairs i != j.
double interaction_mean(const Mat& x, const KernelSpec& spec);

// Differentiable versions. Their backward rules use Hessian-vector products
// and support a single level of differentiation.

ad::Var potential_values(const ad::Var& x, const PotentialSpec& spec);
ad::Var potential_gradients(const ad::Var& x, const PotentialSpec& spec);
ad::Var interaction_velocity(const ad::Var& x, const KernelSpec& spec, double weight);
ad::Var interaction_mean(const ad::Var& x, const KernelSpec& spec);

/// Per-particle internal-energy velocity term, -beta^-1 * U''(p) p * score,
/// from probability log-densities (N x 1) and scores (N x d).
template <class T>
T internal_velocity(const T& log_q, const T& score, const InternalEnergySpec& spec, double mass);

/// Per-particle beta^-1 U(p)/p with p = mass * q, from log q (N x 1).
template <class T>
T internal_energy_density(const T& log_q, const InternalEnergySpec& spec, double mass);

/// Differentiable free-energy estimate (1 x 1).
ad::Var free_energy_estimate(const ad::Var& positions, const ad::Var& log_q,
                             const FreeEnergySpec& spec);

}  // namespace wgpath
