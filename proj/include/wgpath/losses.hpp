#pragma once

// Training objectives: the Crank-Nicolson physical-time loss and the geometric
// action with its reparametrization and terminal-energy penalties. Scalar
// quantities are 1 x 1 matrices (plain or recorded) so the same code serves
// evaluation and differentiation.

#include "wgpath/autodiff.hpp"
#include "wgpath/velocity.hpp"

#include <string>
#include <vector>

namespace wgpath {

struct PhysicalTimeConfig {
  double horizon = 1.0;
  long steps = 1;
  /// Explicit timestamps t_0..t_K; empty means a uniform mesh on [0, horizon].
  std::vector<double> mesh;
  /// Per-segment weights; empty means all ones.
  std::vector<double> weights;

  void validate() const;
  [[nodiscard]] std::vector<double> times() const;
  [[nodiscard]] std::vector<double> step_sizes() const;
  [[nodiscard]] double weight(long k) const;
};

enum class ParametrizationPenalty { ArcLength, ArcAction };
std::string to_string(ParametrizationPenalty p);
ParametrizationPenalty penalty_from_string(const std::string& s);

struct GeometricConfig {
  double alpha_term = 1.0;
  double alpha_arc = 0.0;
  ParametrizationPenalty penalty = ParametrizationPenalty::ArcLength;
  void validate() const;
};

/// Per-segment terms w_k dt_k mean_i |dx/dt_k - (v_k + v_{k-1})/2|^2; the loss is their sum.
template <class T>
std::vector<T> physical_time_terms(const std::vector<T>& positions, const std::vector<T>& fields,
                                   const PhysicalTimeConfig& cfg);
template <class T>
T physical_time_loss(const std::vector<T>& positions, const std::vector<T>& fields,
                     const PhysicalTimeConfig& cfg);

/// Trapezoidal weighted arc length sum_k d_k (v_{k-1} + v_k) / 2.
template <class T>
T geometric_loss(const std::vector<T>& d, const std::vector<T>& v);
/// Population variance of d over its mean; zero for a degenerate path.
template <class T>
T arc_length_penalty(const std::vector<T>& d);
/// Population variance of the per-segment energy drops over their absolute mean.
template <class T>
T arc_action_penalty(const std::vector<T>& free_energy);

double physical_time_loss(const PathBatch& batch, const std::vector<Mat>& fields,
                          const PhysicalTimeConfig& cfg);
double geometric_loss(const PathDiagnostics& diag);
double arc_length_penalty(const PathDiagnostics& diag);
double arc_action_penalty(const Vec& free_energy);

struct LossParts {
  double path = 0.0;         // physical-time loss or geometric action
  double terminal = 0.0;     // free energy of the last layer
  double arc_penalty = 0.0;  // reparametrization penalty
  double total = 0.0;
};

/// J + alpha_term F(p_K) + alpha_arc * penalty.
double total_geometric_loss(const PathDiagnostics& diag, double terminal_energy,
                            const GeometricConfig& cfg);

}  // namespace wgpath
