#pragma once

// Empirical driving velocity of the free energy and per-layer path statistics.

#include "wgpath/autodiff.hpp"
#include "wgpath/energy.hpp"
#include "wgpath/flow.hpp"

#include <optional>
#include <vector>

namespace wgpath {

/// Velocity at each particle of one layer: internal term from the score, minus
/// the potential gradient, minus the batch interaction sum with weight mass/N.
/// `score` may be empty when the energy has no internal term.
Mat empirical_velocity(const Mat& x, const Vec& log_q, const Mat& score,
                       const FreeEnergySpec& spec);
ad::Var empirical_velocity(const ad::Var& x, const ad::Var& log_q, const ad::Var& score,
                           const FreeEnergySpec& spec);

/// Velocity fields of every layer of a batch.
std::vector<Mat> empirical_velocities(const PathBatch& batch, const std::vector<Mat>& scores,
                                      const FreeEnergySpec& spec);

struct PathDiagnostics {
  Vec d;  // K segment lengths
  Vec v;  // K+1 velocity norms
  std::vector<std::optional<double>> cosine;  // K alignments; empty when undefined
  Vec free_energy;                            // K+1 values, empty if not computed
  [[nodiscard]] long segments() const { return static_cast<long>(d.size()); }
};

/// Root-mean-square displacement between consecutive layers.
template <class T>
T segment_length(const T& x_prev, const T& x_next);
/// Root-mean-square magnitude of a velocity field.
template <class T>
T velocity_norm(const T& field);

PathDiagnostics segment_and_velocity_norms(const PathBatch& batch, const std::vector<Mat>& fields);

/// Full diagnostics of a model on base samples z, including free energies.
PathDiagnostics diagnose(const FlowModel& model, const Mat& z, const FreeEnergySpec& spec);

}  // namespace wgpath
