#include "wgpath/velocity.hpp"

#include <cmath>

namespace wgpath {

Mat empirical_velocity(const Mat& x, const Vec& log_q, const Mat& score,
                       const FreeEnergySpec& spec) {
  const double n = static_cast<double>(x.rows());
  Mat v = Mat::Zero(x.rows(), x.cols());
  if (spec.internal) {
    if (score.rows() != x.rows() || score.cols() != x.cols()) {
      throw std::invalid_argument("velocity: internal energy needs the layer score");
    }
    v = internal_velocity(Mat(log_q), score, *spec.internal, spec.mass);
  }
  if (spec.potential.active()) v -= potential_gradients(x, spec.potential);
  if (spec.kernel.active()) {
    if (x.rows() < 2) throw std::invalid_argument("velocity: interaction needs two particles");
    v += interaction_velocity(x, spec.kernel, spec.mass / n);
  }
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    if (!v.row(i).allFinite()) throw EvaluationError("velocity is not finite", -1, i);
  }
  return v;
}

ad::Var empirical_velocity(const ad::Var& x, const ad::Var& log_q, const ad::Var& score,
                           const FreeEnergySpec& spec) {
  const double n = static_cast<double>(x.rows());
  ad::Var v;
  auto accumulate = [&v](const ad::Var& term, bool subtract) {
    if (!v.valid()) {
      v = subtract ? ad::neg(term) : term;
    } else {
      v = subtract ? ad::sub(v, term) : ad::add(v, term);
    }
  };
  if (spec.internal) {
    if (!score.valid()) throw std::invalid_argument("velocity: internal energy needs the layer score");
    accumulate(internal_velocity(log_q, score, *spec.internal, spec.mass), false);
  }
  if (spec.potential.active()) accumulate(potential_gradients(x, spec.potential), true);
  if (spec.kernel.active()) {
    if (x.rows() < 2) throw std::invalid_argument("velocity: interaction needs two particles");
    accumulate(interaction_velocity(x, spec.kernel, spec.mass / n), false);
  }
  if (!v.valid()) v = x.tape()->constant(Mat::Zero(x.rows(), x.cols()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    if (!v.value().row(i).allFinite()) throw EvaluationError("velocity is not finite", -1, i);
  }
  return v;
}

std::vector<Mat> empirical_velocities(const PathBatch& batch, const std::vector<Mat>& scores,
                                      const FreeEnergySpec& spec) {
  std::vector<Mat> out;
  for (size_t k = 0; k < batch.positions.size(); ++k) {
    try {
      out.push_back(empirical_velocity(batch.positions[k], batch.log_densities[k],
                                       spec.internal ? scores.at(k) : Mat(), spec));
    } catch (const EvaluationError& e) {
      throw EvaluationError(e.what(), static_cast<long>(k), e.particle());
    }
  }
  return out;
}

template <class T>
T segment_length(const T& x_prev, const T& x_next) {
  const double n = static_cast<double>(x_prev.rows());
  return ad::sqrt(ad::scale(ad::sum_all(ad::square(ad::sub(x_next, x_prev))), 1.0 / n));
}

template <class T>
T velocity_norm(const T& field) {
  const double n = static_cast<double>(field.rows());
  return ad::sqrt(ad::scale(ad::sum_all(ad::square(field)), 1.0 / n));
}

template Mat segment_length<Mat>(const Mat&, const Mat&);
template ad::Var segment_length<ad::Var>(const ad::Var&, const ad::Var&);
template Mat velocity_norm<Mat>(const Mat&);
template ad::Var velocity_norm<ad::Var>(const ad::Var&);

PathDiagnostics segment_and_velocity_norms(const PathBatch& batch, const std::vector<Mat>& fields) {
  const long k = batch.layers();
  if (static_cast<long>(fields.size()) != k + 1) {
    throw std::invalid_argument("diagnostics: need one velocity field per layer");
  }
  PathDiagnostics diag;
  diag.d.resize(k);
  diag.v.resize(k + 1);
  const double n = static_cast<double>(batch.z.rows());
  for (long j = 0; j <= k; ++j) diag.v(j) = velocity_norm(fields[static_cast<size_t>(j)])(0, 0);
  for (long j = 1; j <= k; ++j) {
    const Mat dx = batch.positions[static_cast<size_t>(j)] - batch.positions[static_cast<size_t>(j - 1)];
    diag.d(j - 1) = std::sqrt(dx.squaredNorm() / n);
    const Mat avg = 0.5 * (fields[static_cast<size_t>(j)] + fields[static_cast<size_t>(j - 1)]);
    const double avg_norm = std::sqrt(avg.squaredNorm() / n);
    if (diag.d(j - 1) > 0.0 && avg_norm > 0.0) {
      const double c = dx.cwiseProduct(avg).sum() / n / (diag.d(j - 1) * avg_norm);
      diag.cosine.emplace_back(std::clamp(c, -1.0, 1.0));
    } else {
      diag.cosine.emplace_back(std::nullopt);
    }
  }
  return diag;
}

PathDiagnostics diagnose(const FlowModel& model, const Mat& z, const FreeEnergySpec& spec) {
  const PathBatch batch = model.push_forward(z);
  std::vector<Mat> scores;
  if (spec.internal) scores = model.scores(z);
  const auto fields = empirical_velocities(batch, scores, spec);
  PathDiagnostics diag = segment_and_velocity_norms(batch, fields);
  diag.free_energy.resize(batch.layers() + 1);
  for (long j = 0; j <= batch.layers(); ++j) {
    diag.free_energy(j) = free_energy_estimate(batch.positions[static_cast<size_t>(j)],
                                               batch.log_densities[static_cast<size_t>(j)], spec);
  }
  return diag;
}

}  // namespace wgpath
