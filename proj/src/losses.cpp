#include "wgpath/losses.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <type_traits>

namespace wgpath {

namespace {

void warn_once(std::atomic<bool>& flag, const char* msg) {
  if (!flag.exchange(true)) std::cerr << "warning: " << msg << "\n";
}

std::atomic<bool> g_degenerate_length{false};
std::atomic<bool> g_flat_energy{false};

Mat scalar(double v) { return Mat::Constant(1, 1, v); }

template <class T>
T sum_of(const std::vector<T>& xs) {
  T s = xs.front();
  for (size_t i = 1; i < xs.size(); ++i) s = ad::add(s, xs[i]);
  return s;
}

template <class T>
T zero_like(const T& x) {
  return ad::scale(x, 0.0);
}

}  // namespace

void PhysicalTimeConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("physical-time: steps must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("physical-time: horizon must be > 0");
  if (!mesh.empty()) {
    if (static_cast<long>(mesh.size()) != steps + 1) {
      throw std::invalid_argument("physical-time: mesh needs steps + 1 timestamps");
    }
    if (mesh.front() != 0.0) throw std::invalid_argument("physical-time: mesh must start at 0");
    for (size_t k = 1; k < mesh.size(); ++k) {
      if (!(mesh[k] > mesh[k - 1])) {
        throw std::invalid_argument("physical-time: mesh must be strictly increasing");
      }
    }
  }
  if (!weights.empty()) {
    if (static_cast<long>(weights.size()) != steps) {
      throw std::invalid_argument("physical-time: need one weight per segment");
    }
    for (double w : weights) {
      if (!(w > 0.0)) throw std::invalid_argument("physical-time: weights must be positive");
    }
  }
}

std::vector<double> PhysicalTimeConfig::times() const {
  if (!mesh.empty()) return mesh;
  std::vector<double> t(static_cast<size_t>(steps + 1));
  for (long k = 0; k <= steps; ++k) t[static_cast<size_t>(k)] = horizon * static_cast<double>(k) / static_cast<double>(steps);
  return t;
}

std::vector<double> PhysicalTimeConfig::step_sizes() const {
  const auto t = times();
  std::vector<double> dt;
  for (size_t k = 1; k < t.size(); ++k) dt.push_back(t[k] - t[k - 1]);
  return dt;
}

double PhysicalTimeConfig::weight(long k) const {
  return weights.empty() ? 1.0 : weights[static_cast<size_t>(k)];
}

std::string to_string(ParametrizationPenalty p) {
  return p == ParametrizationPenalty::ArcLength ? "arc_length" : "arc_action";
}

ParametrizationPenalty penalty_from_string(const std::string& s) {
  if (s == "arc_length") return ParametrizationPenalty::ArcLength;
  if (s == "arc_action") return ParametrizationPenalty::ArcAction;
  throw std::invalid_argument("unknown parametrization penalty '" + s + "'");
}

void GeometricConfig::validate() const {
  if (alpha_term < 0.0 || alpha_arc < 0.0) {
    throw std::invalid_argument("geometric: penalty weights must be nonnegative");
  }
}

template <class T>
std::vector<T> physical_time_terms(const std::vector<T>& positions, const std::vector<T>& fields,
                                   const PhysicalTimeConfig& cfg) {
  cfg.validate();
  const long k = static_cast<long>(positions.size()) - 1;
  if (k != cfg.steps || fields.size() != positions.size()) {
    throw std::invalid_argument("physical-time: layer count does not match the mesh");
  }
  const auto dt = cfg.step_sizes();
  std::vector<T> terms;
  for (long j = 1; j <= k; ++j) {
    const double h = dt[static_cast<size_t>(j - 1)];
    const auto& x1 = positions[static_cast<size_t>(j)];
    const auto& x0 = positions[static_cast<size_t>(j - 1)];
    const double n = static_cast<double>(x1.rows());
    const T defect = ad::sub(ad::scale(ad::sub(x1, x0), 1.0 / h),
                             ad::scale(ad::add(fields[static_cast<size_t>(j)],
                                               fields[static_cast<size_t>(j - 1)]),
                                       0.5));
    terms.push_back(ad::scale(ad::sum_all(ad::square(defect)), cfg.weight(j - 1) * h / n));
  }
  return terms;
}

template <class T>
T physical_time_loss(const std::vector<T>& positions, const std::vector<T>& fields,
                     const PhysicalTimeConfig& cfg) {
  return sum_of(physical_time_terms(positions, fields, cfg));
}

template <class T>
T geometric_loss(const std::vector<T>& d, const std::vector<T>& v) {
  if (v.size() != d.size() + 1 || d.empty()) {
    throw std::invalid_argument("geometric loss: need K lengths and K+1 velocity norms");
  }
  std::vector<T> terms;
  for (size_t k = 0; k < d.size(); ++k) {
    terms.push_back(ad::mul(d[k], ad::scale(ad::add(v[k], v[k + 1]), 0.5)));
  }
  return sum_of(terms);
}

namespace {

template <class T>
const Mat& value_of(const T& x) {
  if constexpr (std::is_same_v<T, Mat>) {
    return x;
  } else {
    return x.value();
  }
}

// Population variance over |mean|, zero when the mean vanishes.
template <class T>
T dispersion(const std::vector<T>& xs, std::atomic<bool>& flag, const char* msg) {
  const double k = static_cast<double>(xs.size());
  const T mean = ad::scale(sum_of(xs), 1.0 / k);
  const double m = value_of(mean)(0, 0);
  if (m == 0.0) {
    warn_once(flag, msg);
    return zero_like(mean);
  }
  std::vector<T> sq;
  for (const auto& x : xs) sq.push_back(ad::square(ad::sub(x, mean)));
  const T var = ad::scale(sum_of(sq), 1.0 / k);
  return ad::div(var, ad::scale(mean, m > 0 ? 1.0 : -1.0));
}

}  // namespace

template <class T>
T arc_length_penalty(const std::vector<T>& d) {
  if (d.size() < 2) throw std::invalid_argument("arc-length penalty: need at least two segments");
  return dispersion(d, g_degenerate_length, "degenerate path: zero mean segment length");
}

template <class T>
T arc_action_penalty(const std::vector<T>& free_energy) {
  if (free_energy.size() < 3) {
    throw std::invalid_argument("arc-action penalty: need at least two segments");
  }
  std::vector<T> drops;
  for (size_t k = 1; k < free_energy.size(); ++k) drops.push_back(ad::sub(free_energy[k], free_energy[k - 1]));
  return dispersion(drops, g_flat_energy, "flat-energy path: zero mean energy drop");
}

#define WGPATH_INSTANTIATE(T)                                                                    \
  template std::vector<T> physical_time_terms<T>(const std::vector<T>&, const std::vector<T>&,   \
                                                 const PhysicalTimeConfig&);                     \
  template T physical_time_loss<T>(const std::vector<T>&, const std::vector<T>&,                 \
                                   const PhysicalTimeConfig&);                                   \
  template T geometric_loss<T>(const std::vector<T>&, const std::vector<T>&);                    \
  template T arc_length_penalty<T>(const std::vector<T>&);                                       \
  template T arc_action_penalty<T>(const std::vector<T>&);

WGPATH_INSTANTIATE(Mat)
WGPATH_INSTANTIATE(ad::Var)
#undef WGPATH_INSTANTIATE

namespace {

std::vector<Mat> scalars(const Vec& v) {
  std::vector<Mat> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(scalar(v(i)));
  return out;
}

}  // namespace

double physical_time_loss(const PathBatch& batch, const std::vector<Mat>& fields,
                          const PhysicalTimeConfig& cfg) {
  return physical_time_loss(batch.positions, fields, cfg)(0, 0);
}

double geometric_loss(const PathDiagnostics& diag) {
  return geometric_loss(scalars(diag.d), scalars(diag.v))(0, 0);
}

double arc_length_penalty(const PathDiagnostics& diag) {
  return arc_length_penalty(scalars(diag.d))(0, 0);
}

double arc_action_penalty(const Vec& free_energy) {
  return arc_action_penalty(scalars(free_energy))(0, 0);
}

double total_geometric_loss(const PathDiagnostics& diag, double terminal_energy,
                            const GeometricConfig& cfg) {
  cfg.validate();
  double total = geometric_loss(diag) + cfg.alpha_term * terminal_energy;
  if (cfg.alpha_arc > 0.0) {
    const double pen = cfg.penalty == ParametrizationPenalty::ArcLength
                           ? arc_length_penalty(diag)
                           : arc_action_penalty(diag.free_energy);
    total += cfg.alpha_arc * pen;
  }
  return total;
}

}  // namespace wgpath
