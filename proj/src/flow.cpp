#include "wgpath/flow.hpp"

#include "wgpath/energy.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace wgpath {

namespace {

using ad::Var;

Mat lift(const Mat& /*like*/, Mat v) { return v; }
Var lift(const Var& like, Mat v) { return like.tape()->constant(std::move(v)); }
const Mat& val(const Mat& m) { return m; }
const Mat& val(const Var& v) { return v.value(); }

ad::IndexList range(long lo, long hi) {
  ad::IndexList r;
  for (long i = lo; i < hi; ++i) r.push_back(i);
  return r;
}

template <class T>
T activate(const T& h, const FlowArchitecture& arch) {
  switch (arch.activation) {
    case Activation::Tanh:
      return ad::tanh(h);
    case Activation::LeakyReLU:
      return ad::leaky_relu(h, arch.leaky_slope);
    case Activation::SiLU:
      return ad::silu(h);
  }
  return h;
}

template <class T>
T conditioner(const T& in, const std::vector<T>& p, long off, const FlowArchitecture& arch) {
  T h = in;
  for (long l = 0; l < arch.depth; ++l) {
    h = ad::linear(h, p[static_cast<size_t>(off + 2 * l)], p[static_cast<size_t>(off + 2 * l + 1)]);
    if (l + 1 < arch.depth) h = activate(h, arch);
  }
  return h;
}

long conditioner_outputs(const FlowArchitecture& arch, long nb) {
  return arch.coupling == CouplingKind::Affine ? 2 * nb : nb * (3 * arch.bins - 1);
}

// Knot positions and derivatives of the monotone rational-quadratic spline.
template <class T>
struct SplineKnots {
  T widths, heights, xk, yk, left, right;  // N x (nb * bins)
};

template <class T>
T bin_sizes(const T& raw, const FlowArchitecture& arch) {
  const long k = arch.bins;
  const Mat& r = val(raw);
  Mat mx(r.rows(), r.cols());
  for (long c = 0; c < r.cols(); c += k) {
    mx.middleCols(c, k) = r.middleCols(c, k).rowwise().maxCoeff().replicate(1, k);
  }
  const T e = ad::exp(ad::sub(raw, lift(raw, mx)));
  const T w = ad::div(e, ad::group_broadcast(ad::group_sum(e, k), k));
  const double span = 2.0 * arch.bound;
  return ad::add_scalar(ad::scale(w, span * (1.0 - arch.min_bin * static_cast<double>(k))),
                        span * arch.min_bin);
}

template <class T>
SplineKnots<T> spline_knots(const T& h, long nb, const FlowArchitecture& arch) {
  const long k = arch.bins;
  SplineKnots<T> s;
  s.widths = bin_sizes(ad::gather_cols(h, range(0, nb * k)), arch);
  s.heights = bin_sizes(ad::gather_cols(h, range(nb * k, 2 * nb * k)), arch);
  s.xk = ad::add_scalar(ad::group_cumsum_exclusive(s.widths, k), -arch.bound);
  s.yk = ad::add_scalar(ad::group_cumsum_exclusive(s.heights, k), -arch.bound);
  const double shift = std::log(std::expm1(1.0 - arch.min_derivative));
  const T raw_d = ad::gather_cols(h, range(2 * nb * k, 2 * nb * k + nb * (k - 1)));
  const T interior = ad::add_scalar(ad::softplus(ad::add_scalar(raw_d, shift)), arch.min_derivative);
  ad::IndexList to_left;
  ad::IndexList to_right;
  Mat ones_left = Mat::Zero(val(h).rows(), nb * k);
  Mat ones_right = Mat::Zero(val(h).rows(), nb * k);
  for (long c = 0; c < nb; ++c) {
    for (long j = 0; j + 1 < k; ++j) {
      to_left.push_back(c * k + j + 1);
      to_right.push_back(c * k + j);
    }
    ones_left.col(c * k).setOnes();
    ones_right.col(c * k + k - 1).setOnes();
  }
  s.left = ad::add(ad::scatter_cols(interior, to_left, nb * k), lift(h, ones_left));
  s.right = ad::add(ad::scatter_cols(interior, to_right, nb * k), lift(h, ones_right));
  return s;
}

// Bin index of every element given per-row knot starts; -1 outside the box.
Eigen::MatrixXi locate(const Mat& v, const Mat& knots, long bins, double bound) {
  Eigen::MatrixXi idx(v.rows(), v.cols());
  for (long c = 0; c < v.cols(); ++c) {
    for (long i = 0; i < v.rows(); ++i) {
      const double x = v(i, c);
      if (!(std::abs(x) < bound)) {
        idx(i, c) = -1;
        continue;
      }
      long b = 0;
      while (b + 1 < bins && knots(i, c * bins + b + 1) <= x) ++b;
      idx(i, c) = static_cast<int>(b);
    }
  }
  return idx;
}

template <class T>
struct BlockResult {
  T y_b;     // transformed coordinates
  T deriv;   // elementwise derivative of y_b with respect to x_b
  T logdet;  // N x 1
};

template <class T>
BlockResult<T> affine_block(const T& x_a, const T& x_b, const std::vector<T>& p, long off,
                            const FlowArchitecture& arch) {
  const long nb = val(x_b).cols();
  const T h = conditioner(x_a, p, off, arch);
  const double a = arch.scale_amplitude;
  const T s = ad::scale(ad::tanh(ad::scale(ad::gather_cols(h, range(0, nb)), 1.0 / a)), a);
  const T es = ad::exp(s);
  BlockResult<T> r;
  r.y_b = ad::add(ad::mul(x_b, es), ad::gather_cols(h, range(nb, 2 * nb)));
  r.deriv = es;
  r.logdet = ad::sum_cols(s);
  return r;
}

template <class T>
BlockResult<T> spline_block(const T& x_a, const T& x_b, const std::vector<T>& p, long off,
                            const FlowArchitecture& arch) {
  const long nb = val(x_b).cols();
  const long n = val(x_b).rows();
  const long k = arch.bins;
  const T h = conditioner(x_a, p, off, arch);
  const SplineKnots<T> s = spline_knots(h, nb, arch);
  const Eigen::MatrixXi loc = locate(val(x_b), val(s.xk), k, arch.bound);
  auto inside = std::make_shared<Mat>(n, nb);
  auto outside = std::make_shared<Mat>(n, nb);
  auto idx = std::make_shared<Eigen::MatrixXi>(n, nb);
  for (long c = 0; c < nb; ++c) {
    for (long i = 0; i < n; ++i) {
      const bool in = loc(i, c) >= 0;
      (*inside)(i, c) = in ? 1.0 : 0.0;
      (*outside)(i, c) = in ? 0.0 : 1.0;
      (*idx)(i, c) = in ? loc(i, c) : 0;
    }
  }
  const ad::ElemIndex eidx = idx;
  const std::shared_ptr<const Mat> in_mask = inside;
  const std::shared_ptr<const Mat> out_mask = outside;
  const T wk = ad::gather_elem(s.widths, eidx, k);
  const T hk = ad::gather_elem(s.heights, eidx, k);
  const T xk = ad::gather_elem(s.xk, eidx, k);
  const T yk = ad::gather_elem(s.yk, eidx, k);
  const T dk = ad::gather_elem(s.left, eidx, k);
  const T dk1 = ad::gather_elem(s.right, eidx, k);
  // Elements outside the box are evaluated at the left box edge, where the
  // spline is the identity, and then replaced by the identity tail.
  const T x_eff = ad::add(ad::mul_const(x_b, in_mask), lift(x_b, *outside * -arch.bound));
  const T xi = ad::div(ad::sub(x_eff, xk), wk);
  const T one_minus = ad::add_scalar(ad::neg(xi), 1.0);
  const T slope = ad::div(hk, wk);
  const T om = ad::mul(xi, one_minus);
  const T denom = ad::add(slope, ad::mul(ad::sub(ad::add(dk1, dk), ad::scale(slope, 2.0)), om));
  const T numer = ad::mul(hk, ad::add(ad::mul(slope, ad::square(xi)), ad::mul(dk, om)));
  const T y_in = ad::add(yk, ad::div(numer, denom));
  const T dnum = ad::mul(ad::square(slope),
                         ad::add(ad::add(ad::mul(dk1, ad::square(xi)), ad::scale(ad::mul(slope, om), 2.0)),
                                 ad::mul(dk, ad::square(one_minus))));
  const T deriv_in = ad::div(dnum, ad::square(denom));
  BlockResult<T> r;
  r.y_b = ad::add(ad::mul_const(y_in, in_mask), ad::mul_const(x_b, out_mask));
  r.deriv = ad::add(ad::mul_const(deriv_in, in_mask), lift(x_b, *outside));
  r.logdet = ad::sum_cols(ad::mul_const(ad::log(deriv_in), in_mask));
  return r;
}

template <class T>
BlockResult<T> block_forward(const T& x_a, const T& x_b, const std::vector<T>& p, long off,
                             const FlowArchitecture& arch) {
  if (arch.coupling == CouplingKind::Affine) return affine_block(x_a, x_b, p, off, arch);
  return spline_block(x_a, x_b, p, off, arch);
}

Mat spline_inverse(const Mat& y_b, const Mat& h, const FlowArchitecture& arch) {
  const long nb = y_b.cols();
  const long k = arch.bins;
  const SplineKnots<Mat> s = spline_knots(h, nb, arch);
  const Eigen::MatrixXi loc = locate(y_b, s.yk, k, arch.bound);
  Mat x = y_b;
  for (long c = 0; c < nb; ++c) {
    for (long i = 0; i < y_b.rows(); ++i) {
      if (loc(i, c) < 0) continue;
      const long col = c * k + loc(i, c);
      const double wk = s.widths(i, col);
      const double hk = s.heights(i, col);
      const double sl = hk / wk;
      const double d0 = s.left(i, col);
      const double d1 = s.right(i, col);
      const double dy = y_b(i, c) - s.yk(i, col);
      const double sum = d1 + d0 - 2.0 * sl;
      const double qa = hk * (sl - d0) + dy * sum;
      const double qb = hk * d0 - dy * sum;
      const double qc = -sl * dy;
      const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
      const double xi = 2.0 * qc / (-qb - std::sqrt(disc));
      x(i, c) = s.xk(i, col) + xi * wk;
    }
  }
  return x;
}

void check_layer(const Mat& x, const Mat& logq, long layer) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!x.row(i).allFinite() || !std::isfinite(logq(i, 0))) {
      throw EvaluationError("flow produced a non-finite value", layer, i);
    }
  }
}

Mat as_col(const Vec& v) { return Mat(v); }

}  // namespace

std::string to_string(CouplingKind k) { return k == CouplingKind::Affine ? "affine" : "spline"; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh:
      return "tanh";
    case Activation::LeakyReLU:
      return "leaky_relu";
    case Activation::SiLU:
      return "silu";
  }
  return "?";
}

CouplingKind coupling_from_string(const std::string& s) {
  if (s == "affine") return CouplingKind::Affine;
  if (s == "spline") return CouplingKind::Spline;
  throw std::invalid_argument("unknown coupling kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "leaky_relu") return Activation::LeakyReLU;
  if (s == "silu") return Activation::SiLU;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

void FlowArchitecture::validate() const {
  if (dim < 1 || layers < 1 || sub_blocks < 1 || depth < 1 || width < 1) {
    throw std::invalid_argument("flow: dim, layers, sub_blocks, depth and width must be positive");
  }
  if (!(scale_amplitude > 0.0)) throw std::invalid_argument("flow: scale amplitude must be > 0");
  if (coupling == CouplingKind::Spline) {
    if (bins < 2) throw std::invalid_argument("flow: spline needs at least two bins");
    if (!(bound > 0.0)) throw std::invalid_argument("flow: spline bound must be > 0");
    if (!(min_bin > 0.0) || min_bin * static_cast<double>(bins) >= 1.0) {
      throw std::invalid_argument("flow: min_bin * bins must be below 1");
    }
    if (!(min_derivative > 0.0) || min_derivative >= 1.0) {
      throw std::invalid_argument("flow: min_derivative must lie in (0, 1)");
    }
  }
}

FlowModel::FlowModel(FlowArchitecture arch, BaseDistribution base, std::uint64_t init_seed)
    : arch_(arch), base_(std::move(base)) {
  arch_.validate();
  base_.validate();
  if (base_.dim != arch_.dim) throw std::invalid_argument("flow: base dimension mismatch");
  build_masks();
  Rng rng(init_seed);
  for (long b = 0; b < sub_block_count(); ++b) {
    const long nin = static_cast<long>(cond_[static_cast<size_t>(b)].size());
    const long nout = conditioner_outputs(arch_, static_cast<long>(trans_[static_cast<size_t>(b)].size()));
    for (long l = 0; l < arch_.depth; ++l) {
      const long in = l == 0 ? nin : arch_.width;
      const long out = l + 1 == arch_.depth ? nout : arch_.width;
      Mat w(in, out);
      Mat bias(1, out);
      if (l + 1 == arch_.depth) {
        w.setZero();
        bias.setZero();
      } else {
        const double lim = 1.0 / std::sqrt(static_cast<double>(std::max<long>(in, 1)));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < bias.size(); ++i) bias.data()[i] = u(rng);
      }
      params_.push_back(std::move(w));
      params_.push_back(std::move(bias));
    }
  }
}

void FlowModel::build_masks() {
  cond_.clear();
  trans_.clear();
  for (long k = 0; k < arch_.layers; ++k) {
    for (long j = 0; j < arch_.sub_blocks; ++j) {
      ad::IndexList a;
      ad::IndexList b;
      for (long c = 0; c < arch_.dim; ++c) {
        if (arch_.dim == 1 || (c + j) % 2 == 0) {
          b.push_back(c);
        } else {
          a.push_back(c);
        }
      }
      cond_.push_back(std::move(a));
      trans_.push_back(std::move(b));
    }
  }
}

const ad::IndexList& FlowModel::conditioning(long b) const { return cond_[static_cast<size_t>(b)]; }
const ad::IndexList& FlowModel::transformed(long b) const { return trans_[static_cast<size_t>(b)]; }

long FlowModel::parameter_count() const {
  long n = 0;
  for (const auto& p : params_) n += static_cast<long>(p.size());
  return n;
}

Vec FlowModel::flat_params() const {
  Vec flat(parameter_count());
  long o = 0;
  for (const auto& p : params_) {
    flat.segment(o, p.size()) = Eigen::Map<const Vec>(p.data(), p.size());
    o += static_cast<long>(p.size());
  }
  return flat;
}

void FlowModel::set_flat_params(const Vec& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("flow: parameter count mismatch");
  long o = 0;
  for (auto& p : params_) {
    Eigen::Map<Vec>(p.data(), p.size()) = flat.segment(o, p.size());
    o += static_cast<long>(p.size());
  }
}

void FlowModel::randomize(std::uint64_t seed, double final_scale) {
  Rng rng(seed);
  for (long b = 0; b < sub_block_count(); ++b) {
    for (long l = 0; l < arch_.depth; ++l) {
      auto& w = params_[static_cast<size_t>(block_param_offset(b) + 2 * l)];
      auto& bias = params_[static_cast<size_t>(block_param_offset(b) + 2 * l + 1)];
      const double lim = (l + 1 == arch_.depth ? final_scale : 1.0) /
                         std::sqrt(static_cast<double>(std::max<Eigen::Index>(w.rows(), 1)));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
      for (Eigen::Index i = 0; i < bias.size(); ++i) bias.data()[i] = u(rng);
    }
  }
}

PathBatch FlowModel::push_forward(const Mat& z) const {
  if (z.cols() != arch_.dim) throw std::invalid_argument("push_forward: dimension mismatch");
  PathBatch batch;
  batch.z = z;
  Mat x = z;
  Vec logq = base_.log_density(z);
  batch.positions.push_back(x);
  batch.log_densities.push_back(logq);
  for (long k = 0; k < arch_.layers; ++k) {
    Vec ld = Vec::Zero(z.rows());
    for (long j = 0; j < arch_.sub_blocks; ++j) {
      const long b = k * arch_.sub_blocks + j;
      const auto& a_idx = conditioning(b);
      const auto& b_idx = transformed(b);
      const Mat x_a = ad::gather_cols(x, a_idx);
      const Mat x_b = ad::gather_cols(x, b_idx);
      const auto r = block_forward<Mat>(x_a, x_b, params_, block_param_offset(b), arch_);
      x = ad::scatter_cols(x_a, a_idx, arch_.dim) + ad::scatter_cols(r.y_b, b_idx, arch_.dim);
      ld += r.logdet.col(0);
    }
    logq -= ld;
    check_layer(x, as_col(logq), k + 1);
    batch.positions.push_back(x);
    batch.log_densities.push_back(logq);
    batch.layer_logdets.push_back(ld);
  }
  return batch;
}

Mat FlowModel::inverse(long k, const Mat& x) const {
  if (k < 0 || k > arch_.layers) throw std::out_of_range("inverse: layer index out of range");
  Mat y = x;
  for (long b = k * arch_.sub_blocks - 1; b >= 0; --b) {
    const auto& a_idx = conditioning(b);
    const auto& b_idx = transformed(b);
    const Mat y_a = ad::gather_cols(y, a_idx);
    const Mat y_b = ad::gather_cols(y, b_idx);
    const Mat h = conditioner<Mat>(y_a, params_, block_param_offset(b), arch_);
    Mat x_b;
    if (arch_.coupling == CouplingKind::Affine) {
      const long nb = static_cast<long>(b_idx.size());
      const double a = arch_.scale_amplitude;
      const Mat s = a * (h.leftCols(nb) / a).array().tanh();
      x_b = (y_b - h.middleCols(nb, nb)).cwiseProduct((-s).array().exp().matrix());
    } else {
      x_b = spline_inverse(y_b, h, arch_);
    }
    y = ad::scatter_cols(y_a, a_idx, arch_.dim) + ad::scatter_cols(x_b, b_idx, arch_.dim);
  }
  return y;
}

Vec FlowModel::log_density(long k, const Mat& x) const {
  const Mat z = inverse(k, x);
  Vec logq = base_.log_density(z);
  Mat y = z;
  for (long b = 0; b < k * arch_.sub_blocks; ++b) {
    const auto& a_idx = conditioning(b);
    const auto& b_idx = transformed(b);
    const Mat y_a = ad::gather_cols(y, a_idx);
    const auto r = block_forward<Mat>(y_a, ad::gather_cols(y, b_idx), params_,
                                      block_param_offset(b), arch_);
    y = ad::scatter_cols(y_a, a_idx, arch_.dim) + ad::scatter_cols(r.y_b, b_idx, arch_.dim);
    logq -= r.logdet.col(0);
  }
  return logq;
}

std::vector<Mat> FlowModel::scores(const Mat& z) const {
  ad::Tape tape;
  const TapePath path = record(tape, z, ScoreMode::Values);
  std::vector<Mat> out;
  for (const auto& s : path.scores) out.push_back(s.value());
  return out;
}

Mat FlowModel::score(long k, const PathBatch& batch) const {
  if (k < 0 || k > arch_.layers) throw std::out_of_range("score: layer index out of range");
  return scores(batch.z)[static_cast<size_t>(k)];
}

TapePath FlowModel::record(ad::Tape& tape, const Mat& z, ScoreMode mode) const {
  if (z.cols() != arch_.dim) throw std::invalid_argument("record: dimension mismatch");
  TapePath path;
  for (const auto& p : params_) path.params.push_back(tape.constant(p));
  Var x = tape.constant(z);
  Var logq = tape.constant(as_col(base_.log_density(z)));
  Var score;
  if (mode != ScoreMode::None) score = tape.constant(base_.score(z));
  path.positions.push_back(x);
  path.log_q.push_back(logq);
  if (mode != ScoreMode::None) path.scores.push_back(score);
  const bool spline = arch_.coupling == CouplingKind::Spline;
  for (long k = 0; k < arch_.layers; ++k) {
    for (long j = 0; j < arch_.sub_blocks; ++j) {
      const long b = k * arch_.sub_blocks + j;
      const auto& a_idx = conditioning(b);
      const auto& b_idx = transformed(b);
      const Var x_a = ad::gather_cols(x, a_idx);
      const Var x_b = ad::gather_cols(x, b_idx);
      const auto r = block_forward<Var>(x_a, x_b, path.params, block_param_offset(b), arch_);
      const Var y = ad::add(ad::scatter_cols(x_a, a_idx, arch_.dim),
                            ad::scatter_cols(r.y_b, b_idx, arch_.dim));
      logq = ad::sub(logq, r.logdet);
      // The score transforms with the inverse transpose Jacobian of the block:
      // first the triangular solve on the transformed coordinates, then one
      // vector-Jacobian product for the conditioning coordinates.
      if (mode == ScoreMode::Differentiable) {
        const Var s_a = ad::gather_cols(score, a_idx);
        Var g_b = ad::gather_cols(score, b_idx);
        if (spline) g_b = ad::sub(g_b, tape.gradient_graph({r.logdet}, {Var()}, {x_b})[0]);
        const Var u_b = ad::div(g_b, r.deriv);
        Var out = ad::scatter_cols(u_b, b_idx, arch_.dim);
        if (!a_idx.empty()) {
          const Var back = tape.gradient_graph({r.logdet, r.y_b}, {Var(), u_b}, {x_a})[0];
          out = ad::add(out, ad::scatter_cols(ad::sub(s_a, back), a_idx, arch_.dim));
        }
        score = out;
      } else if (mode == ScoreMode::Values) {
        const Mat& sv = score.value();
        Mat g_b = ad::gather_cols(sv, b_idx);
        if (spline) g_b -= tape.gradient({r.logdet}, {Mat()}, {x_b})[0];
        const Mat u_b = g_b.cwiseQuotient(r.deriv.value());
        Mat out = ad::scatter_cols(u_b, b_idx, arch_.dim);
        if (!a_idx.empty()) {
          const Mat back = tape.gradient({r.logdet, r.y_b}, {Mat(), u_b}, {x_a})[0];
          out += ad::scatter_cols(Mat(ad::gather_cols(sv, a_idx) - back), a_idx, arch_.dim);
        }
        score = tape.constant(std::move(out));
      }
      x = y;
    }
    check_layer(x.value(), logq.value(), k + 1);
    path.positions.push_back(x);
    path.log_q.push_back(logq);
    if (mode != ScoreMode::None) path.scores.push_back(score);
  }
  return path;
}

}  // namespace wgpath
