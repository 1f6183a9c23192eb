#include "doctest.h"
#include "wgpath/autodiff.hpp"

#include <functional>
#include <memory>
#include <random>

using namespace wgpath::ad;

namespace {

Mat random_mat(Index r, Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Central differences of a scalar function of one matrix argument.
Mat numeric_gradient(const std::function<double(const Mat&)>& f, const Mat& x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    Mat xp = x;
    Mat xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    g.data()[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

double rel_err(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

// A composite exercising most ops; returns a 1 x 1 value.
Var composite(const Var& x, const Var& w, const Var& b) {
  const Var h = tanh(linear(x, w, b));
  const Var s = silu(h);
  const Var e = exp(scale(sigmoid(s), 0.5));
  const Var q = div(add(square(e), softplus(h)), add_scalar(square(h), 1.0));
  const Var c = group_cumsum_exclusive(q, 2);
  const Var r = mul_col(c, sum_cols(log(add_scalar(square(x), 1.0))));
  const Var t = matmul_tn(r, sub(q, neg(h)));
  const Var u = sum_rows(leaky_relu(r, 0.1));
  return add(sum_all(t), mean_all(mul(broadcast_rows(u, r.rows()), q)));
}

}  // namespace

TEST_CASE("first-order gradients match central differences") {
  std::mt19937_64 rng(1);
  const Mat x0 = random_mat(5, 3, rng);
  const Mat w0 = random_mat(3, 4, rng);
  const Mat b0 = random_mat(1, 4, rng);
  auto eval = [&](const Mat& x, const Mat& w, const Mat& b) {
    Tape t;
    return composite(t.constant(x), t.constant(w), t.constant(b)).scalar();
  };
  Tape t;
  const Var x = t.constant(x0);
  const Var w = t.constant(w0);
  const Var b = t.constant(b0);
  const Var f = composite(x, w, b);
  const auto g = t.gradient({f}, {Mat()}, {x, w, b});
  CHECK(rel_err(g[0], numeric_gradient([&](const Mat& m) { return eval(m, w0, b0); }, x0)) < 1e-7);
  CHECK(rel_err(g[1], numeric_gradient([&](const Mat& m) { return eval(x0, m, b0); }, w0)) < 1e-7);
  CHECK(rel_err(g[2], numeric_gradient([&](const Mat& m) { return eval(x0, w0, m); }, b0)) < 1e-7);
  // The recorded sweep gives the same values as the plain one.
  const auto gg = t.gradient_graph({f}, {Var()}, {x, w, b});
  for (int i = 0; i < 3; ++i) CHECK(rel_err(gg[static_cast<size_t>(i)].value(), g[static_cast<size_t>(i)]) < 1e-14);
}

TEST_CASE("second-order: parameter gradient of an input gradient") {
  std::mt19937_64 rng(2);
  const Mat x0 = random_mat(6, 2, rng);
  const Mat w0 = random_mat(2, 4, rng);
  const Mat b0 = random_mat(1, 4, rng);
  const Mat probe = random_mat(6, 2, rng);
  // L(w) = <probe, d/dx f(x, w, b)>
  auto loss = [&](Tape& t, const Var& x, const Var& w, const Var& b) {
    const Var f = composite(x, w, b);
    const Var gx = t.gradient_graph({f}, {Var()}, {x})[0];
    return sum_all(mul(gx, t.constant(probe)));
  };
  auto eval_w = [&](const Mat& w) {
    Tape t;
    return loss(t, t.constant(x0), t.constant(w), t.constant(b0)).scalar();
  };
  Tape t;
  const Var x = t.constant(x0);
  const Var w = t.constant(w0);
  const Var b = t.constant(b0);
  const Var l = loss(t, x, w, b);
  const auto g = t.gradient({l}, {Mat()}, {w, x});
  CHECK(rel_err(g[0], numeric_gradient(eval_w, w0)) < 1e-6);
  auto eval_x = [&](const Mat& xm) {
    Tape tt;
    return loss(tt, tt.constant(xm), tt.constant(w0), tt.constant(b0)).scalar();
  };
  CHECK(rel_err(g[1], numeric_gradient(eval_x, x0)) < 1e-6);
}

TEST_CASE("seeded vector-Jacobian product and pruning") {
  Tape t;
  const Var a = t.constant(Mat::Constant(2, 2, 2.0));
  const Var c = t.constant(Mat::Constant(2, 2, 3.0));
  const Var y = mul(a, c);
  const Mat seed = (Mat(2, 2) << 1, 2, 3, 4).finished();
  const auto g = t.gradient({y}, {seed}, {a});
  CHECK(g[0].isApprox(3.0 * seed));
  // A variable that does not influence the output gets a zero gradient.
  const Var unrelated = t.constant(Mat::Ones(1, 3));
  const auto z = t.gradient({y}, {Mat()}, {unrelated});
  CHECK(z[0].isZero());
}

TEST_CASE("gather and scatter by element are adjoint") {
  std::mt19937_64 rng(3);
  const Mat a0 = random_mat(4, 6, rng);
  auto idx = std::make_shared<Eigen::MatrixXi>(4, 2);
  *idx << 0, 2, 1, 1, 2, 0, 0, 1;
  const Mat probe = random_mat(4, 2, rng);
  Tape t;
  const Var a = t.constant(a0);
  const Var g = gather_elem(a, idx, 3);
  CHECK(g.value()(0, 1) == doctest::Approx(a0(0, 5)));
  const Var l = sum_all(mul(g, t.constant(probe)));
  const Mat ga = t.gradient({l}, {Mat()}, {a})[0];
  CHECK(ga.isApprox(scatter_elem(probe, idx, 3, 6)));
}

TEST_CASE("square root has zero derivative at zero and refuses higher order") {
  Tape t;
  const Var a = t.constant((Mat(1, 2) << 0.0, 4.0).finished());
  const Var s = sqrt(a);
  const Mat g = t.gradient({s}, {Mat()}, {a})[0];
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == doctest::Approx(0.25));
  CHECK_THROWS(t.gradient_graph({s}, {Var()}, {a}));
}
