#include "wgpath/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace wgpath::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void check_group(const Mat& a, Index group, const char* op) {
  if (group <= 0 || a.cols() % group != 0) {
    throw std::invalid_argument(std::string(op) + ": column count not divisible by group");
  }
}

Tape* tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) throw std::invalid_argument("autodiff: uninitialized variable");
    if (t != nullptr && v.tape() != t) throw std::invalid_argument("autodiff: mixed tapes");
    t = v.tape();
  }
  return t;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Second derivative of x*sigmoid(x), used only by the silu_grad backward.
Mat silu_curvature(const Mat& a) {
  return a.unaryExpr([](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
  });
}

Var silu_curvature(const Var& a) {
  return a.tape()->record_first_order("silu_curvature", silu_curvature(a.value()), {a},
                                      [](BackwardContext<Mat>&) {
                                        throw std::logic_error(
                                            "silu: derivatives above third order unsupported");
                                      });
}

}  // namespace

const Mat& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("autodiff: value of uninitialized variable");
  return tape_->value(id_);
}

void BackwardContext<Mat>::accumulate(int i, Mat contribution) {
  auto* slot = sinks_[static_cast<size_t>(i)];
  if (slot == nullptr) return;
  if (slot->present) {
    check_same_shape(slot->value, contribution, "accumulate");
    slot->value += contribution;
  } else {
    slot->value = std::move(contribution);
    slot->present = true;
  }
}

void BackwardContext<Var>::accumulate(int i, Var contribution) {
  auto* slot = sinks_[static_cast<size_t>(i)];
  if (slot == nullptr) return;
  if (slot->present) {
    slot->value = add(slot->value, contribution);
  } else {
    slot->value = contribution;
    slot->present = true;
  }
}

Var Tape::constant(Mat value) { return push("constant", std::move(value), {}, nullptr, nullptr); }

Var Tape::push(const char* name, Mat value, std::initializer_list<Var> parents, RawBackward raw,
               GraphBackward graph) {
  Node n;
  n.name = name;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (const auto& p : parents) {
    if (p.tape() != this) throw std::invalid_argument(std::string(name) + ": foreign variable");
    n.parents.push_back(p.id());
  }
  n.raw = std::move(raw);
  n.graph = std::move(graph);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<char> Tape::dependency_mask(const std::vector<Var>& outputs,
                                        const std::vector<Var>& wrt, int& lo, int& hi) const {
  lo = static_cast<int>(nodes_.size());
  hi = -1;
  for (const auto& w : wrt) lo = std::min(lo, w.id());
  for (const auto& o : outputs) hi = std::max(hi, o.id());
  std::vector<char> dep(nodes_.size(), 0);
  for (const auto& w : wrt) dep[static_cast<size_t>(w.id())] = 1;
  for (int n = lo; n <= hi; ++n) {
    if (dep[static_cast<size_t>(n)]) continue;
    for (int p : nodes_[static_cast<size_t>(n)].parents) {
      if (p >= lo && dep[static_cast<size_t>(p)]) {
        dep[static_cast<size_t>(n)] = 1;
        break;
      }
    }
  }
  return dep;
}

std::vector<Mat> Tape::gradient(const std::vector<Var>& outputs, const std::vector<Mat>& seeds,
                                const std::vector<Var>& wrt) {
  if (seeds.size() != outputs.size()) throw std::invalid_argument("gradient: seed count");
  int lo = 0;
  int hi = 0;
  auto dep = dependency_mask(outputs, wrt, lo, hi);
  std::vector<detail::Slot<Mat>> slots(static_cast<size_t>(std::max(hi - lo + 1, 0)));
  auto slot = [&](int id) -> detail::Slot<Mat>* {
    if (id < lo || id > hi || !dep[static_cast<size_t>(id)]) return nullptr;
    return &slots[static_cast<size_t>(id - lo)];
  };
  for (size_t i = 0; i < outputs.size(); ++i) {
    auto* s = slot(outputs[i].id());
    if (s == nullptr) continue;
    const Mat& v = outputs[i].value();
    Mat seed = seeds[i].size() == 0 ? Mat::Ones(v.rows(), v.cols()) : seeds[i];
    check_same_shape(v, seed, "gradient seed");
    if (s->present) {
      s->value += seed;
    } else {
      s->value = std::move(seed);
      s->present = true;
    }
  }
  std::vector<char> is_wrt(nodes_.size(), 0);
  for (const auto& w : wrt) is_wrt[static_cast<size_t>(w.id())] = 1;
  for (int n = hi; n >= lo; --n) {
    auto* s = slot(n);
    if (s == nullptr || !s->present || is_wrt[static_cast<size_t>(n)]) continue;
    const Node& node = nodes_[static_cast<size_t>(n)];
    if (!node.raw) continue;
    std::vector<const Mat*> inputs;
    std::vector<char> needs;
    std::vector<detail::Slot<Mat>*> sinks;
    for (int p : node.parents) {
      inputs.push_back(&nodes_[static_cast<size_t>(p)].value);
      auto* ps = slot(p);
      needs.push_back(ps != nullptr ? 1 : 0);
      sinks.push_back(ps);
    }
    BackwardContext<Mat> ctx(s->value, node.value, std::move(inputs), std::move(needs),
                             std::move(sinks));
    node.raw(ctx);
    s->value.resize(0, 0);
  }
  std::vector<Mat> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto* s = slot(w.id());
    if (s != nullptr && s->present) {
      result.push_back(s->value);
    } else {
      result.push_back(Mat::Zero(w.rows(), w.cols()));
    }
  }
  return result;
}

std::vector<Var> Tape::gradient_graph(const std::vector<Var>& outputs,
                                      const std::vector<Var>& seeds,
                                      const std::vector<Var>& wrt) {
  if (seeds.size() != outputs.size()) throw std::invalid_argument("gradient_graph: seed count");
  int lo = 0;
  int hi = 0;
  auto dep = dependency_mask(outputs, wrt, lo, hi);
  std::vector<detail::Slot<Var>> slots(static_cast<size_t>(std::max(hi - lo + 1, 0)));
  auto slot = [&](int id) -> detail::Slot<Var>* {
    if (id < lo || id > hi || !dep[static_cast<size_t>(id)]) return nullptr;
    return &slots[static_cast<size_t>(id - lo)];
  };
  for (size_t i = 0; i < outputs.size(); ++i) {
    auto* s = slot(outputs[i].id());
    if (s == nullptr) continue;
    Var seed = seeds[i];
    if (!seed.valid()) {
      seed = constant(Mat::Ones(outputs[i].rows(), outputs[i].cols()));
    }
    check_same_shape(outputs[i].value(), seed.value(), "gradient_graph seed");
    if (s->present) {
      s->value = add(s->value, seed);
    } else {
      s->value = seed;
      s->present = true;
    }
  }
  std::vector<char> is_wrt(static_cast<size_t>(hi + 1), 0);
  for (const auto& w : wrt) {
    if (w.id() <= hi) is_wrt[static_cast<size_t>(w.id())] = 1;
  }
  for (int n = hi; n >= lo; --n) {
    auto* s = slot(n);
    if (s == nullptr || !s->present || is_wrt[static_cast<size_t>(n)]) continue;
    const Node& node = nodes_[static_cast<size_t>(n)];
    if (!node.raw) continue;
    if (!node.graph) {
      throw std::logic_error(std::string("autodiff: op '") + node.name +
                             "' does not support higher-order differentiation");
    }
    GraphBackward fn = node.graph;
    std::vector<Var> inputs;
    std::vector<char> needs;
    std::vector<detail::Slot<Var>*> sinks;
    for (int p : node.parents) {
      inputs.emplace_back(this, p);
      auto* ps = slot(p);
      needs.push_back(ps != nullptr ? 1 : 0);
      sinks.push_back(ps);
    }
    BackwardContext<Var> ctx(s->value, Var(this, n), std::move(inputs), std::move(needs),
                             std::move(sinks));
    fn(ctx);
  }
  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto* s = slot(w.id());
    if (s != nullptr && s->present) {
      result.push_back(s->value);
    } else {
      result.push_back(constant(Mat::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

// ---------------------------------------------------------------------------
// Plain-matrix ops.

Mat add(const Mat& a, const Mat& b) {
  check_same_shape(a, b, "add");
  return a + b;
}
Mat sub(const Mat& a, const Mat& b) {
  check_same_shape(a, b, "sub");
  return a - b;
}
Mat mul(const Mat& a, const Mat& b) {
  check_same_shape(a, b, "mul");
  return a.cwiseProduct(b);
}
Mat div(const Mat& a, const Mat& b) {
  check_same_shape(a, b, "div");
  return a.cwiseQuotient(b);
}
Mat neg(const Mat& a) { return -a; }
Mat scale(const Mat& a, double c) { return a * c; }
Mat add_scalar(const Mat& a, double c) { return a.array() + c; }
Mat exp(const Mat& a) { return a.array().exp(); }
Mat log(const Mat& a) { return a.array().log(); }
Mat square(const Mat& a) { return a.array().square(); }
Mat tanh(const Mat& a) { return a.array().tanh(); }
Mat tanh_grad(const Mat& g, const Mat& y) {
  check_same_shape(g, y, "tanh_grad");
  return g.array() * (1.0 - y.array().square());
}
Mat sigmoid(const Mat& a) { return a.unaryExpr([](double x) { return sigmoid_scalar(x); }); }
Mat softplus(const Mat& a) { return a.unaryExpr([](double x) { return softplus_scalar(x); }); }
Mat silu(const Mat& a) { return a.unaryExpr([](double x) { return x * sigmoid_scalar(x); }); }
Mat silu_grad(const Mat& g, const Mat& a) {
  check_same_shape(g, a, "silu_grad");
  return g.cwiseProduct(a.unaryExpr([](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 + x * (1.0 - s));
  }));
}
Mat mul_const(const Mat& a, const std::shared_ptr<const Mat>& c) {
  check_same_shape(a, *c, "mul_const");
  return a.cwiseProduct(*c);
}
Mat matmul(const Mat& a, const Mat& b) { return a * b; }
Mat matmul_nt(const Mat& a, const Mat& b) { return a * b.transpose(); }
Mat matmul_tn(const Mat& a, const Mat& b) { return a.transpose() * b; }
Mat linear(const Mat& x, const Mat& w, const Mat& b) {
  Mat y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}
Mat sum_rows(const Mat& a) { return a.colwise().sum(); }
Mat broadcast_rows(const Mat& a, Index rows) { return a.row(0).replicate(rows, 1); }
Mat sum_cols(const Mat& a) { return a.rowwise().sum(); }
Mat broadcast_cols(const Mat& a, Index cols) { return a.col(0).replicate(1, cols); }
Mat mul_col(const Mat& a, const Mat& v) {
  if (v.rows() != a.rows() || v.cols() != 1) throw std::invalid_argument("mul_col: shape");
  return a.array().colwise() * v.col(0).array();
}
Mat sum_all(const Mat& a) { return Mat::Constant(1, 1, a.sum()); }
Mat fill(const Mat& s, Index rows, Index cols) { return Mat::Constant(rows, cols, s(0, 0)); }
Mat mul_scalar(const Mat& a, const Mat& s) { return a * s(0, 0); }
Mat gather_cols(const Mat& a, const IndexList& idx) {
  Mat r(a.rows(), static_cast<Index>(idx.size()));
  for (size_t j = 0; j < idx.size(); ++j) r.col(static_cast<Index>(j)) = a.col(idx[j]);
  return r;
}
Mat scatter_cols(const Mat& a, const IndexList& idx, Index cols) {
  Mat r = Mat::Zero(a.rows(), cols);
  for (size_t j = 0; j < idx.size(); ++j) r.col(idx[j]) += a.col(static_cast<Index>(j));
  return r;
}
Mat group_sum(const Mat& a, Index group) {
  check_group(a, group, "group_sum");
  const Index g = a.cols() / group;
  Mat r(a.rows(), g);
  for (Index j = 0; j < g; ++j) r.col(j) = a.middleCols(j * group, group).rowwise().sum();
  return r;
}
Mat group_broadcast(const Mat& a, Index group) {
  Mat r(a.rows(), a.cols() * group);
  for (Index j = 0; j < a.cols(); ++j) r.middleCols(j * group, group) = a.col(j).replicate(1, group);
  return r;
}
Mat group_cumsum_exclusive(const Mat& a, Index group) {
  check_group(a, group, "group_cumsum_exclusive");
  Mat r(a.rows(), a.cols());
  for (Index j0 = 0; j0 < a.cols(); j0 += group) {
    r.col(j0).setZero();
    for (Index j = 1; j < group; ++j) r.col(j0 + j) = r.col(j0 + j - 1) + a.col(j0 + j - 1);
  }
  return r;
}
Mat group_rcumsum_exclusive(const Mat& a, Index group) {
  check_group(a, group, "group_rcumsum_exclusive");
  Mat r(a.rows(), a.cols());
  for (Index j0 = 0; j0 < a.cols(); j0 += group) {
    r.col(j0 + group - 1).setZero();
    for (Index j = group - 2; j >= 0; --j) r.col(j0 + j) = r.col(j0 + j + 1) + a.col(j0 + j + 1);
  }
  return r;
}
Mat gather_elem(const Mat& a, const ElemIndex& idx, Index group) {
  const auto& id = *idx;
  Mat r(id.rows(), id.cols());
  for (Index j = 0; j < id.cols(); ++j) {
    for (Index i = 0; i < id.rows(); ++i) r(i, j) = a(i, j * group + id(i, j));
  }
  return r;
}
Mat scatter_elem(const Mat& a, const ElemIndex& idx, Index group, Index cols) {
  const auto& id = *idx;
  Mat r = Mat::Zero(a.rows(), cols);
  for (Index j = 0; j < id.cols(); ++j) {
    for (Index i = 0; i < id.rows(); ++i) r(i, j * group + id(i, j)) += a(i, j);
  }
  return r;
}
Mat sqrt(const Mat& a) { return a.array().sqrt(); }
Mat leaky_relu(const Mat& a, double slope) {
  return a.unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
}

// ---------------------------------------------------------------------------
// Recording ops.

Var add(const Var& a, const Var& b) {
  return tape_of({a, b})->record("add", add(a.value(), b.value()), {a, b}, [](auto& c) {
    if (c.needs(0)) c.accumulate(0, c.grad());
    if (c.needs(1)) c.accumulate(1, c.grad());
  });
}

Var sub(const Var& a, const Var& b) {
  return tape_of({a, b})->record("sub", sub(a.value(), b.value()), {a, b}, [](auto& c) {
    if (c.needs(0)) c.accumulate(0, c.grad());
    if (c.needs(1)) c.accumulate(1, neg(c.grad()));
  });
}

Var mul(const Var& a, const Var& b) {
  return tape_of({a, b})->record("mul", mul(a.value(), b.value()), {a, b}, [](auto& c) {
    if (c.needs(0)) c.accumulate(0, mul(c.grad(), c.input(1)));
    if (c.needs(1)) c.accumulate(1, mul(c.grad(), c.input(0)));
  });
}

Var div(const Var& a, const Var& b) {
  return tape_of({a, b})->record("div", div(a.value(), b.value()), {a, b}, [](auto& c) {
    if (c.needs(0)) c.accumulate(0, div(c.grad(), c.input(1)));
    if (c.needs(1)) c.accumulate(1, neg(mul(c.grad(), div(c.output(), c.input(1)))));
  });
}

Var neg(const Var& a) {
  return a.tape()->record("neg", neg(a.value()), {a},
                          [](auto& c) { c.accumulate(0, neg(c.grad())); });
}

Var scale(const Var& a, double k) {
  return a.tape()->record("scale", scale(a.value(), k), {a},
                          [k](auto& c) { c.accumulate(0, scale(c.grad(), k)); });
}

Var add_scalar(const Var& a, double k) {
  return a.tape()->record("add_scalar", add_scalar(a.value(), k), {a},
                          [](auto& c) { c.accumulate(0, c.grad()); });
}

Var exp(const Var& a) {
  return a.tape()->record("exp", exp(a.value()), {a},
                          [](auto& c) { c.accumulate(0, mul(c.grad(), c.output())); });
}

Var log(const Var& a) {
  return a.tape()->record("log", log(a.value()), {a},
                          [](auto& c) { c.accumulate(0, div(c.grad(), c.input(0))); });
}

Var square(const Var& a) {
  return a.tape()->record("square", square(a.value()), {a}, [](auto& c) {
    c.accumulate(0, scale(mul(c.grad(), c.input(0)), 2.0));
  });
}

Var tanh(const Var& a) {
  return a.tape()->record("tanh", tanh(a.value()), {a},
                          [](auto& c) { c.accumulate(0, tanh_grad(c.grad(), c.output())); });
}

Var tanh_grad(const Var& g, const Var& y) {
  return tape_of({g, y})->record("tanh_grad", tanh_grad(g.value(), y.value()), {g, y},
                                 [](auto& c) {
                                   if (c.needs(0)) c.accumulate(0, tanh_grad(c.grad(), c.input(1)));
                                   if (c.needs(1)) {
                                     c.accumulate(1, scale(mul(c.grad(), mul(c.input(0), c.input(1))),
                                                           -2.0));
                                   }
                                 });
}

Var sigmoid(const Var& a) {
  return a.tape()->record("sigmoid", sigmoid(a.value()), {a}, [](auto& c) {
    const auto& s = c.output();
    c.accumulate(0, mul(c.grad(), mul(s, add_scalar(neg(s), 1.0))));
  });
}

Var softplus(const Var& a) {
  return a.tape()->record("softplus", softplus(a.value()), {a},
                          [](auto& c) { c.accumulate(0, mul(c.grad(), sigmoid(c.input(0)))); });
}

Var silu(const Var& a) {
  return a.tape()->record("silu", silu(a.value()), {a},
                          [](auto& c) { c.accumulate(0, silu_grad(c.grad(), c.input(0))); });
}

Var silu_grad(const Var& g, const Var& a) {
  return tape_of({g, a})->record("silu_grad", silu_grad(g.value(), a.value()), {g, a},
                                 [](auto& c) {
                                   if (c.needs(0)) c.accumulate(0, silu_grad(c.grad(), c.input(1)));
                                   if (c.needs(1)) {
                                     c.accumulate(1, mul(mul(c.grad(), c.input(0)),
                                                         silu_curvature(c.input(1))));
                                   }
                                 });
}

Var mul_const(const Var& a, const std::shared_ptr<const Mat>& k) {
  return a.tape()->record("mul_const", mul_const(a.value(), k), {a},
                          [k](auto& c) { c.accumulate(0, mul_const(c.grad(), k)); });
}

Var matmul(const Var& a, const Var& b) {
  return tape_of({a, b})->record("matmul", matmul(a.value(), b.value()), {a, b}, [](auto& c) {
    if (c.needs(0)) c.accumulate(0, matmul_nt(c.grad(), c.input(1)));
    if (c.needs(1)) c.accumulate(1, matmul_tn(c.input(0), c.grad()));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  return tape_of({a, b})->record("matmul_nt", matmul_nt(a.value(), b.value()), {a, b},
                                 [](auto& c) {
                                   if (c.needs(0)) c.accumulate(0, matmul(c.grad(), c.input(1)));
                                   if (c.needs(1)) c.accumulate(1, matmul_tn(c.grad(), c.input(0)));
                                 });
}

Var matmul_tn(const Var& a, const Var& b) {
  return tape_of({a, b})->record("matmul_tn", matmul_tn(a.value(), b.value()), {a, b},
                                 [](auto& c) {
                                   if (c.needs(0)) c.accumulate(0, matmul_nt(c.input(1), c.grad()));
                                   if (c.needs(1)) c.accumulate(1, matmul(c.input(0), c.grad()));
                                 });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return tape_of({x, w, b})->record("linear", linear(x.value(), w.value(), b.value()), {x, w, b},
                                    [](auto& c) {
                                      if (c.needs(0)) c.accumulate(0, matmul_nt(c.grad(), c.input(1)));
                                      if (c.needs(1)) c.accumulate(1, matmul_tn(c.input(0), c.grad()));
                                      if (c.needs(2)) c.accumulate(2, sum_rows(c.grad()));
                                    });
}

Var sum_rows(const Var& a) {
  const Index rows = a.rows();
  return a.tape()->record("sum_rows", sum_rows(a.value()), {a},
                          [rows](auto& c) { c.accumulate(0, broadcast_rows(c.grad(), rows)); });
}

Var broadcast_rows(const Var& a, Index rows) {
  return a.tape()->record("broadcast_rows", broadcast_rows(a.value(), rows), {a},
                          [](auto& c) { c.accumulate(0, sum_rows(c.grad())); });
}

Var sum_cols(const Var& a) {
  const Index cols = a.cols();
  return a.tape()->record("sum_cols", sum_cols(a.value()), {a},
                          [cols](auto& c) { c.accumulate(0, broadcast_cols(c.grad(), cols)); });
}

Var broadcast_cols(const Var& a, Index cols) {
  return a.tape()->record("broadcast_cols", broadcast_cols(a.value(), cols), {a},
                          [](auto& c) { c.accumulate(0, sum_cols(c.grad())); });
}

Var mul_col(const Var& a, const Var& v) {
  return tape_of({a, v})->record("mul_col", mul_col(a.value(), v.value()), {a, v}, [](auto& c) {
    if (c.needs(0)) c.accumulate(0, mul_col(c.grad(), c.input(1)));
    if (c.needs(1)) c.accumulate(1, sum_cols(mul(c.grad(), c.input(0))));
  });
}

Var sum_all(const Var& a) {
  const Index rows = a.rows();
  const Index cols = a.cols();
  return a.tape()->record("sum_all", sum_all(a.value()), {a},
                          [rows, cols](auto& c) { c.accumulate(0, fill(c.grad(), rows, cols)); });
}

Var fill(const Var& s, Index rows, Index cols) {
  return s.tape()->record("fill", fill(s.value(), rows, cols), {s},
                          [](auto& c) { c.accumulate(0, sum_all(c.grad())); });
}

Var mul_scalar(const Var& a, const Var& s) {
  return tape_of({a, s})->record("mul_scalar", mul_scalar(a.value(), s.value()), {a, s},
                                 [](auto& c) {
                                   if (c.needs(0)) c.accumulate(0, mul_scalar(c.grad(), c.input(1)));
                                   if (c.needs(1)) c.accumulate(1, sum_all(mul(c.grad(), c.input(0))));
                                 });
}

Var gather_cols(const Var& a, const IndexList& idx) {
  const Index cols = a.cols();
  return a.tape()->record("gather_cols", gather_cols(a.value(), idx), {a},
                          [idx, cols](auto& c) { c.accumulate(0, scatter_cols(c.grad(), idx, cols)); });
}

Var scatter_cols(const Var& a, const IndexList& idx, Index cols) {
  return a.tape()->record("scatter_cols", scatter_cols(a.value(), idx, cols), {a},
                          [idx](auto& c) { c.accumulate(0, gather_cols(c.grad(), idx)); });
}

Var group_sum(const Var& a, Index group) {
  return a.tape()->record("group_sum", group_sum(a.value(), group), {a},
                          [group](auto& c) { c.accumulate(0, group_broadcast(c.grad(), group)); });
}

Var group_broadcast(const Var& a, Index group) {
  return a.tape()->record("group_broadcast", group_broadcast(a.value(), group), {a},
                          [group](auto& c) { c.accumulate(0, group_sum(c.grad(), group)); });
}

Var group_cumsum_exclusive(const Var& a, Index group) {
  return a.tape()->record("group_cumsum_exclusive", group_cumsum_exclusive(a.value(), group), {a},
                          [group](auto& c) {
                            c.accumulate(0, group_rcumsum_exclusive(c.grad(), group));
                          });
}

Var group_rcumsum_exclusive(const Var& a, Index group) {
  return a.tape()->record("group_rcumsum_exclusive", group_rcumsum_exclusive(a.value(), group),
                          {a}, [group](auto& c) {
                            c.accumulate(0, group_cumsum_exclusive(c.grad(), group));
                          });
}

Var gather_elem(const Var& a, const ElemIndex& idx, Index group) {
  const Index cols = a.cols();
  return a.tape()->record("gather_elem", gather_elem(a.value(), idx, group), {a},
                          [idx, group, cols](auto& c) {
                            c.accumulate(0, scatter_elem(c.grad(), idx, group, cols));
                          });
}

Var scatter_elem(const Var& a, const ElemIndex& idx, Index group, Index cols) {
  return a.tape()->record("scatter_elem", scatter_elem(a.value(), idx, group, cols), {a},
                          [idx, group](auto& c) { c.accumulate(0, gather_elem(c.grad(), idx, group)); });
}

Var sqrt(const Var& a) {
  return a.tape()->record_first_order("sqrt", sqrt(a.value()), {a}, [](BackwardContext<Mat>& c) {
    Mat g = c.grad();
    const Mat& y = c.output();
    for (Index j = 0; j < g.cols(); ++j) {
      for (Index i = 0; i < g.rows(); ++i) g(i, j) = y(i, j) > 0 ? 0.5 * g(i, j) / y(i, j) : 0.0;
    }
    c.accumulate(0, std::move(g));
  });
}

Var leaky_relu(const Var& a, double slope) {
  auto mask = std::make_shared<const Mat>(
      a.value().unaryExpr([slope](double x) { return x > 0 ? 1.0 : slope; }));
  return mul_const(a, mask);
}

}  // namespace wgpath::ad
