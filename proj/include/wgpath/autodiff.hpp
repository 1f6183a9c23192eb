#pragma once

// Matrix-level reverse-mode differentiation.
//
// Every recorded node holds an Eigen matrix value. Backward rules are written
// once as generic lambdas over a context whose value type is either a plain
// matrix (first-order sweep) or a Var (graph-building sweep). Running the
// graph-building sweep records the derivative computation itself, so the
// result can be differentiated again. This is what lets the flow module feed
// a differentiable score into the loss.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wgpath::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Mat& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  /// Value of a 1x1 node.
  [[nodiscard]] double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

template <class T>
class BackwardContext;

namespace detail {

template <class T>
struct Slot {
  T value{};
  bool present = false;
};

}  // namespace detail

/// First-order backward context: values are plain matrices.
template <>
class BackwardContext<Mat> {
 public:
  BackwardContext(const Mat& grad, const Mat& output, std::vector<const Mat*> inputs,
                  std::vector<char> needs, std::vector<detail::Slot<Mat>*> sinks)
      : grad_(grad), output_(output), inputs_(std::move(inputs)), needs_(std::move(needs)),
        sinks_(std::move(sinks)) {}

  const Mat& grad() const { return grad_; }
  const Mat& output() const { return output_; }
  const Mat& input(int i) const { return *inputs_[static_cast<size_t>(i)]; }
  bool needs(int i) const { return needs_[static_cast<size_t>(i)] != 0; }
  void accumulate(int i, Mat contribution);

 private:
  const Mat& grad_;
  const Mat& output_;
  std::vector<const Mat*> inputs_;
  std::vector<char> needs_;
  std::vector<detail::Slot<Mat>*> sinks_;
};

/// Graph-building backward context: values are tape variables.
template <>
class BackwardContext<Var> {
 public:
  BackwardContext(Var grad, Var output, std::vector<Var> inputs, std::vector<char> needs,
                  std::vector<detail::Slot<Var>*> sinks)
      : grad_(grad), output_(output), inputs_(std::move(inputs)), needs_(std::move(needs)),
        sinks_(std::move(sinks)) {}

  const Var& grad() const { return grad_; }
  const Var& output() const { return output_; }
  const Var& input(int i) const { return inputs_[static_cast<size_t>(i)]; }
  bool needs(int i) const { return needs_[static_cast<size_t>(i)] != 0; }
  void accumulate(int i, Var contribution);

 private:
  Var grad_;
  Var output_;
  std::vector<Var> inputs_;
  std::vector<char> needs_;
  std::vector<detail::Slot<Var>*> sinks_;
};

using RawBackward = std::function<void(BackwardContext<Mat>&)>;
using GraphBackward = std::function<void(BackwardContext<Var>&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A node without history. Gradients may still be requested with respect to it.
  Var constant(Mat value);

  /// Records an op whose backward rule works at any order.
  template <class F>
  Var record(const char* name, Mat value, std::initializer_list<Var> parents, F backward) {
    auto shared = std::make_shared<F>(std::move(backward));
    RawBackward raw = [shared](BackwardContext<Mat>& c) { (*shared)(c); };
    GraphBackward graph = [shared](BackwardContext<Var>& c) { (*shared)(c); };
    return push(name, std::move(value), parents, std::move(raw), std::move(graph));
  }

  /// Records an op that only supports a first-order backward sweep.
  Var record_first_order(const char* name, Mat value, std::initializer_list<Var> parents,
                         RawBackward backward) {
    return push(name, std::move(value), parents, std::move(backward), nullptr);
  }

  /// Gradients of sum_i <seed_i, output_i> with respect to each of `wrt`.
  /// An empty seed matrix stands for all ones.
  std::vector<Mat> gradient(const std::vector<Var>& outputs, const std::vector<Mat>& seeds,
                            const std::vector<Var>& wrt);

  /// Same as gradient(), but the derivative computation is recorded on the tape
  /// and the results are differentiable. An invalid seed Var stands for ones.
  std::vector<Var> gradient_graph(const std::vector<Var>& outputs, const std::vector<Var>& seeds,
                                  const std::vector<Var>& wrt);

  [[nodiscard]] const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  [[nodiscard]] size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* name = "";
    Mat value;
    std::vector<int> parents;
    RawBackward raw;
    GraphBackward graph;
  };

  Var push(const char* name, Mat value, std::initializer_list<Var> parents, RawBackward raw,
           GraphBackward graph);
  std::vector<char> dependency_mask(const std::vector<Var>& outputs, const std::vector<Var>& wrt,
                                    int& lo, int& hi) const;

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops. Each has a plain-matrix overload and a recording overload with the same
// name, so backward rules can be written once for both sweeps.

Mat add(const Mat& a, const Mat& b);
Mat sub(const Mat& a, const Mat& b);
Mat mul(const Mat& a, const Mat& b);
Mat div(const Mat& a, const Mat& b);
Mat neg(const Mat& a);
Mat scale(const Mat& a, double c);
Mat add_scalar(const Mat& a, double c);
Mat exp(const Mat& a);
Mat log(const Mat& a);
Mat square(const Mat& a);
Mat tanh(const Mat& a);
Mat tanh_grad(const Mat& g, const Mat& y);
Mat sigmoid(const Mat& a);
Mat softplus(const Mat& a);
Mat silu(const Mat& a);
Mat silu_grad(const Mat& g, const Mat& a);
Mat mul_const(const Mat& a, const std::shared_ptr<const Mat>& c);
Mat matmul(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);
Mat linear(const Mat& x, const Mat& w, const Mat& b);
Mat sum_rows(const Mat& a);
Mat broadcast_rows(const Mat& a, Index rows);
Mat sum_cols(const Mat& a);
Mat broadcast_cols(const Mat& a, Index cols);
Mat mul_col(const Mat& a, const Mat& v);
Mat sum_all(const Mat& a);
Mat fill(const Mat& s, Index rows, Index cols);
Mat mul_scalar(const Mat& a, const Mat& s);
Mat gather_cols(const Mat& a, const IndexList& idx);
Mat scatter_cols(const Mat& a, const IndexList& idx, Index cols);
Mat group_sum(const Mat& a, Index group);
Mat group_broadcast(const Mat& a, Index group);
Mat group_cumsum_exclusive(const Mat& a, Index group);
Mat group_rcumsum_exclusive(const Mat& a, Index group);
using ElemIndex = std::shared_ptr<const Eigen::MatrixXi>;
Mat gather_elem(const Mat& a, const ElemIndex& idx, Index group);
Mat scatter_elem(const Mat& a, const ElemIndex& idx, Index group, Index cols);
Mat sqrt(const Mat& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var tanh_grad(const Var& g, const Var& y);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var silu(const Var& a);
Var silu_grad(const Var& g, const Var& a);
Var mul_const(const Var& a, const std::shared_ptr<const Mat>& c);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var matmul_tn(const Var& a, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);
Var sum_rows(const Var& a);
Var broadcast_rows(const Var& a, Index rows);
Var sum_cols(const Var& a);
Var broadcast_cols(const Var& a, Index cols);
Var mul_col(const Var& a, const Var& v);
Var sum_all(const Var& a);
Var fill(const Var& s, Index rows, Index cols);
Var mul_scalar(const Var& a, const Var& s);
Var gather_cols(const Var& a, const IndexList& idx);
Var scatter_cols(const Var& a, const IndexList& idx, Index cols);
Var group_sum(const Var& a, Index group);
Var group_broadcast(const Var& a, Index group);
Var group_cumsum_exclusive(const Var& a, Index group);
Var group_rcumsum_exclusive(const Var& a, Index group);
Var gather_elem(const Var& a, const ElemIndex& idx, Index group);
Var scatter_elem(const Var& a, const ElemIndex& idx, Index group, Index cols);
/// Square root with a zero derivative at exactly zero. First order only.
Var sqrt(const Var& a);

Var leaky_relu(const Var& a, double slope);
Mat leaky_relu(const Mat& a, double slope);

/// Mean over all entries.
template <class T>
T mean_all(const T& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.rows() * a.cols()));
}

/// Sets a node's value aside as a constant on the same tape.
Var detach(const Var& a);

}  // namespace wgpath::ad
