#pragma once

// Stacked invertible map. Path layer k is a group of coupling sub-blocks with
// complementary masks; the prefix composition of the first k groups carries
// the base distribution to the k-th image of the path.

#include "wgpath/autodiff.hpp"
#include "wgpath/base_distribution.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace wgpath {

enum class CouplingKind { Affine, Spline };
enum class Activation { Tanh, LeakyReLU, SiLU };

std::string to_string(CouplingKind k);
std::string to_string(Activation a);
CouplingKind coupling_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

struct FlowArchitecture {
  CouplingKind coupling = CouplingKind::Affine;
  long dim = 2;
  long layers = 9;          // path layers K
  long sub_blocks = 2;      // coupling sub-blocks per path layer
  long depth = 4;           // linear maps per conditioner network
  long width = 64;
  Activation activation = Activation::LeakyReLU;
  double leaky_slope = 0.01;
  double scale_amplitude = 3.0;  // affine: s = a * tanh(raw / a)
  long bins = 8;                 // spline bins per coordinate
  double bound = 6.0;            // spline box [-bound, bound]
  double min_bin = 1e-3;         // minimum bin width/height as a fraction of the box
  double min_derivative = 1e-3;

  void validate() const;
};

/// Per-layer particle data for one batch, layers 0..K.
struct PathBatch {
  Mat z;
  std::vector<Mat> positions;     // K+1 matrices, N x d
  std::vector<Vec> log_densities; // K+1 vectors, log q_k at the positions
  std::vector<Vec> layer_logdets; // K vectors
  [[nodiscard]] long layers() const { return static_cast<long>(layer_logdets.size()); }
};

enum class ScoreMode { None, Values, Differentiable };

/// A path recorded on a tape so that losses can be differentiated with respect
/// to the parameters.
struct TapePath {
  std::vector<ad::Var> params;
  std::vector<ad::Var> positions;  // K+1
  std::vector<ad::Var> log_q;      // K+1, N x 1
  std::vector<ad::Var> scores;     // K+1 when a score mode is requested
};

class FlowModel {
 public:
  FlowModel() = default;
  /// Builds an identity-initialized model: hidden layers get random weights,
  /// the final layer of every conditioner is zero.
  FlowModel(FlowArchitecture arch, BaseDistribution base, std::uint64_t init_seed);

  [[nodiscard]] const FlowArchitecture& architecture() const { return arch_; }
  [[nodiscard]] const BaseDistribution& base() const { return base_; }
  [[nodiscard]] long layers() const { return arch_.layers; }
  [[nodiscard]] long dim() const { return arch_.dim; }

  [[nodiscard]] const std::vector<Mat>& params() const { return params_; }
  std::vector<Mat>& params() { return params_; }
  [[nodiscard]] long parameter_count() const;
  [[nodiscard]] Vec flat_params() const;
  void set_flat_params(const Vec& flat);
  /// Draws all parameters, including final layers, at random. Used by tests.
  void randomize(std::uint64_t seed, double final_scale);

  [[nodiscard]] PathBatch push_forward(const Mat& z) const;
  /// Maps points of image k back to the base space.
  [[nodiscard]] Mat inverse(long k, const Mat& x) const;
  /// log q_k at arbitrary points.
  [[nodiscard]] Vec log_density(long k, const Mat& x) const;
  /// Scores of every layer at the batch positions.
  [[nodiscard]] std::vector<Mat> scores(const Mat& z) const;
  /// Score of layer k at the batch positions.
  [[nodiscard]] Mat score(long k, const PathBatch& batch) const;

  /// Records the path for base samples z on the tape.
  TapePath record(ad::Tape& tape, const Mat& z, ScoreMode mode) const;

  /// Index of the first parameter matrix belonging to sub-block b.
  [[nodiscard]] long block_param_offset(long b) const { return b * 2 * arch_.depth; }
  [[nodiscard]] const ad::IndexList& conditioning(long b) const;
  [[nodiscard]] const ad::IndexList& transformed(long b) const;
  [[nodiscard]] long sub_block_count() const { return arch_.layers * arch_.sub_blocks; }

 private:
  void build_masks();

  FlowArchitecture arch_;
  BaseDistribution base_;
  std::vector<Mat> params_;  // per sub-block: W0, b0, W1, b1, ...
  std::vector<ad::IndexList> cond_;
  std::vector<ad::IndexList> trans_;
};

}  // namespace wgpath
