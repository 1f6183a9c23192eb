#pragma once

// Stochastic optimization of the flow parameters.

#include "wgpath/energy.hpp"
#include "wgpath/flow.hpp"
#include "wgpath/losses.hpp"
#include "wgpath/velocity.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wgpath {

enum class TrainMode { PhysicalTime, Geometric };
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  long epochs = 1000;
  long batch_size = 2000;
  double lr0 = 8e-4;
  double gamma = 0.9999;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Geometric;
  PhysicalTimeConfig physical;
  GeometricConfig geometric;
  bool detach_velocity = false;
  double clip_norm = 10.0;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  long log_every = 0;  // 0 disables progress lines

  void validate(const FreeEnergySpec& energy) const;
};

/// Loss parts and, when requested, the flat parameter gradient of the total.
struct LossEvaluation {
  LossParts parts;
  Vec gradient;
};

LossEvaluation evaluate_objective(const FlowModel& model, const FreeEnergySpec& energy,
                                  const Mat& z, const TrainConfig& cfg, bool with_gradient);

/// Adam with bias-corrected moments.
class Adam {
 public:
  explicit Adam(long n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// Updates `params` in place with step size lr.
  void step(Vec& params, const Vec& grad, double lr);
  [[nodiscard]] long steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

struct TrainReport {
  std::vector<LossParts> history;
  std::vector<double> grad_norms;
  double wall_seconds = 0.0;
  long clip_events = 0;
  bool aborted = false;
  std::string abort_reason;
  std::string checkpoint_path;
  PathDiagnostics final_diagnostics;
};

/// Called after every iteration with the iteration index and its loss parts.
using TrainCallback = std::function<void(long, const LossParts&)>;

/// Runs the optimization and updates `model` in place. On a non-finite loss or
/// gradient the parameters are restored to the last good iterate.
TrainReport train(FlowModel& model, const FreeEnergySpec& energy, const TrainConfig& cfg,
                  const TrainCallback& callback = {});

}  // namespace wgpath
