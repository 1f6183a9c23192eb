#include "wgpath/trainer.hpp"

#include "wgpath/checkpoint.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>

namespace wgpath {

std::string to_string(TrainMode m) {
  return m == TrainMode::PhysicalTime ? "physical_time" : "geometric";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "physical_time") return TrainMode::PhysicalTime;
  if (s == "geometric") return TrainMode::Geometric;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

void TrainConfig::validate(const FreeEnergySpec& energy) const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (energy.kernel.active() && batch_size < 2) {
    throw std::invalid_argument("train: interaction needs a batch of at least two particles");
  }
  if (!(lr0 > 0.0)) throw std::invalid_argument("train: lr0 must be positive");
  if (!(gamma > 0.0) || gamma > 1.0) throw std::invalid_argument("train: gamma must lie in (0, 1]");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip norm must be positive");
  if (mode == TrainMode::PhysicalTime) physical.validate();
  geometric.validate();
}

LossEvaluation evaluate_objective(const FlowModel& model, const FreeEnergySpec& energy,
                                  const Mat& z, const TrainConfig& cfg, bool with_gradient) {
  ad::Tape tape;
  ScoreMode mode = ScoreMode::None;
  if (energy.internal) mode = cfg.detach_velocity ? ScoreMode::Values : ScoreMode::Differentiable;
  const TapePath path = model.record(tape, z, mode);
  const long k = model.layers();
  std::vector<ad::Var> fields;
  for (long j = 0; j <= k; ++j) {
    const auto js = static_cast<size_t>(j);
    try {
      ad::Var f = empirical_velocity(path.positions[js], path.log_q[js],
                                     energy.internal ? path.scores[js] : ad::Var(), energy);
      fields.push_back(cfg.detach_velocity ? ad::detach(f) : f);
    } catch (const EvaluationError& e) {
      throw EvaluationError(e.what(), j, e.particle());
    }
  }
  LossEvaluation out;
  ad::Var total;
  if (cfg.mode == TrainMode::PhysicalTime) {
    total = physical_time_loss(path.positions, fields, cfg.physical);
    out.parts.path = total.scalar();
  } else {
    std::vector<ad::Var> d;
    std::vector<ad::Var> v;
    for (long j = 0; j <= k; ++j) {
      v.push_back(velocity_norm(fields[static_cast<size_t>(j)]));
      if (j > 0) d.push_back(segment_length(path.positions[static_cast<size_t>(j - 1)],
                                            path.positions[static_cast<size_t>(j)]));
    }
    const ad::Var j_geo = geometric_loss(d, v);
    const ad::Var f_term = free_energy_estimate(path.positions.back(), path.log_q.back(), energy);
    out.parts.path = j_geo.scalar();
    out.parts.terminal = f_term.scalar();
    total = ad::add(j_geo, ad::scale(f_term, cfg.geometric.alpha_term));
    if (cfg.geometric.alpha_arc > 0.0 && k >= 2) {
      ad::Var pen;
      if (cfg.geometric.penalty == ParametrizationPenalty::ArcLength) {
        pen = arc_length_penalty(d);
      } else {
        std::vector<ad::Var> energies;
        for (long j = 0; j < k; ++j) {
          energies.push_back(free_energy_estimate(path.positions[static_cast<size_t>(j)],
                                                  path.log_q[static_cast<size_t>(j)], energy));
        }
        energies.push_back(f_term);
        pen = arc_action_penalty(energies);
      }
      out.parts.arc_penalty = pen.scalar();
      total = ad::add(total, ad::scale(pen, cfg.geometric.alpha_arc));
    }
  }
  out.parts.total = total.scalar();
  if (with_gradient) {
    const auto grads = tape.gradient({total}, {Mat()}, path.params);
    out.gradient.resize(model.parameter_count());
    long o = 0;
    for (const auto& g : grads) {
      out.gradient.segment(o, g.size()) = Eigen::Map<const Vec>(g.data(), g.size());
      o += static_cast<long>(g.size());
    }
  }
  return out;
}

Adam::Adam(long n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

void Adam::step(Vec& params, const Vec& grad, double lr) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

TrainReport train(FlowModel& model, const FreeEnergySpec& energy, const TrainConfig& cfg,
                  const TrainCallback& callback) {
  cfg.validate(energy);
  energy.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  Rng rng(cfg.seed);
  Adam adam(model.parameter_count());
  Vec params = model.flat_params();
  Vec last_good = params;
  for (long it = 0; it < cfg.epochs; ++it) {
    const Mat z = model.base().sample(cfg.batch_size, rng);
    LossEvaluation ev;
    try {
      ev = evaluate_objective(model, energy, z, cfg, true);
    } catch (const EvaluationError& e) {
      report.aborted = true;
      report.abort_reason = std::string("iteration ") + std::to_string(it) + ": " + e.what();
      break;
    }
    if (!std::isfinite(ev.parts.total) || !ev.gradient.allFinite()) {
      report.aborted = true;
      report.abort_reason = "non-finite loss or gradient at iteration " + std::to_string(it);
      break;
    }
    last_good = params;
    const double gnorm = ev.gradient.norm();
    report.grad_norms.push_back(gnorm);
    if (gnorm > cfg.clip_norm) {
      ev.gradient *= cfg.clip_norm / gnorm;
      ++report.clip_events;
    }
    const double lr = cfg.lr0 * std::pow(cfg.gamma, static_cast<double>(it));
    adam.step(params, ev.gradient, lr);
    model.set_flat_params(params);
    report.history.push_back(ev.parts);
    if (callback) callback(it, ev.parts);
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.epochs)) {
      std::cerr << "iter " << it << " total " << std::setprecision(6) << ev.parts.total
                << " path " << ev.parts.path << " terminal " << ev.parts.terminal << " arc "
                << ev.parts.arc_penalty << " |grad| " << gnorm << " clipped so far "
                << report.clip_events << "\n";
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (it + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.checkpoint_path, model, {});
    }
  }
  if (report.aborted) {
    model.set_flat_params(last_good);
    std::cerr << "training aborted: " << report.abort_reason << "\n";
  }
  if (!cfg.checkpoint_path.empty()) {
    save_checkpoint(cfg.checkpoint_path, model, {});
    report.checkpoint_path = cfg.checkpoint_path;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace wgpath
