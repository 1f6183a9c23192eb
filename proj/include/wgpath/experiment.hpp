#pragma once

// Experiment configuration, built-in presets, and the train -> diagnose ->
// recover-time -> validate pipeline driven by the command-line tool.

#include "wgpath/energy.hpp"
#include "wgpath/flow.hpp"
#include "wgpath/timeline.hpp"
#include "wgpath/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wgpath {

inline constexpr int kConfigVersion = 1;

/// One oracle check. Parameters not given in the config take the defaults of
/// the kind, so the parsed form always lists every parameter.
struct CheckSpec {
  std::string kind;
  std::map<std::string, double> params;

  [[nodiscard]] double param(const std::string& key) const;
};

/// Known check kinds with their default parameters.
const std::map<std::string, std::map<std::string, double>>& check_defaults();

struct EvaluationConfig {
  long samples = 5000;      // evaluation batch
  long energy_factor = 4;   // F0 and FK use samples * energy_factor particles
  long plot_samples = 1000; // scatter points per layer
  long grid = 64;           // density grid points per axis, d <= 2
};

/// Training overrides for the two physical-time runs of compare-meshes; zero
/// keeps the value of the main training section.
struct CompareConfig {
  long epochs = 0;
  long batch_size = 0;
  double lr0 = 0.0;
};

struct ExperimentConfig {
  std::string name;
  std::uint64_t seed = 0;
  FreeEnergySpec energy;
  BaseDistribution base;
  FlowArchitecture flow;
  TrainConfig train;  // train.seed is overwritten by seed
  EvaluationConfig evaluation;
  CompareConfig compare;
  std::vector<CheckSpec> validations;
  std::string output_dir;

  /// Dimension and applicability checks; throws ConfigError.
  void validate() const;
  [[nodiscard]] TrainConfig training() const;
};

nlohmann::json to_json(const FreeEnergySpec& e);
FreeEnergySpec energy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

/// Canonical text of a config: every field present, keys sorted.
std::string canonical_dump(const ExperimentConfig& c);

std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
ExperimentConfig preset(const std::string& name);
/// A preset name or the path of a JSON config file.
ExperimentConfig load_experiment(const std::string& preset_or_path);

/// Everything computed from a trained model on the deterministic evaluation
/// batches.
struct Evaluation {
  PathBatch batch;
  PathDiagnostics diag;
  double F0 = 0.0;
  double FK = 0.0;
  std::optional<RecoveredTimeline> timeline;  // geometric mode with F0 > FK
  std::string timeline_note;                  // why the timeline is missing
  std::vector<double> times;                  // per-layer physical times (NaN if unknown)
};

Evaluation evaluate(const FlowModel& model, const ExperimentConfig& cfg);

struct CheckResult {
  CheckSpec spec;
  nlohmann::json values;
  bool pass = false;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool training_aborted = false;
  [[nodiscard]] bool pass() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

CheckResult run_check(const CheckSpec& spec, const FlowModel& model, const ExperimentConfig& cfg,
                      const Evaluation& ev);
ValidationReport validate_model(const FlowModel& model, const ExperimentConfig& cfg,
                                const Evaluation& ev, bool training_aborted);

struct RunResult {
  TrainReport train;
  Evaluation eval;
  ValidationReport validation;
  std::string dir;
  [[nodiscard]] int exit_code() const;
};

/// Trains, evaluates and validates, writing every artifact into `dir`.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& dir, std::ostream& log);

struct RunDirectory {
  ExperimentConfig config;
  FlowModel model;
  bool training_aborted = false;
};
RunDirectory load_run(const std::string& dir);

/// Re-runs the checks of a saved run and rewrites validation.json. `same` is
/// set to whether the new report equals the stored one.
ValidationReport revalidate(const std::string& dir, bool& same);
/// Recomputes the timeline of a saved geometric run and rewrites timeline.json.
RecoveredTimeline recover_run_time(const std::string& dir);

struct MeshComparison {
  std::vector<double> t_uniform;
  std::vector<double> t_recovered;
  std::vector<double> cumulative_uniform;    // K+1 entries, starting at 0
  std::vector<double> cumulative_recovered;
  TrainReport uniform_report;
  TrainReport recovered_report;
  /// Recovered cumulative loss <= uniform cumulative loss at every layer k >= 1.
  [[nodiscard]] bool recovered_not_worse() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// Trains two physical-time models from the same initialization and seed, one
/// on a uniform mesh and one on the mesh recovered from `geometric`, and
/// accumulates their per-segment losses on a shared evaluation batch.
MeshComparison compare_meshes(const FlowModel& geometric, const ExperimentConfig& cfg,
                              std::ostream& log);
/// Runs compare_meshes on a saved run and writes compare_meshes.{csv,json}.
MeshComparison compare_run_meshes(const std::string& dir, std::ostream& log);

}  // namespace wgpath
