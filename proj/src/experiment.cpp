#include "wgpath/experiment.hpp"

#include "wgpath/checkpoint.hpp"
#include "wgpath/json_util.hpp"
#include "wgpath/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace wgpath {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Offsets that separate the random streams of one experiment seed.
constexpr std::uint64_t kEvalStream = 1000001;
constexpr std::uint64_t kEnergyStream = 1000002;
constexpr std::uint64_t kReferenceStream = 1000003;
constexpr std::uint64_t kCompareStream = 1000004;

template <class F>
auto in_section(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vector_or_null(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(finite_or_null(x));
  return a;
}

std::optional<GaussianState> gaussian_base_state(const BaseDistribution& b) {
  if (b.kind == BaseKind::StandardGaussian) {
    return GaussianState{Vec::Zero(b.dim), Mat::Identity(b.dim, b.dim)};
  }
  if (b.kind == BaseKind::GaussianMixture && b.weights.size() == 1) {
    return GaussianState{b.means.row(0).transpose(), b.variance * Mat::Identity(b.dim, b.dim)};
  }
  return std::nullopt;
}

/// Equilibrium of entropy/beta plus a quadratic potential: N(mu, Sigma/beta).
std::optional<GaussianState> gaussian_target(const FreeEnergySpec& e) {
  if (!e.internal || e.internal->kind != InternalKind::Entropy) return std::nullopt;
  if (e.potential.kind != PotentialKind::QuadraticGaussianTarget || e.kernel.active()) return std::nullopt;
  return GaussianState{e.potential.mu, e.potential.sigma / e.internal->beta};
}

double coefficient_of_variation(const Vec& x) {
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  return sd / std::abs(mean);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

double CheckSpec::param(const std::string& key) const {
  const auto it = params.find(key);
  if (it == params.end()) throw std::out_of_range("check " + kind + ": no parameter " + key);
  return it->second;
}

const std::map<std::string, std::map<std::string, double>>& check_defaults() {
  static const std::map<std::string, std::map<std::string, double>> defaults = {
      {"terminal_gaussian", {{"mean_tol", 0.05}, {"cov_tol", 0.05}}},
      {"terminal_w2", {{"max", 0.1}}},
      {"cosine_alignment", {{"min", 0.95}}},
      {"segment_cv", {{"max", 0.1}}},
      {"energy_decay", {{"slack", 0.0}}},
      {"ou_time_recovery", {{"rel_tol", 0.15}, {"t_max", 20.0}}},
      {"steady_state_disk", {{"radius_lo", 0.95}, {"radius_hi", 1.05}}},
      {"annulus_radii", {{"rel_tol", 0.05}}},
      {"arc_action_cv", {{"max", 0.25}}},
      {"mass_conservation", {{"rel_tol", 1e-12}}},
      {"marginal_w1", {{"max", 0.1}, {"paths", 5000.0}, {"dt", 1e-3}}},
      {"zero_path", {{"tol", 0.0}}},
  };
  return defaults;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const FreeEnergySpec& e) {
  json j;
  if (!e.internal) {
    j["internal"] = nullptr;
  } else if (e.internal->kind == InternalKind::Entropy) {
    j["internal"] = {{"kind", "entropy"}, {"beta", e.internal->beta}};
  } else {
    j["internal"] = {{"kind", "power_law"}, {"m", e.internal->m}, {"beta", e.internal->beta}};
  }
  switch (e.potential.kind) {
    case PotentialKind::None:
      j["potential"] = {{"kind", "none"}};
      break;
    case PotentialKind::QuadraticGaussianTarget:
      j["potential"] = {{"kind", "quadratic"}, {"mu", to_json(e.potential.mu)},
                        {"sigma", to_json(e.potential.sigma)}};
      break;
    case PotentialKind::StyblinskiTang:
      j["potential"] = {{"kind", "styblinski_tang"}, {"scale", e.potential.scale}};
      break;
    case PotentialKind::LogConfinement:
      j["potential"] = {{"kind", "log_confinement"}, {"alpha1", e.potential.alpha1},
                        {"alpha2", e.potential.alpha2}};
      break;
    case PotentialKind::Custom:
      throw ConfigError("energy.potential: custom potentials cannot be written to a config");
  }
  switch (e.kernel.kind) {
    case KernelKind::None:
      j["kernel"] = {{"kind", "none"}};
      break;
    case KernelKind::QuadraticLog:
      j["kernel"] = {{"kind", "quadratic_log"}};
      break;
    case KernelKind::GaussianAttraction:
      j["kernel"] = {{"kind", "gaussian_attraction"}, {"amplitude", e.kernel.amplitude},
                     {"width", e.kernel.width}};
      break;
    case KernelKind::Custom:
      throw ConfigError("energy.kernel: custom kernels cannot be written to a config");
  }
  j["mass"] = e.mass;
  return j;
}

FreeEnergySpec energy_from_json(const json& j) {
  const JsonObject o(j, "energy");
  FreeEnergySpec e;
  if (o.has("internal") && !o.raw("internal").is_null()) {
    const JsonObject in = o.object("internal");
    const auto kind = in.get<std::string>("kind");
    if (kind == "entropy") {
      e.internal = InternalEnergySpec::entropy(in.get_or<double>("beta", 1.0));
    } else if (kind == "power_law") {
      e.internal = InternalEnergySpec::power_law(in.get<double>("m"), in.get_or<double>("beta", 1.0));
    } else {
      throw ConfigError("energy.internal.kind: unknown internal energy '" + kind + "'");
    }
    in.finish();
    in_section("energy.internal", [&] { e.internal->validate(); });
  }
  if (o.has("potential")) {
    const JsonObject p = o.object("potential");
    const auto kind = p.get<std::string>("kind");
    in_section("energy.potential", [&] {
      if (kind == "none") {
        e.potential = PotentialSpec::none();
      } else if (kind == "quadratic") {
        e.potential = PotentialSpec::quadratic(p.vector("mu"), p.matrix("sigma"));
      } else if (kind == "styblinski_tang") {
        e.potential = PotentialSpec::styblinski_tang(p.get<double>("scale"));
      } else if (kind == "log_confinement") {
        e.potential = PotentialSpec::log_confinement(p.get<double>("alpha1"), p.get<double>("alpha2"));
      } else {
        throw ConfigError("energy.potential.kind: unknown potential '" + kind + "'");
      }
    });
    p.finish();
  }
  if (o.has("kernel")) {
    const JsonObject k = o.object("kernel");
    const auto kind = k.get<std::string>("kind");
    in_section("energy.kernel", [&] {
      if (kind == "none") {
        e.kernel = KernelSpec::none();
      } else if (kind == "quadratic_log") {
        e.kernel = KernelSpec::quadratic_log();
      } else if (kind == "gaussian_attraction") {
        e.kernel = KernelSpec::gaussian_attraction(k.get<double>("amplitude"), k.get<double>("width"));
      } else {
        throw ConfigError("energy.kernel.kind: unknown kernel '" + kind + "'");
      }
    });
    k.finish();
  }
  e.mass = o.get_or<double>("mass", 1.0);
  o.finish();
  in_section("energy", [&] { e.validate(); });
  return e;
}

json to_json(const TrainConfig& t) {
  json physical = {{"horizon", t.physical.horizon},
                   {"steps", t.physical.steps},
                   {"mesh", t.physical.mesh},
                   {"weights", t.physical.weights}};
  json geometric = {{"alpha_term", t.geometric.alpha_term},
                    {"alpha_arc", t.geometric.alpha_arc},
                    {"penalty", to_string(t.geometric.penalty)}};
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr0", t.lr0},
          {"gamma", t.gamma},
          {"mode", to_string(t.mode)},
          {"physical", physical},
          {"geometric", geometric},
          {"detach_velocity", t.detach_velocity},
          {"clip_norm", t.clip_norm},
          {"checkpoint_every", t.checkpoint_every},
          {"log_every", t.log_every}};
}

TrainConfig train_from_json(const json& j) {
  const JsonObject o(j, "train");
  TrainConfig t;
  t.epochs = o.get_or<long>("epochs", t.epochs);
  t.batch_size = o.get_or<long>("batch_size", t.batch_size);
  t.lr0 = o.get_or<double>("lr0", t.lr0);
  t.gamma = o.get_or<double>("gamma", t.gamma);
  if (o.has("mode")) {
    in_section(o.path_of("mode"), [&] { t.mode = train_mode_from_string(o.get<std::string>("mode")); });
  }
  if (o.has("physical")) {
    const JsonObject p = o.object("physical");
    t.physical.horizon = p.get_or<double>("horizon", t.physical.horizon);
    t.physical.steps = p.get_or<long>("steps", t.physical.steps);
    t.physical.mesh = p.get_or<std::vector<double>>("mesh", {});
    t.physical.weights = p.get_or<std::vector<double>>("weights", {});
    p.finish();
  }
  if (o.has("geometric")) {
    const JsonObject g = o.object("geometric");
    t.geometric.alpha_term = g.get_or<double>("alpha_term", t.geometric.alpha_term);
    t.geometric.alpha_arc = g.get_or<double>("alpha_arc", t.geometric.alpha_arc);
    if (g.has("penalty")) {
      in_section(g.path_of("penalty"),
                 [&] { t.geometric.penalty = penalty_from_string(g.get<std::string>("penalty")); });
    }
    g.finish();
  }
  t.detach_velocity = o.get_or<bool>("detach_velocity", t.detach_velocity);
  t.clip_norm = o.get_or<double>("clip_norm", t.clip_norm);
  t.checkpoint_every = o.get_or<long>("checkpoint_every", t.checkpoint_every);
  t.log_every = o.get_or<long>("log_every", t.log_every);
  o.finish();
  return t;
}

json to_json(const ExperimentConfig& c) {
  json checks = json::array();
  for (const auto& v : c.validations) {
    json cj = {{"kind", v.kind}};
    for (const auto& [k, x] : v.params) cj[k] = x;
    checks.push_back(cj);
  }
  return {{"version", kConfigVersion},
          {"name", c.name},
          {"seed", c.seed},
          {"energy", to_json(c.energy)},
          {"base", to_json(c.base)},
          {"flow", to_json(c.flow)},
          {"train", to_json(c.train)},
          {"evaluation",
           {{"samples", c.evaluation.samples},
            {"energy_factor", c.evaluation.energy_factor},
            {"plot_samples", c.evaluation.plot_samples},
            {"grid", c.evaluation.grid}}},
          {"compare",
           {{"epochs", c.compare.epochs}, {"batch_size", c.compare.batch_size}, {"lr0", c.compare.lr0}}},
          {"validations", checks},
          {"output_dir", c.output_dir}};
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  const JsonObject o(j, "");
  const int version = o.get<int>("version");
  if (version != kConfigVersion) {
    throw ConfigError("version: unsupported config version " + std::to_string(version));
  }
  ExperimentConfig c;
  c.name = o.get<std::string>("name");
  c.seed = o.get_or<std::uint64_t>("seed", 0);
  c.energy = energy_from_json(o.raw("energy"));
  c.base = in_section("base", [&] { return base_from_json(o.raw("base")); });
  c.flow = in_section("flow", [&] { return architecture_from_json(o.raw("flow")); });
  c.train = train_from_json(o.has("train") ? o.raw("train") : json::object());
  if (o.has("evaluation")) {
    const JsonObject e = o.object("evaluation");
    c.evaluation.samples = e.get_or<long>("samples", c.evaluation.samples);
    c.evaluation.energy_factor = e.get_or<long>("energy_factor", c.evaluation.energy_factor);
    c.evaluation.plot_samples = e.get_or<long>("plot_samples", c.evaluation.plot_samples);
    c.evaluation.grid = e.get_or<long>("grid", c.evaluation.grid);
    e.finish();
  }
  if (o.has("compare")) {
    const JsonObject m = o.object("compare");
    c.compare.epochs = m.get_or<long>("epochs", 0);
    c.compare.batch_size = m.get_or<long>("batch_size", 0);
    c.compare.lr0 = m.get_or<double>("lr0", 0.0);
    m.finish();
  }
  if (o.has("validations")) {
    const auto& arr = o.raw("validations");
    if (!arr.is_array()) throw ConfigError("validations: expected an array");
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "validations[" + std::to_string(i) + "]";
      const JsonObject v(arr[i], path);
      CheckSpec spec;
      spec.kind = v.get<std::string>("kind");
      const auto it = check_defaults().find(spec.kind);
      if (it == check_defaults().end()) {
        throw ConfigError(path + ".kind: unknown check '" + spec.kind + "'");
      }
      for (const auto& [key, def] : it->second) spec.params[key] = v.get_or<double>(key, def);
      v.finish();
      c.validations.push_back(spec);
    }
  }
  c.output_dir = o.get_or<std::string>("output_dir", "runs/" + c.name);
  o.finish();
  c.validate();
  return c;
}

std::string canonical_dump(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

TrainConfig ExperimentConfig::training() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name: must not be empty");
  in_section("energy", [&] { energy.validate(); });
  in_section("base", [&] { base.validate(); });
  in_section("flow", [&] { flow.validate(); });
  const long d = flow.dim;
  if (base.dim != d) {
    throw ConfigError("base: dimension " + std::to_string(base.dim) + " differs from flow.dim " +
                      std::to_string(d));
  }
  if (const auto pd = energy.potential.dimension(); pd && *pd != d) {
    throw ConfigError("energy.potential: dimension " + std::to_string(*pd) + " differs from flow.dim " +
                      std::to_string(d));
  }
  if (energy.has_internal() && !base.has_smooth_score()) {
    throw ConfigError("base: an internal energy needs a smooth base; set base.smoothing > 0");
  }
  in_section("train", [&] { training().validate(energy); });
  if (train.mode == TrainMode::PhysicalTime && train.physical.steps != flow.layers) {
    throw ConfigError("train.physical.steps: must equal flow.layers (" + std::to_string(flow.layers) + ")");
  }
  if (evaluation.samples < 2) throw ConfigError("evaluation.samples: must be at least 2");
  if (evaluation.energy_factor < 1) throw ConfigError("evaluation.energy_factor: must be at least 1");
  if (evaluation.plot_samples < 0) throw ConfigError("evaluation.plot_samples: must be nonnegative");
  if (evaluation.grid < 2) throw ConfigError("evaluation.grid: must be at least 2");
  if (compare.epochs < 0 || compare.batch_size < 0 || compare.lr0 < 0.0) {
    throw ConfigError("compare: overrides must be nonnegative");
  }
  for (size_t i = 0; i < validations.size(); ++i) {
    const auto& v = validations[i];
    const std::string path = "validations[" + std::to_string(i) + "]";
    const bool geometric = train.mode == TrainMode::Geometric;
    if (v.kind == "terminal_gaussian" || v.kind == "terminal_w2") {
      if (!gaussian_target(energy)) {
        throw ConfigError(path + ": needs entropy plus a quadratic potential and no kernel");
      }
    } else if (v.kind == "ou_time_recovery") {
      if (!gaussian_target(energy) || !gaussian_base_state(base) || !geometric) {
        throw ConfigError(path + ": needs a Gaussian base, an OU energy and geometric training");
      }
    } else if (v.kind == "steady_state_disk") {
      if (d != 2 || energy.kernel.kind != KernelKind::QuadraticLog || energy.potential.active() ||
          energy.has_internal()) {
        throw ConfigError(path + ": needs the 2-D pure aggregation energy");
      }
    } else if (v.kind == "annulus_radii") {
      if (d != 2 || energy.kernel.kind != KernelKind::QuadraticLog ||
          energy.potential.kind != PotentialKind::LogConfinement || energy.has_internal()) {
        throw ConfigError(path + ": needs the 2-D aggregation-drift energy");
      }
    } else if (v.kind == "arc_action_cv" || v.kind == "segment_cv") {
      if (flow.layers < 2) throw ConfigError(path + ": needs at least two segments");
    } else if (v.kind == "marginal_w1") {
      const bool ok = energy.potential.kind == PotentialKind::StyblinskiTang && energy.internal &&
                      energy.internal->kind == InternalKind::Entropy && energy.internal->beta == 1.0 &&
                      !energy.kernel.active() && base.kind == BaseKind::StandardGaussian && geometric;
      if (!ok) {
        throw ConfigError(path + ": needs entropy (beta 1) plus Styblinski-Tang, a standard "
                                 "Gaussian base and geometric training");
      }
      if (!(v.param("dt") > 0.0) || v.param("paths") < 2.0) {
        throw ConfigError(path + ": dt must be positive and paths at least 2");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Presets

namespace {

ExperimentConfig common(const std::string& name, long dim) {
  ExperimentConfig c;
  c.name = name;
  c.seed = 1;
  c.base = BaseDistribution::standard_gaussian(dim);
  c.flow.dim = dim;
  c.output_dir = "runs/" + name;
  c.train.log_every = 50;
  return c;
}

CheckSpec check(const std::string& kind, std::map<std::string, double> overrides = {}) {
  CheckSpec s{kind, check_defaults().at(kind)};
  for (const auto& [k, v] : overrides) s.params.at(k) = v;
  return s;
}

ExperimentConfig ou2d(const std::string& name, const Mat& sigma) {
  ExperimentConfig c = common(name, 2);
  c.energy.internal = InternalEnergySpec::entropy();
  c.energy.potential = PotentialSpec::quadratic(Vec::Constant(2, 3.0), sigma);
  c.flow.coupling = CouplingKind::Affine;
  c.flow.layers = 9;
  c.flow.depth = 4;
  c.flow.width = 128;
  c.flow.activation = Activation::LeakyReLU;
  c.train.epochs = 1000;
  c.train.batch_size = 5000;
  c.train.lr0 = 8e-4;
  c.train.gamma = 0.9999;
  c.train.geometric = {5.0, 1.0, ParametrizationPenalty::ArcLength};
  c.validations = {check("terminal_gaussian"), check("terminal_w2"), check("cosine_alignment"),
                   check("segment_cv"), check("ou_time_recovery"), check("energy_decay")};
  return c;
}

ExperimentConfig ou10d() {
  ExperimentConfig c = common("ou10d-block", 10);
  Vec mu(10);
  mu << 1, 1, 0, 0, 1, 2, 0, 0, 2, 3;
  Mat s = Mat::Identity(10, 10);
  s(0, 0) = s(1, 1) = 5.0 / 8.0;
  s(0, 1) = s(1, 0) = -3.0 / 8.0;
  s(5, 5) = 0.25;
  s(8, 8) = s(9, 9) = 0.25;
  c.energy.internal = InternalEnergySpec::entropy();
  c.energy.potential = PotentialSpec::quadratic(mu, s);
  c.flow.coupling = CouplingKind::Affine;
  c.flow.layers = 9;
  c.flow.depth = 4;
  c.flow.width = 128;
  c.flow.activation = Activation::LeakyReLU;
  c.train.epochs = 1000;
  c.train.batch_size = 5000;
  c.train.lr0 = 8e-4;
  c.train.gamma = 0.9999;
  c.train.geometric = {5.0, 1.0, ParametrizationPenalty::ArcLength};
  c.validations = {check("terminal_gaussian", {{"mean_tol", 0.1}, {"cov_tol", 0.2}}),
                   check("terminal_w2", {{"max", 0.2}}), check("ou_time_recovery"),
                   check("energy_decay")};
  return c;
}

ExperimentConfig styblinski() {
  ExperimentConfig c = common("styblinski10d", 10);
  c.energy.internal = InternalEnergySpec::entropy();
  c.energy.potential = PotentialSpec::styblinski_tang(3.0 / 50.0);
  c.flow.coupling = CouplingKind::Spline;
  c.flow.layers = 9;
  c.flow.depth = 3;
  c.flow.width = 100;
  c.flow.activation = Activation::SiLU;
  c.flow.bins = 8;
  c.flow.bound = 6.0;
  c.train.epochs = 1000;
  c.train.batch_size = 2000;
  c.train.lr0 = 1e-3;
  c.train.gamma = 0.999;
  c.train.geometric = {1.2, 5.0, ParametrizationPenalty::ArcLength};
  c.validations = {check("marginal_w1"), check("energy_decay")};
  return c;
}

ExperimentConfig aggregation() {
  ExperimentConfig c = common("aggregation", 2);
  c.base = BaseDistribution::gaussian_mixture(Vec::Ones(1), Mat::Zero(1, 2), 0.25);
  c.energy.kernel = KernelSpec::quadratic_log();
  c.flow.coupling = CouplingKind::Spline;
  c.flow.layers = 7;
  c.flow.depth = 3;
  c.flow.width = 32;
  c.flow.activation = Activation::SiLU;
  c.flow.bins = 8;
  c.flow.bound = 4.0;
  c.train.epochs = 3000;
  c.train.batch_size = 2000;
  c.train.lr0 = 2e-3;
  c.train.gamma = 0.999;
  c.train.geometric = {200.0, 1.0, ParametrizationPenalty::ArcLength};
  c.validations = {check("steady_state_disk"), check("energy_decay")};
  return c;
}

ExperimentConfig aggregation_drift() {
  ExperimentConfig c = common("aggregation-drift", 2);
  Mat means(5, 2);
  means << 1.2, 0.4, -0.9, 1.1, -1.1, -0.8, 0.6, -1.2, 0.1, 0.2;
  Vec w(5);
  w << 0.3, 0.2, 0.2, 0.15, 0.15;
  c.base = BaseDistribution::gaussian_mixture(w, means, 0.1);
  c.energy.potential = PotentialSpec::log_confinement(1.0, 1.0);
  c.energy.kernel = KernelSpec::quadratic_log();
  c.flow.coupling = CouplingKind::Spline;
  c.flow.layers = 7;
  c.flow.depth = 3;
  c.flow.width = 32;
  c.flow.activation = Activation::SiLU;
  c.flow.bins = 8;
  c.flow.bound = 4.0;
  c.train.epochs = 2000;
  c.train.batch_size = 1000;
  c.train.lr0 = 2e-3;
  c.train.gamma = 0.999;
  c.train.geometric = {20.0, 1.0, ParametrizationPenalty::ArcLength};
  c.compare = {1000, 1000, 0.0};
  c.validations = {check("annulus_radii"), check("energy_decay")};
  return c;
}

ExperimentConfig aggregation_diffusion() {
  ExperimentConfig c = common("aggregation-diffusion", 2);
  c.base = BaseDistribution::uniform_box(Vec::Constant(2, -3.0), Vec::Constant(2, 3.0), 1e-2);
  c.energy.internal = InternalEnergySpec::power_law(2.0, 10.0);
  c.energy.kernel = KernelSpec::gaussian_attraction(1.0 / M_PI, 1.0);
  c.energy.mass = 9.0;
  c.flow.coupling = CouplingKind::Spline;
  c.flow.layers = 11;
  c.flow.depth = 3;
  c.flow.width = 32;
  c.flow.activation = Activation::SiLU;
  c.flow.bins = 8;
  c.flow.bound = 6.0;
  c.train.epochs = 1000;
  c.train.batch_size = 1000;
  c.train.lr0 = 2e-3;
  c.train.gamma = 0.999;
  c.train.geometric = {10.0, 1.0, ParametrizationPenalty::ArcAction};
  c.validations = {check("arc_action_cv"), check("mass_conservation"), check("energy_decay")};
  return c;
}

ExperimentConfig zero_energy() {
  ExperimentConfig c = common("zero-energy", 2);
  c.flow.layers = 3;
  c.flow.depth = 3;
  c.flow.width = 8;
  c.train.epochs = 20;
  c.train.batch_size = 64;
  c.train.geometric = {0.0, 0.0, ParametrizationPenalty::ArcLength};
  c.train.log_every = 0;
  c.evaluation.samples = 500;
  c.evaluation.plot_samples = 200;
  c.evaluation.grid = 16;
  c.validations = {check("zero_path"), check("mass_conservation"), check("energy_decay")};
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"ou2d-isotropic", "ou2d-anisotropic",      "ou10d-block",           "styblinski10d",
          "aggregation",    "aggregation-drift",     "aggregation-diffusion", "zero-energy"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "ou2d-isotropic") {
    c = ou2d(name, 0.25 * Mat::Identity(2, 2));
  } else if (name == "ou2d-anisotropic") {
    Mat s = Mat::Zero(2, 2);
    s(0, 0) = 1.0;
    s(1, 1) = 0.25;
    c = ou2d(name, s);
  } else if (name == "ou10d-block") {
    c = ou10d();
  } else if (name == "styblinski10d") {
    c = styblinski();
  } else if (name == "aggregation") {
    c = aggregation();
  } else if (name == "aggregation-drift") {
    c = aggregation_drift();
  } else if (name == "aggregation-diffusion") {
    c = aggregation_diffusion();
  } else if (name == "zero-energy") {
    c = zero_energy();
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& preset_or_path) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), preset_or_path) != names.end()) {
    return preset(preset_or_path);
  }
  if (!fs::exists(preset_or_path)) {
    throw ConfigError("'" + preset_or_path + "' is neither a preset nor a readable file");
  }
  return experiment_from_json(read_json(preset_or_path));
}

// ---------------------------------------------------------------------------
// Evaluation and checks

Evaluation evaluate(const FlowModel& model, const ExperimentConfig& cfg) {
  Evaluation ev;
  Rng rng(cfg.seed + kEvalStream);
  const Mat z = model.base().sample(cfg.evaluation.samples, rng);
  ev.batch = model.push_forward(z);
  ev.diag = diagnose(model, z, cfg.energy);

  Rng erng(cfg.seed + kEnergyStream);
  const PathBatch big =
      model.push_forward(model.base().sample(cfg.evaluation.samples * cfg.evaluation.energy_factor, erng));
  ev.F0 = free_energy_estimate(big.positions.front(), big.log_densities.front(), cfg.energy);
  ev.FK = free_energy_estimate(big.positions.back(), big.log_densities.back(), cfg.energy);

  const auto k = static_cast<size_t>(model.layers());
  if (cfg.train.mode == TrainMode::PhysicalTime) {
    ev.times = cfg.train.physical.times();
  } else if (ev.F0 > ev.FK) {
    ev.timeline = recover_time(ev.diag, ev.F0, ev.FK);
    ev.times = ev.timeline->t;
  } else {
    ev.timeline_note = "no free-energy decrease along the path (F0 <= FK)";
    ev.times.assign(k + 1, kNaN);
  }
  return ev;
}

CheckResult run_check(const CheckSpec& spec, const FlowModel& model, const ExperimentConfig& cfg,
                      const Evaluation& ev) {
  CheckResult r{spec, json::object(), false};
  const auto& pos = ev.batch.positions;
  const Mat& terminal = pos.back();
  const long k_layers = model.layers();
  const std::string& kind = spec.kind;

  if (kind == "terminal_gaussian" || kind == "terminal_w2") {
    const GaussianState target = *gaussian_target(cfg.energy);
    const GaussianState fit = GaussianState::fit(terminal);
    if (kind == "terminal_gaussian") {
      const double mean_err = (fit.mean - target.mean).norm();
      const double cov_err = (fit.covariance - target.covariance).norm();
      r.values = {{"mean", to_json(fit.mean)},
                  {"covariance", to_json(fit.covariance)},
                  {"mean_error", mean_err},
                  {"covariance_error", cov_err}};
      r.pass = mean_err <= spec.param("mean_tol") && cov_err <= spec.param("cov_tol");
    } else {
      const double w2 = gaussian_w2(fit, target);
      r.values = {{"w2", w2}};
      r.pass = w2 <= spec.param("max");
    }
  } else if (kind == "cosine_alignment") {
    double sum = 0.0;
    long n = 0;
    json per = json::array();
    for (const auto& c : ev.diag.cosine) {
      per.push_back(c ? json(*c) : json(nullptr));
      if (c) {
        sum += *c;
        ++n;
      }
    }
    r.values = {{"per_segment", per}, {"mean", n > 0 ? json(sum / n) : json(nullptr)}};
    r.pass = n > 0 && sum / n >= spec.param("min");
  } else if (kind == "segment_cv") {
    const double cv = coefficient_of_variation(ev.diag.d);
    r.values = {{"d", to_json(ev.diag.d)}, {"cv", finite_or_null(cv)}};
    r.pass = std::isfinite(cv) && cv <= spec.param("max");
  } else if (kind == "energy_decay") {
    const Vec& f = ev.diag.free_energy;
    double worst = -std::numeric_limits<double>::infinity();
    for (long j = 1; j < f.size(); ++j) worst = std::max(worst, f(j) - f(j - 1));
    r.values = {{"free_energy", to_json(f)}, {"max_increase", worst}};
    r.pass = worst <= spec.param("slack");
  } else if (kind == "ou_time_recovery") {
    if (!ev.timeline) {
      r.values = {{"error", ev.timeline_note}};
      return r;
    }
    const auto& tl = *ev.timeline;
    const GaussianState initial = *gaussian_base_state(cfg.base);
    const GaussianState target = *gaussian_target(cfg.energy);
    std::vector<double> oracle;
    std::vector<double> rel;
    bool ok = true;
    for (long j = 1; j < k_layers; ++j) {
      const double t = tl.t[static_cast<size_t>(j)];
      const double to =
          nearest_ou_time(GaussianState::fit(pos[static_cast<size_t>(j)]), initial, target, spec.param("t_max"));
      oracle.push_back(to);
      const double e = std::abs(t - to) / to;
      rel.push_back(e);
      ok = ok && std::isfinite(e) && e <= spec.param("rel_tol");
    }
    // A censored segment may only be followed by censored segments.
    bool seen = false;
    bool ordered = true;
    for (bool c : tl.censored_segments) {
      if (seen && !c) ordered = false;
      seen = seen || c;
    }
    r.values = {{"t", vector_or_null(tl.t)},
                {"t_oracle", oracle},
                {"relative_error", vector_or_null(rel)},
                {"terminal_censored", tl.censored},
                {"censoring_ordered", ordered}};
    r.pass = ok && ordered;
  } else if (kind == "steady_state_disk") {
    const auto rep = steady_state_check(terminal, SteadyStateSpec::unit_disk());
    r.values = {{"n", rep.n},
                {"max_radius", rep.max_radius},
                {"quantile_levels", rep.quantile_levels},
                {"quantiles", rep.quantiles},
                {"ks", rep.ks},
                {"ks_critical_1pct", rep.ks_critical_1pct}};
    r.pass = rep.max_radius >= spec.param("radius_lo") && rep.max_radius <= spec.param("radius_hi") &&
             rep.ks_pass();
  } else if (kind == "annulus_radii") {
    const double ri = std::sqrt(cfg.energy.potential.alpha1 / cfg.energy.potential.alpha2);
    const double ro = std::sqrt(ri * ri + 1.0);
    const AnnulusFit fit = fit_annulus(terminal);
    const double ei = std::abs(fit.inner - ri) / ri;
    const double eo = std::abs(fit.outer - ro) / ro;
    r.values = {{"inner", fit.inner}, {"outer", fit.outer},           {"expected_inner", ri},
                {"expected_outer", ro}, {"inner_relative_error", ei}, {"outer_relative_error", eo}};
    r.pass = ei <= spec.param("rel_tol") && eo <= spec.param("rel_tol");
  } else if (kind == "arc_action_cv") {
    const Vec& f = ev.diag.free_energy;
    const Vec drops = f.head(f.size() - 1) - f.tail(f.size() - 1);
    const double cv = coefficient_of_variation(drops);
    r.values = {{"drops", to_json(drops)}, {"cv", finite_or_null(cv)}};
    r.pass = std::isfinite(cv) && cv <= spec.param("max");
  } else if (kind == "mass_conservation") {
    const double w = cfg.energy.mass / static_cast<double>(terminal.rows());
    double worst = 0.0;
    bool finite = true;
    for (const auto& x : pos) {
      finite = finite && x.allFinite();
      double total = 0.0;
      for (long i = 0; i < x.rows(); ++i) total += w;
      worst = std::max(worst, std::abs(total - cfg.energy.mass) / cfg.energy.mass);
    }
    r.values = {{"mass", cfg.energy.mass}, {"max_relative_deviation", worst}, {"all_finite", finite}};
    r.pass = finite && worst <= spec.param("rel_tol");
  } else if (kind == "marginal_w1") {
    if (!ev.timeline) {
      r.values = {{"error", ev.timeline_note}};
      return r;
    }
    std::vector<double> times;
    std::vector<long> layers;
    for (long j = 0; j < k_layers; ++j) {
      const double t = ev.timeline->t[static_cast<size_t>(j)];
      if (!std::isfinite(t)) break;
      times.push_back(t);
      layers.push_back(j);
    }
    const auto em = euler_maruyama_1d(PotentialSpec::styblinski_tang(cfg.energy.potential.scale),
                                      static_cast<long>(spec.param("paths")), spec.param("dt"),
                                      times.back(), cfg.seed + kReferenceStream, times);
    std::vector<double> worst;
    double overall = 0.0;
    for (size_t i = 0; i < layers.size(); ++i) {
      const Mat& x = pos[static_cast<size_t>(layers[i])];
      double m = 0.0;
      for (long c = 0; c < x.cols(); ++c) m = std::max(m, w1_1d(x.col(c), em.marginals[i]));
      worst.push_back(m);
      overall = std::max(overall, m);
    }
    r.values = {{"layers", layers}, {"times", times}, {"max_w1_per_layer", worst}, {"max_w1", overall}};
    r.pass = overall <= spec.param("max");
  } else if (kind == "zero_path") {
    const double dmax = ev.diag.d.size() > 0 ? ev.diag.d.maxCoeff() : 0.0;
    const double shift = (terminal - pos.front()).cwiseAbs().maxCoeff();
    r.values = {{"max_segment_length", dmax}, {"max_displacement", shift}};
    r.pass = dmax <= spec.param("tol") && shift <= spec.param("tol");
  } else {
    throw ConfigError("unknown check '" + kind + "'");
  }
  return r;
}

bool ValidationReport::pass() const {
  if (training_aborted) return false;
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

json ValidationReport::to_json() const {
  json arr = json::array();
  for (const auto& c : checks) {
    json params = json::object();
    for (const auto& [k, v] : c.spec.params) params[k] = v;
    arr.push_back({{"kind", c.spec.kind}, {"params", params}, {"values", c.values}, {"pass", c.pass}});
  }
  return {{"pass", pass()}, {"training_aborted", training_aborted}, {"checks", arr}};
}

ValidationReport validate_model(const FlowModel& model, const ExperimentConfig& cfg,
                                const Evaluation& ev, bool training_aborted) {
  ValidationReport rep;
  rep.training_aborted = training_aborted;
  for (const auto& spec : cfg.validations) rep.checks.push_back(run_check(spec, model, cfg, ev));
  return rep;
}

int RunResult::exit_code() const { return validation.pass() ? 0 : 1; }

// ---------------------------------------------------------------------------
// Artifacts

namespace {

void write_diagnostics(const fs::path& dir, const Evaluation& ev) {
  std::ostringstream s;
  s << std::setprecision(17) << "k,d,v,cosine,F,t\n";
  const long k = ev.diag.segments();
  for (long j = 0; j <= k; ++j) {
    const auto js = static_cast<size_t>(j);
    s << j << ",";
    if (j > 0) s << ev.diag.d(j - 1);
    s << "," << ev.diag.v(j) << ",";
    if (j > 0 && ev.diag.cosine[js - 1]) s << *ev.diag.cosine[js - 1];
    s << "," << ev.diag.free_energy(j) << ",";
    if (std::isfinite(ev.times[js])) s << ev.times[js];
    s << "\n";
  }
  write_text(dir / "diagnostics.csv", s.str());
}

json timeline_json(const Evaluation& ev) {
  if (ev.timeline) return to_json(*ev.timeline);
  return {{"c", nullptr}, {"t", vector_or_null(ev.times)}, {"note", ev.timeline_note.empty() ? "configured physical-time mesh" : ev.timeline_note}};
}

void write_plots(const fs::path& dir, const FlowModel& model, const ExperimentConfig& cfg,
                 const Evaluation& ev) {
  fs::create_directories(dir / "plots");
  const long d = model.dim();
  const long k = model.layers();
  {
    std::ostringstream s;
    s << std::setprecision(17) << "layer,i";
    for (long c = 0; c < d; ++c) s << ",x" << c;
    s << "\n";
    const long n = std::min<long>(cfg.evaluation.plot_samples, ev.batch.positions.front().rows());
    for (long j = 0; j <= k; ++j) {
      const Mat& x = ev.batch.positions[static_cast<size_t>(j)];
      for (long i = 0; i < n; ++i) {
        s << j << "," << i;
        for (long c = 0; c < d; ++c) s << "," << x(i, c);
        s << "\n";
      }
    }
    write_text(dir / "plots" / "scatter.csv", s.str());
  }
  {
    std::ostringstream s;
    s << std::setprecision(17) << "k,tau,t,F\n";
    for (long j = 0; j <= k; ++j) {
      const double t = ev.times[static_cast<size_t>(j)];
      s << j << "," << static_cast<double>(j) / static_cast<double>(k) << ",";
      if (std::isfinite(t)) s << t;
      s << "," << ev.diag.free_energy(j) << "\n";
    }
    write_text(dir / "plots" / "free_energy.csv", s.str());
  }
  if (d > 2) return;
  std::ostringstream s;
  s << std::setprecision(17) << (d == 1 ? "layer,x,density\n" : "layer,x,y,density\n");
  const long g = cfg.evaluation.grid;
  for (long j = 0; j <= k; ++j) {
    const Mat& x = ev.batch.positions[static_cast<size_t>(j)];
    const Eigen::RowVectorXd lo = x.colwise().minCoeff();
    const Eigen::RowVectorXd hi = x.colwise().maxCoeff();
    const Eigen::RowVectorXd pad = 0.1 * (hi - lo);
    const Eigen::RowVectorXd a = lo - pad;
    const Eigen::RowVectorXd b = hi + pad;
    const long pts = d == 1 ? g : g * g;
    Mat grid(pts, d);
    for (long i = 0; i < pts; ++i) {
      for (long c = 0; c < d; ++c) {
        const long idx = c == 0 ? i % g : i / g;
        grid(i, c) = a(c) + (b(c) - a(c)) * static_cast<double>(idx) / static_cast<double>(g - 1);
      }
    }
    const Vec logq = model.log_density(j, grid);
    for (long i = 0; i < pts; ++i) {
      s << j;
      for (long c = 0; c < d; ++c) s << "," << grid(i, c);
      s << "," << cfg.energy.mass * std::exp(logq(i)) << "\n";
    }
  }
  write_text(dir / "plots" / "density.csv", s.str());
}

void write_evaluation(const fs::path& dir, const FlowModel& model, const ExperimentConfig& cfg,
                      const Evaluation& ev) {
  write_diagnostics(dir, ev);
  write_text(dir / "timeline.json", timeline_json(ev).dump(2) + "\n");
  write_plots(dir, model, cfg, ev);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& dir_name, std::ostream& log) {
  cfg.validate();
  const fs::path dir(dir_name);
  fs::create_directories(dir);
  write_text(dir / "config.json", canonical_dump(cfg));
  log << "experiment " << cfg.name << " -> " << dir.string() << "\n";

  RunResult res;
  res.dir = dir.string();
  FlowModel model(cfg.flow, cfg.base, cfg.seed);
  TrainConfig tc = cfg.training();
  if (tc.checkpoint_every > 0) tc.checkpoint_path = (dir / "model.json").string();
  std::ostringstream trace;
  trace << std::setprecision(17) << "iter,J,F_terminal,arc_penalty,total\n";
  res.train = train(model, cfg.energy, tc, [&](long it, const LossParts& p) {
    trace << it << "," << p.path << "," << p.terminal << "," << p.arc_penalty << "," << p.total << "\n";
  });
  write_text(dir / "training_log.csv", trace.str());
  log << "training: " << res.train.history.size() << " iterations in " << res.train.wall_seconds
      << " s, " << res.train.clip_events << " clipped steps"
      << (res.train.aborted ? ", aborted: " + res.train.abort_reason : std::string()) << "\n";

  const json meta = {{"experiment", cfg.name},
                     {"config", to_json(cfg)},
                     {"training",
                      {{"iterations", res.train.history.size()},
                       {"aborted", res.train.aborted},
                       {"abort_reason", res.train.abort_reason},
                       {"clip_events", res.train.clip_events},
                       {"wall_seconds", res.train.wall_seconds}}}};
  save_checkpoint((dir / "model.json").string(), model, meta);

  res.eval = evaluate(model, cfg);
  write_evaluation(dir, model, cfg, res.eval);
  res.validation = validate_model(model, cfg, res.eval, res.train.aborted);
  write_text(dir / "validation.json", res.validation.to_json().dump(2) + "\n");
  for (const auto& c : res.validation.checks) {
    log << (c.pass ? "PASS " : "FAIL ") << c.spec.kind << "\n";
  }
  return res;
}

RunDirectory load_run(const std::string& dir_name) {
  const fs::path dir(dir_name);
  ExperimentConfig cfg = experiment_from_json(read_json(dir / "config.json"));
  Checkpoint ck = load_checkpoint((dir / "model.json").string());
  bool aborted = false;
  if (ck.metadata.contains("training")) aborted = ck.metadata["training"].value("aborted", false);
  if (ck.model.architecture().dim != cfg.flow.dim || ck.model.layers() != cfg.flow.layers) {
    throw ConfigError(dir.string() + ": checkpoint does not match config.json");
  }
  return {std::move(cfg), std::move(ck.model), aborted};
}

ValidationReport revalidate(const std::string& dir_name, bool& same) {
  const fs::path dir(dir_name);
  const RunDirectory run = load_run(dir_name);
  const Evaluation ev = evaluate(run.model, run.config);
  ValidationReport rep = validate_model(run.model, run.config, ev, run.training_aborted);
  const json now = json::parse(rep.to_json().dump());
  same = fs::exists(dir / "validation.json") && read_json(dir / "validation.json") == now;
  write_text(dir / "validation.json", rep.to_json().dump(2) + "\n");
  return rep;
}

RecoveredTimeline recover_run_time(const std::string& dir_name) {
  const fs::path dir(dir_name);
  const RunDirectory run = load_run(dir_name);
  if (run.config.train.mode != TrainMode::Geometric) {
    throw ConfigError(dir.string() + ": time recovery needs a geometric-mode run");
  }
  const Evaluation ev = evaluate(run.model, run.config);
  if (!ev.timeline) throw std::runtime_error(dir.string() + ": " + ev.timeline_note);
  write_text(dir / "timeline.json", to_json(*ev.timeline).dump(2) + "\n");
  return *ev.timeline;
}

bool MeshComparison::recovered_not_worse() const {
  for (size_t j = 1; j < cumulative_uniform.size(); ++j) {
    if (!(cumulative_recovered[j] <= cumulative_uniform[j])) return false;
  }
  return true;
}

json MeshComparison::to_json() const {
  return {{"t_uniform", t_uniform},
          {"t_recovered", t_recovered},
          {"cumulative_uniform", cumulative_uniform},
          {"cumulative_recovered", cumulative_recovered},
          {"recovered_not_worse", recovered_not_worse()},
          {"uniform_aborted", uniform_report.aborted},
          {"recovered_aborted", recovered_report.aborted}};
}

MeshComparison compare_meshes(const FlowModel& geometric, const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.train.mode != TrainMode::Geometric) {
    throw ConfigError("compare-meshes: the checkpoint must come from geometric-mode training");
  }
  const Evaluation ev = evaluate(geometric, cfg);
  PhysicalTimeConfig uniform;
  uniform.steps = geometric.layers();
  PhysicalTimeConfig recovered;
  if (ev.timeline) {
    recovered = export_mesh(*ev.timeline);
    uniform.horizon = recovered.times().back();
  } else {
    // Without a free-energy decrease there is no time scale: both runs use
    // the configured uniform mesh.
    log << "compare-meshes: " << ev.timeline_note << "; using the uniform mesh for both runs\n";
    uniform.horizon = cfg.train.physical.horizon;
    recovered = uniform;
  }

  TrainConfig tc = cfg.training();
  tc.mode = TrainMode::PhysicalTime;
  tc.checkpoint_every = 0;
  tc.checkpoint_path.clear();
  if (cfg.compare.epochs > 0) tc.epochs = cfg.compare.epochs;
  if (cfg.compare.batch_size > 0) tc.batch_size = cfg.compare.batch_size;
  if (cfg.compare.lr0 > 0.0) tc.lr0 = cfg.compare.lr0;

  Rng rng(cfg.seed + kCompareStream);
  const Mat z = geometric.base().sample(cfg.evaluation.samples, rng);
  auto run = [&](const PhysicalTimeConfig& mesh, TrainReport& report, std::vector<double>& cumulative) {
    FlowModel m(cfg.flow, cfg.base, cfg.seed);
    tc.physical = mesh;
    report = train(m, cfg.energy, tc);
    const PathBatch b = m.push_forward(z);
    const auto scores = cfg.energy.has_internal() ? m.scores(z) : std::vector<Mat>{};
    const auto fields = empirical_velocities(b, scores, cfg.energy);
    const auto terms = physical_time_terms<Mat>(b.positions, fields, mesh);
    cumulative.assign(1, 0.0);
    for (const auto& t : terms) cumulative.push_back(cumulative.back() + t(0, 0));
  };
  MeshComparison out;
  out.t_uniform = uniform.times();
  out.t_recovered = recovered.times();
  log << "compare-meshes: uniform mesh on [0, " << uniform.horizon << "]\n";
  run(uniform, out.uniform_report, out.cumulative_uniform);
  log << "compare-meshes: recovered mesh\n";
  run(recovered, out.recovered_report, out.cumulative_recovered);
  return out;
}

MeshComparison compare_run_meshes(const std::string& dir_name, std::ostream& log) {
  const fs::path dir(dir_name);
  const RunDirectory run = load_run(dir_name);
  MeshComparison cmp = compare_meshes(run.model, run.config, log);
  std::ostringstream s;
  s << std::setprecision(17) << "k,t_uniform,t_recovered,cumulative_uniform,cumulative_recovered\n";
  for (size_t j = 0; j < cmp.t_uniform.size(); ++j) {
    s << j << "," << cmp.t_uniform[j] << "," << cmp.t_recovered[j] << "," << cmp.cumulative_uniform[j]
      << "," << cmp.cumulative_recovered[j] << "\n";
  }
  write_text(dir / "compare_meshes.csv", s.str());
  write_text(dir / "compare_meshes.json", cmp.to_json().dump(2) + "\n");
  return cmp;
}

}  // namespace wgpath
