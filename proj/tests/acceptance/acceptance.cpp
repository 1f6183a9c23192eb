// Acceptance suite: one PASS/FAIL line per criterion. `--only N` runs one
// group; group 3 also reports criterion 4, which reuses the trained OU run.

#include "analytic_paths.hpp"
#include "gradient_check.hpp"
#include "wgpath/experiment.hpp"
#include "wgpath/oracles.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace wgpath;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int id, const std::string& title, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << detail
            << std::endl;
}

std::string num(double x, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << x;
  return s.str();
}

const CheckResult* find_check(const ValidationReport& rep, const std::string& kind) {
  for (const auto& c : rep.checks) {
    if (c.spec.kind == kind) return &c;
  }
  return nullptr;
}

CheckSpec check(const std::string& kind, std::map<std::string, double> overrides = {}) {
  CheckSpec s{kind, check_defaults().at(kind)};
  for (const auto& [k, v] : overrides) s.params.at(k) = v;
  return s;
}

FlowModel random_model(CouplingKind kind, long dim, long layers, std::uint64_t seed, double scale) {
  FlowArchitecture arch;
  arch.coupling = kind;
  arch.dim = dim;
  arch.layers = layers;
  arch.depth = 3;
  arch.width = 16;
  arch.activation = Activation::Tanh;
  arch.bins = 6;
  arch.bound = 4.0;
  FlowModel m(arch, BaseDistribution::standard_gaussian(dim), seed);
  m.randomize(seed + 100, scale);
  return m;
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = Clock::now();
  double roundtrip = 0.0;
  double logdet = 0.0;
  double score = 0.0;
  double mass = 0.0;
  for (auto kind : {CouplingKind::Affine, CouplingKind::Spline}) {
    for (long d : {1L, 2L, 3L}) {
      const FlowModel m = random_model(kind, d, 3, 7 + static_cast<std::uint64_t>(d), 1.0);
      Rng rng(d);
      const Mat z = 2.0 * m.base().sample(500, rng);
      const PathBatch b = m.push_forward(z);
      const auto scores = m.scores(z);
      for (long k = 0; k <= 3; ++k) {
        const auto ks = static_cast<size_t>(k);
        roundtrip = std::max(roundtrip, (m.inverse(k, b.positions[ks]) - z).cwiseAbs().maxCoeff());
        if (k == 0) continue;
        // Score against central differences of the log-density.
        const Mat& x = b.positions[ks];
        Mat fd(x.rows(), d);
        for (long a = 0; a < d; ++a) {
          Mat xp = x;
          Mat xm = x;
          xp.col(a).array() += 1e-4;
          xm.col(a).array() -= 1e-4;
          fd.col(a) = (m.log_density(k, xp) - m.log_density(k, xm)) / 2e-4;
        }
        score = std::max(score, (scores[ks] - fd).norm() / scores[ks].norm());
      }
      // Total log-determinant against the finite-difference Jacobian of z -> x_K.
      for (long i = 0; i < 20; ++i) {
        const Vec x0 = z.row(i).transpose();
        Mat jac(d, d);
        for (long a = 0; a < d; ++a) {
          Mat zp = x0.transpose();
          Mat zm = x0.transpose();
          zp(0, a) += 1e-6;
          zm(0, a) -= 1e-6;
          jac.col(a) = (m.push_forward(zp).positions.back() - m.push_forward(zm).positions.back())
                           .transpose() / 2e-6;
        }
        double ld = 0.0;
        for (const auto& l : b.layer_logdets) ld += l(i);
        logdet = std::max(logdet, std::abs(std::abs(jac.determinant()) - std::exp(ld)) / std::exp(ld));
      }
      if (d > 2) continue;
      // Trapezoid rule on a wide grid.
      const long n = d == 1 ? 20001 : 401;
      const double lo = -10.0;
      const double h = 20.0 / static_cast<double>(n - 1);
      const long pts = d == 1 ? n : n * n;
      Mat grid(pts, d);
      Vec w(pts);
      for (long i = 0; i < pts; ++i) {
        const long ia = i % n;
        const long ib = i / n;
        grid(i, 0) = lo + h * static_cast<double>(ia);
        w(i) = (ia == 0 || ia == n - 1) ? 0.5 * h : h;
        if (d == 2) {
          grid(i, 1) = lo + h * static_cast<double>(ib);
          w(i) *= (ib == 0 || ib == n - 1) ? 0.5 * h : h;
        }
      }
      const double total = w.dot(m.log_density(3, grid).array().exp().matrix());
      mass = std::max(mass, std::abs(total - 1.0));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = roundtrip <= 1e-6 && logdet <= 1e-5 && score <= 1e-4 && mass <= 1e-2 && secs < 60.0;
  verdict(1, "flow correctness", pass,
          "round-trip " + num(roundtrip) + " (<= 1e-6), log-det rel " + num(logdet) + " (<= 1e-5), score rel " +
              num(score) + " (<= 1e-4), |mass - 1| " + num(mass) + " (<= 1e-2), " + num(secs, 3) + " s (< 60)");
}

void criterion2() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  struct Case {
    long dim;
    Activation act;
    CouplingKind kind;
  };
  for (const Case c : {Case{1, Activation::Tanh, CouplingKind::Affine}, Case{2, Activation::SiLU, CouplingKind::Affine},
                       Case{2, Activation::Tanh, CouplingKind::Spline}}) {
    FlowArchitecture arch;
    arch.dim = c.dim;
    arch.layers = 2;
    arch.depth = 3;
    arch.width = 4;
    arch.activation = c.act;
    arch.coupling = c.kind;
    arch.bins = 5;
    arch.bound = 4.0;
    FlowModel m(arch, BaseDistribution::standard_gaussian(c.dim), 3);
    m.randomize(4, 0.4);
    FreeEnergySpec e;
    e.internal = InternalEnergySpec::entropy(0.8);
    e.potential = PotentialSpec::quadratic(Vec::Constant(c.dim, 0.7), 0.5 * Mat::Identity(c.dim, c.dim));
    e.kernel = KernelSpec::gaussian_attraction(0.3, 1.0);
    e.mass = 1.5;
    Rng rng(5);
    const Mat z = m.base().sample(8, rng);
    for (bool detach : {false, true}) {
      TrainConfig cfg;
      cfg.detach_velocity = detach;
      cfg.mode = TrainMode::PhysicalTime;
      cfg.physical.horizon = 0.5;
      cfg.physical.steps = 2;
      worst = std::max(worst, testing::gradient_error(m, e, cfg, z));
      cfg.mode = TrainMode::Geometric;
      cfg.geometric = {1.3, 0.7, ParametrizationPenalty::ArcLength};
      worst = std::max(worst, testing::gradient_error(m, e, cfg, z));
    }
  }
  const double secs = seconds_since(t0);
  verdict(2, "parameter gradients vs finite differences", worst <= 1e-4 && secs < 60.0,
          "max relative error " + num(worst) + " (<= 1e-4) over both losses, with and without detach, " +
              num(secs, 3) + " s (< 60)");
}

void criterion3and4(const fs::path& runs) {
  ExperimentConfig c = preset("ou2d-isotropic");
  // Desk scale: N = 2000 and width 64, with doubled tolerances.
  c.train.batch_size = 2000;
  c.flow.width = 64;
  c.validations = {check("terminal_gaussian", {{"mean_tol", 0.1}, {"cov_tol", 0.1}}),
                   check("cosine_alignment", {{"min", 0.95}}), check("segment_cv", {{"max", 0.2}})};
  const auto t0 = Clock::now();
  const RunResult res = run_experiment(c, (runs / c.name).string(), std::cerr);
  const double secs = seconds_since(t0);
  const auto& v = res.validation;
  const auto* g = find_check(v, "terminal_gaussian");
  const auto* cs = find_check(v, "cosine_alignment");
  const auto* cv = find_check(v, "segment_cv");
  verdict(3, "OU isotropic terminal law, alignment and arc length", v.pass() && secs <= 900.0,
          "mean error " + num(g->values["mean_error"].get<double>()) + " (<= 0.1), covariance error " +
              num(g->values["covariance_error"].get<double>()) + " (<= 0.1), mean cosine " +
              num(cs->values["mean"].get<double>()) + " (>= 0.95), CV(d) " + num(cv->values["cv"].get<double>()) +
              " (<= 0.2), " + num(secs, 4) + " s (<= 900)");

  const auto t1 = Clock::now();
  const RunDirectory run = load_run(res.dir);
  const Evaluation ev = evaluate(run.model, run.config);
  const CheckResult tr = run_check(check("ou_time_recovery", {{"rel_tol", 0.15}}), run.model, run.config, ev);
  const double secs4 = seconds_since(t1);
  double worst = 0.0;
  if (tr.values.contains("relative_error")) {
    for (const auto& e : tr.values["relative_error"]) worst = std::max(worst, e.is_null() ? INFINITY : e.get<double>());
  }
  const bool censored = ev.timeline && ev.timeline->censored;
  verdict(4, "OU time recovery against W2-nearest exact times", tr.pass && secs4 < 120.0,
          "max relative error for k <= K-1 " + num(worst) + " (<= 0.15), terminal segment " +
              (censored ? "censored" : "finite") + ", censoring ordered " +
              (tr.values.value("censoring_ordered", false) ? "yes" : "no") + ", " + num(secs4, 3) + " s (< 120)");
}

void criterion5() {
  const auto t0 = Clock::now();
  const double exact = testing::slide_geometric_integral();
  std::vector<double> ks;
  std::vector<double> errs;
  for (long k : {4L, 8L, 16L, 32L}) {
    ks.push_back(static_cast<double>(k));
    errs.push_back(std::abs(testing::slide_geometric_loss(k, testing::slide_mean) - exact));
  }
  const double slope_a = testing::loglog_slope(ks, errs);
  std::vector<double> ks_b;
  std::vector<double> loss;
  for (long k : {4L, 8L, 16L}) {
    ks_b.push_back(static_cast<double>(k));
    loss.push_back(testing::ou_exact_cn_loss(k, 100000, 7));
  }
  const double slope_b = testing::loglog_slope(ks_b, loss);
  const double secs = seconds_since(t0);
  const bool pass = std::abs(slope_a + 2.0) <= 0.3 && std::abs(slope_b + 4.0) <= 0.5 && secs < 300.0;
  verdict(5, "convergence orders", pass,
          "geometric loss slope " + num(slope_a) + " (-2 +/- 0.3), CN defect slope " + num(slope_b) +
              " (-4 +/- 0.5), " + num(secs, 3) + " s (< 300)");
}

void criterion6(const fs::path& runs) {
  ExperimentConfig c = preset("aggregation");
  c.validations = {check("steady_state_disk", {{"radius_lo", 0.95}, {"radius_hi", 1.05}}),
                   check("energy_decay", {{"slack", 0.0}})};
  const RunResult res = run_experiment(c, (runs / c.name).string(), std::cerr);
  const auto* s = find_check(res.validation, "steady_state_disk");
  const auto* e = find_check(res.validation, "energy_decay");
  const bool timed = res.eval.timeline.has_value();
  verdict(6, "aggregation steady state on the unit disk", res.validation.pass() && timed,
          "max radius " + num(s->values["max_radius"].get<double>()) + " (in [0.95, 1.05]), KS " +
              num(s->values["ks"].get<double>()) + " (< " + num(s->values["ks_critical_1pct"].get<double>()) +
              " at n = " + std::to_string(s->values["n"].get<long>()) + "), max free-energy increase " +
              num(e->values["max_increase"].get<double>()) + " (<= 0) along recovered time " +
              (timed ? "t_K = " + num(res.eval.times.back()) : std::string("missing")));
}

void criterion7(const fs::path& runs) {
  ExperimentConfig c = preset("aggregation-drift");
  c.validations = {check("annulus_radii", {{"rel_tol", 0.05}})};
  const RunResult res = run_experiment(c, (runs / c.name).string(), std::cerr);
  const auto* a = find_check(res.validation, "annulus_radii");
  bool ordered = false;
  std::string cmp_detail;
  try {
    const MeshComparison cmp = compare_run_meshes(res.dir, std::cerr);
    ordered = cmp.recovered_not_worse() && !cmp.uniform_report.aborted && !cmp.recovered_report.aborted;
    cmp_detail = "cumulative loss at K: recovered " + num(cmp.cumulative_recovered.back()) + " vs uniform " +
                 num(cmp.cumulative_uniform.back());
  } catch (const std::exception& ex) {
    cmp_detail = std::string("compare-meshes failed: ") + ex.what();
  }
  verdict(7, "aggregation-drift annulus and recovered-mesh ordering", res.validation.pass() && ordered,
          "inner " + num(a->values["inner"].get<double>()) + " vs " + num(a->values["expected_inner"].get<double>()) +
              ", outer " + num(a->values["outer"].get<double>()) + " vs " +
              num(a->values["expected_outer"].get<double>()) + " (5%), recovered <= uniform at every layer: " +
              (ordered ? "yes" : "no") + ", " + cmp_detail);
}

void criterion8(const fs::path& runs) {
  ExperimentConfig c = preset("styblinski10d");
  // Desk scale: four dimensions instead of ten.
  c.name = "styblinski4d";
  c.base = BaseDistribution::standard_gaussian(4);
  c.flow.dim = 4;
  c.validations = {check("marginal_w1", {{"max", 0.1}, {"paths", 5000}, {"dt", 1e-3}})};
  const auto t0 = Clock::now();
  const RunResult res = run_experiment(c, (runs / c.name).string(), std::cerr);
  const double secs = seconds_since(t0);
  const auto* m = find_check(res.validation, "marginal_w1");
  std::string detail = m->values.contains("max_w1") ? "max W1 over layers and coordinates " +
                                                          num(m->values["max_w1"].get<double>()) + " (<= 0.1)"
                                                    : m->values.dump();
  verdict(8, "Styblinski-Tang marginals against Euler-Maruyama (d = 4)", res.validation.pass() && secs <= 1800.0,
          detail + ", " + num(secs, 4) + " s (<= 1800)");
}

void criterion9(const fs::path& runs) {
  ExperimentConfig c = preset("aggregation-diffusion");
  c.validations = {check("arc_action_cv", {{"max", 0.25}}), check("mass_conservation")};
  const RunResult res = run_experiment(c, (runs / c.name).string(), std::cerr);
  const auto* a = find_check(res.validation, "arc_action_cv");
  const auto* m = find_check(res.validation, "mass_conservation");
  verdict(9, "aggregation-diffusion even energy drops and conserved mass", res.validation.pass(),
          "CV of energy drops " + (a->values["cv"].is_null() ? std::string("undefined") : num(a->values["cv"].get<double>())) +
              " (<= 0.25), mass " + num(m->values["mass"].get<double>()) + " with max relative deviation " +
              num(m->values["max_relative_deviation"].get<double>()));
}

void criterion10() {
  const auto t0 = Clock::now();
  Rng rng(21);
  std::normal_distribution<double> n01;
  auto random_state = [&](long d) {
    Mat a(d, d);
    for (long i = 0; i < a.size(); ++i) a.data()[i] = n01(rng);
    Vec mu(d);
    for (long i = 0; i < d; ++i) mu(i) = n01(rng);
    return GaussianState{mu, a * a.transpose() + 0.1 * Mat::Identity(d, d)};
  };
  double slack = -INFINITY;
  for (int t = 0; t < 300; ++t) {
    const long d = 1 + t % 4;
    const auto a = random_state(d);
    const auto b = random_state(d);
    const auto c = random_state(d);
    slack = std::max(slack, gaussian_w2(a, b) - gaussian_w2(a, c) - gaussian_w2(c, b));
  }
  double coupling = 0.0;
  for (int t = 0; t < 5; ++t) {
    Mat a(300, 1);
    Mat b(300, 1);
    for (long i = 0; i < 300; ++i) {
      a(i, 0) = n01(rng);
      b(i, 0) = 2.0 * n01(rng) + 1.0;
    }
    Vec sa = a.col(0);
    Vec sb = b.col(0);
    std::sort(sa.data(), sa.data() + sa.size());
    std::sort(sb.data(), sb.data() + sb.size());
    const double sorted = std::sqrt((sa - sb).squaredNorm() / 300.0);
    coupling = std::max(coupling, std::abs(empirical_w2_exact(a, b) - sorted));
  }
  // Mean of X_1 for V = x^2/2 from x0 = 1: (1 - dt)^{1/dt} against e^{-1}.
  const long paths = 400000;
  std::vector<double> dts = {0.2, 0.1, 0.05};
  std::vector<double> errs;
  for (double dt : dts) {
    const auto r = euler_maruyama_1d(PotentialSpec::quadratic(Vec::Zero(1), Mat::Identity(1, 1)), paths, dt, 1.0,
                                     2, {}, Vec::Ones(paths));
    errs.push_back(std::abs(r.marginals.back().mean() - std::exp(-1.0)));
  }
  const double slope = testing::loglog_slope(dts, errs);
  const double secs = seconds_since(t0);
  const bool pass = slack <= 1e-10 && coupling <= 1e-12 && std::abs(slope - 1.0) <= 0.15 && secs < 60.0;
  verdict(10, "oracle self-tests", pass,
          "triangle slack " + num(slack) + " (<= 1e-10), exact vs sorted coupling " + num(coupling) +
              " (<= 1e-12), EM weak order " + num(slope) + " (1 +/- 0.15), " + num(secs, 3) + " s (< 60)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  int only = 0;
  std::string runs = "acceptance_runs";
  app.add_option("--only", only, "Run a single group (1 2 3 5 6 7 8 9 10; group 3 includes 4)");
  app.add_option("--runs", runs, "Directory for the run artifacts of trained experiments");
  CLI11_PARSE(app, argc, argv);
  const fs::path root(runs);
  fs::create_directories(root);
  auto want = [&](int g) { return only == 0 || only == g; };
  try {
    if (want(1)) criterion1();
    if (want(2)) criterion2();
    if (want(3)) criterion3and4(root);
    if (want(5)) criterion5();
    if (want(6)) criterion6(root);
    if (want(7)) criterion7(root);
    if (want(8)) criterion8(root);
    if (want(9)) criterion9(root);
    if (want(10)) criterion10();
  } catch (const std::exception& e) {
    std::cout << "FAIL criterion group " << only << ": exception: " << e.what() << std::endl;
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
