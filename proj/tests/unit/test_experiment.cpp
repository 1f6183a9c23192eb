#include "doctest.h"
#include "wgpath/experiment.hpp"
#include "wgpath/json_util.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace wgpath;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("wgpath_experiment_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string error_of(const json& j) {
  try {
    experiment_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("every preset resolves and its canonical form is byte-stable") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const ExperimentConfig c = preset(name);
    const std::string text = canonical_dump(c);
    const ExperimentConfig back = experiment_from_json(json::parse(text));
    CHECK(canonical_dump(back) == text);
    CHECK(c.flow.dim == c.base.dim);
  }
  CHECK_THROWS_AS(preset("no-such-preset"), ConfigError);
}

TEST_CASE("omitted fields take defaults and appear in the canonical form") {
  json j = json::parse(canonical_dump(preset("zero-energy")));
  j.erase("evaluation");
  j.erase("compare");
  j["validations"] = json::array({{{"kind", "segment_cv"}}});
  const ExperimentConfig c = experiment_from_json(j);
  CHECK(c.evaluation.samples == EvaluationConfig{}.samples);
  REQUIRE(c.validations.size() == 1);
  CHECK(c.validations[0].param("max") == 0.1);
  CHECK(json::parse(canonical_dump(c))["validations"][0]["max"] == 0.1);
}

TEST_CASE("schema violations name the offending field") {
  const json good = json::parse(canonical_dump(preset("ou2d-isotropic")));

  json j = good;
  j["train"]["learning_rate"] = 1e-3;
  CHECK(error_of(j).find("train.learning_rate") != std::string::npos);

  j = good;
  j["energy"]["potential"]["center"] = 1.0;
  CHECK(error_of(j).find("energy.potential.center") != std::string::npos);

  j = good;
  j.erase("version");
  CHECK(error_of(j).find("version") != std::string::npos);

  j = good;
  j["version"] = 2;
  CHECK(error_of(j).find("version") != std::string::npos);

  j = good;
  j["validations"][0]["kind"] = "psychic";
  CHECK(error_of(j).find("validations[0].kind") != std::string::npos);

  j = good;
  j["validations"][1]["maximum"] = 0.3;
  CHECK(error_of(j).find("validations[1].maximum") != std::string::npos);

  j = good;
  j["train"]["mode"] = "sideways";
  CHECK(error_of(j).find("train.mode") != std::string::npos);
}

TEST_CASE("dimension mismatches are rejected before any compute") {
  json j = json::parse(canonical_dump(preset("ou2d-isotropic")));
  j["flow"]["dim"] = 3;
  CHECK(error_of(j).find("flow.dim") != std::string::npos);

  j = json::parse(canonical_dump(preset("ou2d-isotropic")));
  j["base"]["dim"] = 3;
  j["flow"]["dim"] = 3;
  CHECK(error_of(j).find("energy.potential") != std::string::npos);

  j = json::parse(canonical_dump(preset("ou2d-isotropic")));
  j["train"]["mode"] = "physical_time";
  j["train"]["physical"]["steps"] = 4;
  CHECK(error_of(j).find("train.physical.steps") != std::string::npos);
}

TEST_CASE("checks must fit the energy they validate") {
  json j = json::parse(canonical_dump(preset("aggregation")));
  j["validations"] = json::array({{{"kind", "terminal_gaussian"}}});
  CHECK(error_of(j).find("validations[0]") != std::string::npos);
  j["validations"] = json::array({{{"kind", "annulus_radii"}}});
  CHECK(error_of(j).find("validations[0]") != std::string::npos);
}

TEST_CASE("raw box base with an internal energy is rejected") {
  json j = json::parse(canonical_dump(preset("aggregation-diffusion")));
  j["base"]["smoothing"] = 0.0;
  CHECK(error_of(j).find("base") != std::string::npos);
}

TEST_CASE("zero-energy smoke run writes a self-contained run directory") {
  const auto dir = scratch_dir("zero");
  std::ostringstream log;
  const RunResult res = run_experiment(preset("zero-energy"), dir.string(), log);
  CHECK(res.exit_code() == 0);
  for (const char* f : {"config.json", "model.json", "training_log.csv", "diagnostics.csv", "timeline.json",
                        "validation.json", "plots/scatter.csv", "plots/density.csv", "plots/free_energy.csv"}) {
    CAPTURE(f);
    CHECK(fs::exists(dir / f));
  }
  bool same = false;
  const ValidationReport again = revalidate(dir.string(), same);
  CHECK(same);
  CHECK(again.pass());

  // No free-energy decrease: no time scale, and both meshes stay uniform.
  CHECK_THROWS(recover_run_time(dir.string()));
  const MeshComparison cmp = compare_run_meshes(dir.string(), log);
  CHECK(cmp.t_uniform == cmp.t_recovered);
  CHECK(cmp.cumulative_uniform == cmp.cumulative_recovered);
  CHECK(cmp.recovered_not_worse());
  CHECK(fs::exists(dir / "compare_meshes.csv"));
  fs::remove_all(dir);
}

TEST_CASE("a failing check gives a nonzero exit status") {
  ExperimentConfig c = preset("zero-energy");
  c.validations = {CheckSpec{"energy_decay", {{"slack", -1.0}}}};
  const auto dir = scratch_dir("fail");
  std::ostringstream log;
  const RunResult res = run_experiment(c, dir.string(), log);
  CHECK(res.exit_code() != 0);
  const json stored = json::parse(std::ifstream(dir / "validation.json"));
  CHECK(stored["pass"] == false);
  fs::remove_all(dir);
}

TEST_CASE("short geometric run recovers a finite timeline and saves it") {
  ExperimentConfig c = preset("ou2d-isotropic");
  c.flow.width = 16;
  c.flow.layers = 3;
  c.train.epochs = 30;
  c.train.batch_size = 128;
  c.train.lr0 = 5e-3;
  c.train.log_every = 0;
  c.evaluation.samples = 400;
  c.evaluation.grid = 8;
  c.validations = {CheckSpec{"energy_decay", {{"slack", 0.0}}}};
  const auto dir = scratch_dir("geo");
  std::ostringstream log;
  const RunResult res = run_experiment(c, dir.string(), log);
  REQUIRE(res.eval.timeline.has_value());
  CHECK(res.eval.timeline->t.front() == 0.0);
  const RecoveredTimeline tl = recover_run_time(dir.string());
  CHECK(tl.t == res.eval.timeline->t);
  const json stored = json::parse(std::ifstream(dir / "timeline.json"));
  CHECK(timeline_from_json(stored).dt == tl.dt);
  fs::remove_all(dir);
}
