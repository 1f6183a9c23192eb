#include "wgpath/checkpoint.hpp"

#include "wgpath/json_util.hpp"

#include <fstream>

namespace wgpath {

using nlohmann::json;

json to_json(const FlowArchitecture& a) {
  return {{"coupling", to_string(a.coupling)},
          {"dim", a.dim},
          {"layers", a.layers},
          {"sub_blocks", a.sub_blocks},
          {"depth", a.depth},
          {"width", a.width},
          {"activation", to_string(a.activation)},
          {"leaky_slope", a.leaky_slope},
          {"scale_amplitude", a.scale_amplitude},
          {"bins", a.bins},
          {"bound", a.bound},
          {"min_bin", a.min_bin},
          {"min_derivative", a.min_derivative}};
}

FlowArchitecture architecture_from_json(const json& j) {
  const JsonObject o(j, "flow");
  FlowArchitecture a;
  a.coupling = coupling_from_string(o.get_or<std::string>("coupling", to_string(a.coupling)));
  a.dim = o.get_or<long>("dim", a.dim);
  a.layers = o.get_or<long>("layers", a.layers);
  a.sub_blocks = o.get_or<long>("sub_blocks", a.sub_blocks);
  a.depth = o.get_or<long>("depth", a.depth);
  a.width = o.get_or<long>("width", a.width);
  a.activation = activation_from_string(o.get_or<std::string>("activation", to_string(a.activation)));
  a.leaky_slope = o.get_or<double>("leaky_slope", a.leaky_slope);
  a.scale_amplitude = o.get_or<double>("scale_amplitude", a.scale_amplitude);
  a.bins = o.get_or<long>("bins", a.bins);
  a.bound = o.get_or<double>("bound", a.bound);
  a.min_bin = o.get_or<double>("min_bin", a.min_bin);
  a.min_derivative = o.get_or<double>("min_derivative", a.min_derivative);
  o.finish();
  a.validate();
  return a;
}

json to_json(const BaseDistribution& b) {
  switch (b.kind) {
    case BaseKind::StandardGaussian:
      return {{"kind", "standard_gaussian"}, {"dim", b.dim}};
    case BaseKind::UniformBox:
      return {{"kind", "uniform_box"}, {"lo", to_json(b.lo)}, {"hi", to_json(b.hi)},
              {"smoothing", b.smoothing}};
    case BaseKind::GaussianMixture:
      return {{"kind", "gaussian_mixture"}, {"weights", to_json(b.weights)},
              {"means", to_json(b.means)}, {"variance", b.variance}};
  }
  return {};
}

BaseDistribution base_from_json(const json& j) {
  const JsonObject o(j, "base");
  const auto kind = o.get<std::string>("kind");
  BaseDistribution b;
  if (kind == "standard_gaussian") {
    b = BaseDistribution::standard_gaussian(o.get<long>("dim"));
  } else if (kind == "uniform_box") {
    b = BaseDistribution::uniform_box(o.vector("lo"), o.vector("hi"), o.get_or<double>("smoothing", 0.0));
  } else if (kind == "gaussian_mixture") {
    b = BaseDistribution::gaussian_mixture(o.vector("weights"), o.matrix("means"),
                                           o.get<double>("variance"));
  } else {
    throw ConfigError("base.kind: unknown base distribution '" + kind + "'");
  }
  o.finish();
  return b;
}

void save_checkpoint(const std::string& path, const FlowModel& model, const json& metadata) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["architecture"] = to_json(model.architecture());
  j["base"] = to_json(model.base());
  j["metadata"] = metadata.is_null() ? json::object() : metadata;
  j["params"] = to_json(model.flat_params());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << j.dump() << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot move checkpoint into place: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  const JsonObject o(j, "");
  if (o.get<std::string>("format") != kCheckpointFormat) {
    throw ConfigError(path + ": not a checkpoint file");
  }
  if (o.get<int>("version") != kCheckpointVersion) {
    throw ConfigError(path + ": unsupported checkpoint version");
  }
  FlowArchitecture arch = architecture_from_json(o.raw("architecture"));
  BaseDistribution base = base_from_json(o.raw("base"));
  Checkpoint c{FlowModel(arch, base, 0), o.raw("metadata")};
  c.model.set_flat_params(o.vector("params"));
  o.finish();
  return c;
}

}  // namespace wgpath
