#include "wgpath/json_util.hpp"

namespace wgpath {

JsonObject::JsonObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ConfigError((path_.empty() ? "<root>" : path_) + ": expected an object");
}

bool JsonObject::has(const std::string& key) const { return j_.contains(key); }

std::string JsonObject::path_of(const std::string& key) const {
  return path_.empty() ? key : path_ + "." + key;
}

const nlohmann::json& JsonObject::raw(const std::string& key) const {
  if (!j_.contains(key)) throw ConfigError(path_of(key) + ": missing required field");
  used_.insert(key);
  return j_.at(key);
}

JsonObject JsonObject::object(const std::string& key) const { return {raw(key), path_of(key)}; }

Eigen::VectorXd JsonObject::vector(const std::string& key) const {
  const auto& a = raw(key);
  if (!a.is_array()) throw ConfigError(path_of(key) + ": expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw ConfigError(path_of(key) + "[" + std::to_string(i) + "]: expected a number");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd JsonObject::matrix(const std::string& key) const {
  const auto& a = raw(key);
  if (!a.is_array() || a.empty() || !a[0].is_array()) {
    throw ConfigError(path_of(key) + ": expected a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(a.size());
  const auto cols = static_cast<Eigen::Index>(a[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = a[static_cast<size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(path_of(key) + ": ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[static_cast<size_t>(c)].is_number()) {
        throw ConfigError(path_of(key) + ": expected numbers");
      }
      m(i, c) = row[static_cast<size_t>(c)].get<double>();
    }
  }
  return m;
}

void JsonObject::finish() const {
  for (auto it = j_.begin(); it != j_.end(); ++it) {
    if (!used_.count(it.key())) throw ConfigError(path_of(it.key()) + ": unknown key");
  }
}

nlohmann::json to_json(const Eigen::VectorXd& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

nlohmann::json to_json(const Eigen::MatrixXd& m) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    a.push_back(row);
  }
  return a;
}

}  // namespace wgpath
