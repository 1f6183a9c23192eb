#pragma once

// Strict JSON object reading: every read is recorded and finish() rejects keys
// that were never read. Errors carry the dotted path of the offending field.

#include <Eigen/Dense>

#include "json.hpp"

#include <set>
#include <stdexcept>
#include <string>

namespace wgpath {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class JsonObject {
 public:
  JsonObject(const nlohmann::json& j, std::string path);

  [[nodiscard]] bool has(const std::string& key) const;
  [[nodiscard]] std::string path_of(const std::string& key) const;
  [[nodiscard]] const nlohmann::json& raw(const std::string& key) const;
  [[nodiscard]] JsonObject object(const std::string& key) const;

  template <class T>
  T get(const std::string& key) const {
    const auto& v = raw(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_of(key) + ": " + e.what());
    }
  }

  template <class T>
  T get_or(const std::string& key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  [[nodiscard]] Eigen::VectorXd vector(const std::string& key) const;
  [[nodiscard]] Eigen::MatrixXd matrix(const std::string& key) const;

  /// Throws if the object holds a key that was never read.
  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

nlohmann::json to_json(const Eigen::VectorXd& v);
nlohmann::json to_json(const Eigen::MatrixXd& m);

}  // namespace wgpath
