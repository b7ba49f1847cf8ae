#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "extembed/errors.hpp"

namespace extembed::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

int exit_code_for(const std::exception& e);

// Key-value run configuration. Each value resolves as
// command-line flag > config file > built-in default, and every resolved value
// is recorded in snapshot().
class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(nlohmann::json file);
  static RunConfig from_file(const std::filesystem::path& path);

  template <typename T>
  T resolve(const std::string& key, const std::optional<T>& flag, const T& fallback) {
    T value = flag ? *flag : from_file<T>(key).value_or(fallback);
    snapshot_[key] = value;
    return value;
  }

  template <typename T>
  std::optional<T> resolve_optional(const std::string& key, const std::optional<T>& flag) {
    std::optional<T> value = flag ? flag : from_file<T>(key);
    snapshot_[key] = value ? nlohmann::json(*value) : nlohmann::json(nullptr);
    return value;
  }

  void record(const std::string& key, nlohmann::json value) { snapshot_[key] = std::move(value); }
  const nlohmann::json& snapshot() const { return snapshot_; }
  const nlohmann::json& file_values() const { return file_; }

 private:
  template <typename T>
  std::optional<T> from_file(const std::string& key) const {
    const auto it = file_.find(key);
    if (it == file_.end() || it->is_null()) return std::nullopt;
    try {
      return it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config value '" + key + "' has the wrong type: " + it->dump());
    }
  }

  nlohmann::json file_ = nlohmann::json::object();
  nlohmann::json snapshot_ = nlohmann::json::object();
};

// Entry point behind the command-line tool. Never throws; returns an exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace extembed::cli
