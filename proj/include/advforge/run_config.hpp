#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "advforge/attacks.hpp"
#include "advforge/models.hpp"
#include "advforge/training.hpp"

namespace advforge {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Flat key=value run description with dotted keys ("attack.epsilon=0.3").
///
/// Lines may be grouped under "[section]" headers, which prefix the keys that
/// follow. '#' starts a comment. Every key has a default; unknown keys and
/// malformed values raise ConfigError naming the key.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// `key` may omit its section when the remainder is unique ("epochs").
  void set(const std::string& key, const std::string& value);
  /// "key=value" override as given on the command line.
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  /// All keys with resolved values, sorted, one "key=value" per line.
  std::string canonical() const;
  /// Hex FNV-1a of canonical().
  std::string hash() const;

  std::uint64_t seed() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  std::uint64_t discriminator_seed() const;

  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  static const std::map<std::string, std::string>& defaults();
  /// Full dotted name for `key`; throws ConfigError if unknown or ambiguous.
  static std::string resolve_key(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace advforge
