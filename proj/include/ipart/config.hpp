#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ipart/model.hpp"
#include "ipart/synthetic.hpp"
#include "ipart/trainer.hpp"

namespace ipart {

/// Everything a run needs. Read from `key = value` lines; `#` starts a comment.
/// Unknown keys and malformed values raise ConfigError.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::filesystem::path out = "run";
  std::filesystem::path data;  // empty: generate the splits in memory from the seed

  SceneSpec scene = SceneSpec::default_spec();
  Index train_samples = 2000;
  Index fit_samples = 500;
  Index test_samples = 500;

  ModelConfig model;  // classes and attributes follow the scene
  TrainConfig train;  // seed and threads follow the run

  void set(const std::string& key, const std::string& value);
  /// Applies every line of a key=value document.
  void apply(const std::string& text);
  /// Resolved configuration in the same key=value format, one key per line.
  std::string echo() const;
  /// Cross-field checks; throws ConfigError.
  void validate() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;

  static std::vector<std::string> keys();
  static RunConfig load(const std::filesystem::path& path);

  std::uint64_t data_seed(std::uint64_t split) const;
  std::uint64_t model_seed() const;
};

}  // namespace ipart
