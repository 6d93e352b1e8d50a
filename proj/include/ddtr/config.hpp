#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddtr/model.hpp"
#include "ddtr/synthetic.hpp"

namespace ddtr {

/// Invalid or unknown configuration content; maps to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainingConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double backbone_lr_scale = 0.5;
  double weight_decay = 1e-4;
  /// Factor applied to the learning rate over the final third of the steps.
  double lr_drop_factor = 0.1;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 1.0;

  void validate() const;
  /// First step that runs at the dropped learning rate.
  std::size_t drop_step() const { return steps - steps / 3; }
};

struct ExperimentConfig {
  ModelConfig model;
  TrainingConfig training;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  DatasetSpec dataset;
  std::size_t train_images = 1000;
  std::size_t eval_images = 200;
  /// Directory with train/ and eval/ splits; overrides the synthetic spec.
  std::optional<std::string> dataset_path;

  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& file);
/// Canonical JSON: every field, sorted keys, two-space indent.
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a 64 of the compact canonical JSON, as 16 hex digits.
std::string config_digest(const ExperimentConfig& cfg);

}  // namespace ddtr
