#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jdapt/adapt.hpp"
#include "jdapt/detector.hpp"
#include "jdapt/fusion.hpp"

namespace jdapt::config {

enum class CoralSource { kSafe, kAll };

const char* to_string(CoralSource s);

struct Paths {
  std::filesystem::path general;
  std::filesystem::path target_benign;
  std::filesystem::path test;
  std::filesystem::path artifacts;
};

/// Everything a pipeline run needs. Parsed from an INI file with sections
/// [paths] [data] [fusion] [domain] [adapt] [detector] [pipeline].
struct PipelineConfig {
  Paths paths;
  /// 0 = take the dimension from the data.
  int embed_dim = 0;
  bool normalize = true;
  detector::Condition condition = detector::Condition::kFull;
  std::uint64_t seed = 0;
  std::uint64_t balance_seed = 0;
  int threads = 0;

  fusion::FusionOptions fusion;
  adapt::DomainOptions domain;
  adapt::WeightClamp clamp;
  linalg::CoralOptions coral;
  CoralSource coral_source = CoralSource::kSafe;
  /// Importance weights also weight the CORAL source statistics.
  bool weighted_coral = true;
  /// Train the domain classifier on CORAL-mapped general data instead of
  /// the raw fused vectors.
  bool weights_after_coral = false;
  /// Ablation: every importance weight becomes 1.
  bool force_unit_weights = false;
  detector::DetectorOptions detector;

  /// Range checks only; paths are checked by check_paths().
  void validate() const;
  /// Input files must exist; the artifact directory must be creatable.
  void check_paths() const;
  /// Sets `seed` and derives every stage seed from it.
  void reseed(std::uint64_t base);
};

/// Unknown sections or keys are errors. Relative paths resolve against the
/// directory holding the config file.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

/// INI text that parses back to an equivalent config.
std::string format_config(const PipelineConfig& cfg);

}  // namespace jdapt::config
