#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jdapt/adapt.hpp"
#include "jdapt/config.hpp"
#include "jdapt/detector.hpp"
#include "jdapt/errors.hpp"
#include "jdapt/fusion.hpp"
#include "jdapt/ingest.hpp"

namespace jdapt::pipeline {

enum class Stage { kLoad, kTrainFusion, kFuse, kTrainDomain, kAdapt, kTrainDetector, kEvaluate };

const char* to_string(Stage s);

/// Wraps the failure of one stage. Keeps the validation/runtime split of the
/// underlying error.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what, bool validation)
      : Error(std::string("stage ") + to_string(stage) + " failed: " + what),
        stage_(stage),
        validation_(validation) {}
  Stage stage() const { return stage_; }
  bool is_validation() const override { return validation_; }

 private:
  Stage stage_;
  bool validation_;
};

/// File names inside the artifact directory.
namespace files {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kFusion = "fusion.json";
inline constexpr const char* kFeatures = "features.json";
inline constexpr const char* kDomain = "domain.json";
inline constexpr const char* kWeights = "weights.ndjson";
inline constexpr const char* kCoral = "coral.json";
inline constexpr const char* kModel = "model.json";
inline constexpr const char* kReport = "report.json";
}  // namespace files

/// manifest.json: every artifact with its sha256 plus the run status.
struct ArtifactManifest {
  std::string status = "incomplete";
  std::string failed_stage;
  std::string error;
  std::string condition;
  std::map<std::string, std::string> files;
  std::map<std::string, std::string> inputs;

  nlohmann::json to_json() const;
  static ArtifactManifest from_json(const nlohmann::json& j);
  static ArtifactManifest read(const std::filesystem::path& dir);
  void write(const std::filesystem::path& dir) const;
  /// Throws CorruptionError naming the first file that is missing or whose
  /// checksum differs.
  void verify(const std::filesystem::path& dir) const;
};

struct Features {
  Matrix general;
  std::vector<std::string> general_ids;
  std::vector<int> general_labels;  // 1 unsafe, 0 safe, -1 unknown
  Matrix target;
};

struct RunSummary {
  detector::EvalReport report;
  double train_accuracy = 0.0;
  std::optional<double> domain_heldout_accuracy;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Runs the stages in order and persists each one's output. A stage that
/// needs an earlier result and finds none in memory reads it back from the
/// artifact directory, so stages can also be run one by one.
class Runner {
 public:
  explicit Runner(config::PipelineConfig cfg);

  const config::PipelineConfig& config() const { return cfg_; }

  void load();
  void train_fusion();
  void fuse();
  void train_domain();
  void adapt();
  void train_detector();
  detector::EvalReport evaluate();

  /// All stages, then marks the manifest complete.
  RunSummary run_all();

  const Dataset& general();
  const Dataset& target_benign();
  const Dataset& test();
  const Features& features();
  const adapt::ImportanceWeights& weights();
  const detector::ModelBundle& bundle();

 private:
  template <class Fn>
  void stage(Stage s, Fn&& fn);
  void record(const char* name);
  void require_loaded();
  const fusion::FusionModel* fusion_ptr();
  linalg::CoralMap fit_map(const std::vector<double>* weights);

  config::PipelineConfig cfg_;
  std::filesystem::path dir_;
  ArtifactManifest manifest_;
  bool loaded_ = false;
  Dataset general_, target_benign_, test_;
  std::optional<fusion::FusionModel> fusion_;
  std::optional<Features> features_;
  std::optional<adapt::ImportanceWeights> weights_;
  std::optional<linalg::CoralMap> coral_;
  std::optional<detector::ModelBundle> bundle_;
  std::optional<detector::EvalReport> report_;
  double train_accuracy_ = 0.0;
  std::optional<double> domain_heldout_;
  std::vector<std::string> warnings_;
};

/// Loads a model, checks it against the manifest next to it (when there is
/// one) and evaluates on `test_path`. A condition that differs from the
/// model's own is a validation error.
detector::EvalReport evaluate_model(const std::filesystem::path& model_path,
                                    const std::filesystem::path& test_path,
                                    std::optional<detector::Condition> condition);

/// Reads a model and verifies it against the sibling manifest, if present.
detector::ModelBundle load_verified_model(const std::filesystem::path& model_path);

}  // namespace jdapt::pipeline
