#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "jdapt/adapt.hpp"
#include "jdapt/fusion.hpp"
#include "jdapt/ingest.hpp"
#include "jdapt/linalg.hpp"
#include "jdapt/neural.hpp"

namespace jdapt::detector {

/// Which representation the classifier sees.
///   text_only   text block
///   concat      [text | frame mean]
///   fusion_only fused vector, no alignment or weights
///   da_only     concat + CORAL + importance weights
///   full        fused + CORAL + importance weights
enum class Condition { kTextOnly, kConcat, kFusionOnly, kDaOnly, kFull };

const char* to_string(Condition c);
Condition condition_from_string(const std::string& s);
bool uses_fusion(Condition c);
bool uses_adaptation(Condition c);
int feature_width(Condition c, int embed_dim);

/// Representation of one record under a condition. `fusion` is required
/// (and must be frozen) for the fused conditions.
Vector features(Condition c, const fusion::FusionModel* fusion, const EmbeddingRecord& rec);
Matrix features_all(Condition c, const fusion::FusionModel* fusion, const Dataset& ds,
                    int threads = 0);

struct Manifest {
  int version = 1;
  int embed_dim = 0;
  bool normalize = true;
  Condition condition = Condition::kFull;
  std::string fusion_ref;
  std::string coral_ref;
};

struct DetectorModel {
  neural::DenseNet net;
  double threshold = 0.5;
  Manifest manifest;

  void validate() const;
};

struct DetectorOptions {
  /// Empty gives a linear (logistic) probe.
  std::vector<int> hidden{256};
  double threshold = 0.5;
  /// Rescale importance weights so both classes carry equal total weight.
  bool class_balanced_weights = true;
  neural::TrainConfig train;
};

struct DetectorTrainResult {
  DetectorModel model;
  neural::TrainHistory history;
  double train_accuracy = 0.0;
  std::vector<std::string> warnings;
};

/// Weighted cross-entropy training, label 1 = unsafe. Every id needs a
/// weight. Class imbalance is reported as a warning, not an error.
DetectorTrainResult train_detector(const Matrix& adapted, std::span<const int> labels,
                                   std::span<const std::string> ids,
                                   const adapt::ImportanceWeights& weights,
                                   const DetectorOptions& opts);

struct Prediction {
  double score = 0.0;  // P(unsafe)
  Label label = Label::kSafe;
};

/// Unsafe iff score >= threshold.
Prediction decide(const Vector& logits, double threshold);

/// Applies `coral` (when given) to the fused vector, then the classifier.
/// Only general-domain inputs need the map.
Prediction predict(const DetectorModel& model, const Vector& fused,
                   const linalg::CoralMap* coral);

/// Everything needed to classify a raw record.
struct ModelBundle {
  DetectorModel detector;
  std::optional<fusion::FusionModel> fusion;
  std::optional<linalg::CoralMap> coral;

  void validate() const;
  /// Classifies a target-domain record. The CORAL map is kept for provenance
  /// and for general-domain inputs; target records are already in the space
  /// the detector was trained in.
  Prediction classify(const EmbeddingRecord& rec) const;
  int embed_dim() const { return detector.manifest.embed_dim; }
};

struct RecordOutcome {
  std::string id;
  Label truth = Label::kSafe;
  Label predicted = Label::kSafe;
  double score = 0.0;
  double latency_us = 0.0;
};

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::size_t true_positive = 0;  // unsafe predicted unsafe
  std::size_t false_positive = 0;
  std::size_t true_negative = 0;
  std::size_t false_negative = 0;
  double recall_safe = 0.0;
  double recall_unsafe = 0.0;
  double mean_latency_us = 0.0;
  double p95_latency_us = 0.0;
  std::string condition;
  std::vector<std::string> warnings;
  std::vector<RecordOutcome> outcomes;

  nlohmann::json to_json(bool include_outcomes = true) const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Recomputes every summary field from per-record outcomes.
EvalReport summarize(std::vector<RecordOutcome> outcomes);

/// Times fuse + align + predict per record. Test labels must be safe/unsafe.
EvalReport evaluate(const ModelBundle& bundle, const Dataset& test);

void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);
std::string model_to_string(const ModelBundle& bundle);
ModelBundle model_from_string(const std::string& text);

}  // namespace jdapt::detector
