#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "jdapt/linalg.hpp"
#include "jdapt/neural.hpp"

namespace jdapt::adapt {

/// Source-vs-target discriminator. The single sigmoid output is the
/// probability that an embedding came from the target domain.
struct DomainModel {
  neural::DenseNet net;

  Vector target_probability(const Matrix& x) const;
};

struct DomainOptions {
  std::vector<int> hidden{64};
  double holdout_fraction = 0.2;
  neural::TrainConfig train;
};

struct DomainTrainResult {
  DomainModel model;
  double heldout_accuracy = 0.0;
  std::size_t heldout_size = 0;
  neural::TrainHistory history;
};

/// Binary cross-entropy with label 1 = target. The two domains are
/// undersampled to equal size first; a seeded hold-out share measures
/// discrimination accuracy. Only embeddings are accepted.
DomainTrainResult train_domain_classifier(const Matrix& general, const Matrix& target,
                                          const DomainOptions& opts);

struct WeightClamp {
  double w_min = 0.05;
  double w_max = 20.0;

  void validate() const;
};

/// clamp(p / (1 - p)).
double odds_weight(double p, const WeightClamp& clamp);

/// Per-record importance weights for general-domain samples, keyed by id.
struct ImportanceWeights {
  std::vector<std::string> ids;
  std::vector<double> values;
  WeightClamp clamp;

  std::size_t size() const { return ids.size(); }
  /// Throws ValidationError when the id has no weight.
  double at(const std::string& id) const;
  std::unordered_map<std::string, double> as_map() const;
};

ImportanceWeights importance_weights(const DomainModel& model, const Matrix& general,
                                     std::span<const std::string> ids, const WeightClamp& clamp);

/// CORAL in the fused space. `target` must hold target-domain embeddings only.
linalg::CoralMap fit_adaptation(const Matrix& general, const Matrix& target,
                                const linalg::CoralOptions& opts);

/// Source statistics weighted per general row, so samples the domain
/// classifier rejects barely move the alignment.
linalg::CoralMap fit_adaptation(const Matrix& general, std::span<const double> general_weights,
                                const Matrix& target, const linalg::CoralOptions& opts);

/// {"id": str, "weight": f64} per line.
std::string weights_to_ndjson(const ImportanceWeights& w);
ImportanceWeights weights_from_ndjson(const std::string& text, const WeightClamp& clamp);

}  // namespace jdapt::adapt
