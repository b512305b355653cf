#pragma once

#include "jdapt/ingest.hpp"
#include "jdapt/neural.hpp"

namespace jdapt::fusion {

/// Cross-attention fusion: the text embedding queries the frame embeddings.
/// A frozen model is read-only.
struct FusionModel {
  neural::AttentionParams attention;
  bool frozen = false;
  int embed_dim = 0;

  void validate() const;
};

struct FusionOptions {
  int heads = 4;
  neural::TrainConfig train;
};

struct FusionTrainResult {
  FusionModel model;
  neural::TrainHistory history;
};

/// The regression target for a record: (text + frame mean) / 2.
RowVector fusion_target(const EmbeddingRecord& rec);
neural::AttentionSample make_sample(const EmbeddingRecord& rec);

/// Fits a fresh model on general-domain records (labels ignored) and returns
/// it frozen.
FusionTrainResult train_fusion(const Dataset& general, const FusionOptions& opts);

/// Continues training from `initial`. Raises StateError if it is frozen.
FusionTrainResult train_fusion(const Dataset& general, const neural::TrainConfig& cfg,
                               FusionModel initial);

/// [text | frame mean | cross-attended], length 3d.
Vector fuse(const FusionModel& model, const EmbeddingRecord& rec);

/// Row i is fuse(model, ds.records[i]). threads <= 0 uses worker_threads().
Matrix fuse_all(const FusionModel& model, const Dataset& ds, int threads = 0);

}  // namespace jdapt::fusion
