#include "jdapt/fusion.hpp"

#include "jdapt/errors.hpp"
#include "jdapt/parallel.hpp"

namespace jdapt::fusion {

namespace {

Matrix frame_matrix(const EmbeddingRecord& rec) {
  Matrix frames(static_cast<Eigen::Index>(rec.frames()), static_cast<Eigen::Index>(rec.dim()));
  for (std::size_t f = 0; f < rec.frames(); ++f) {
    for (std::size_t i = 0; i < rec.dim(); ++i) {
      frames(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(i)) =
          rec.frame_embeddings[f][i];
    }
  }
  return frames;
}

void check_dataset(const Dataset& ds, int embed_dim) {
  if (ds.empty()) {
    throw ValidationError("fusion: dataset is empty");
  }
  for (const auto& rec : ds.records) {
    ingest::validate_record(rec, static_cast<std::size_t>(embed_dim));
  }
}

}  // namespace

void FusionModel::validate() const {
  attention.validate();
  if (attention.model_dim != embed_dim) {
    throw ShapeError("fusion model embed_dim does not match attention dim");
  }
}

RowVector fusion_target(const EmbeddingRecord& rec) {
  return (0.5 * (ingest::text_vector(rec) + ingest::pooled_frames(rec))).transpose();
}

neural::AttentionSample make_sample(const EmbeddingRecord& rec) {
  neural::AttentionSample s;
  s.query = ingest::text_vector(rec).transpose();
  s.keys = frame_matrix(rec);
  s.values = s.keys;
  s.target = fusion_target(rec);
  return s;
}

FusionTrainResult train_fusion(const Dataset& general, const FusionOptions& opts) {
  if (general.empty()) {
    throw ValidationError("train_fusion: general dataset is empty");
  }
  const int d = static_cast<int>(general.records.front().dim());
  neural::Rng rng(opts.train.seed);
  FusionModel initial;
  initial.attention = neural::AttentionParams::init(d, opts.heads, rng);
  initial.embed_dim = d;
  // Initialization draws from the same seed stream; training reseeds its
  // shuffle from seed + 1 so both stay reproducible.
  neural::TrainConfig cfg = opts.train;
  cfg.seed = opts.train.seed + 1;
  return train_fusion(general, cfg, std::move(initial));
}

FusionTrainResult train_fusion(const Dataset& general, const neural::TrainConfig& cfg,
                               FusionModel initial) {
  if (initial.frozen) {
    throw StateError("train_fusion: model is frozen");
  }
  initial.validate();
  check_dataset(general, initial.embed_dim);
  std::vector<neural::AttentionSample> samples;
  samples.reserve(general.size());
  for (const auto& rec : general.records) samples.push_back(make_sample(rec));

  FusionTrainResult result;
  result.history = neural::train_attention(initial.attention, samples, cfg);
  initial.frozen = true;
  result.model = std::move(initial);
  return result;
}

Vector fuse(const FusionModel& model, const EmbeddingRecord& rec) {
  if (!model.frozen) {
    throw StateError("fuse: fusion model is not frozen");
  }
  const auto d = static_cast<Eigen::Index>(model.embed_dim);
  if (static_cast<Eigen::Index>(rec.dim()) != d) {
    throw ShapeError("fuse: record '" + rec.id + "' has dim " + std::to_string(rec.dim()) +
                     ", model expects " + std::to_string(model.embed_dim));
  }
  if (rec.frames() == 0) {
    throw ShapeError("fuse: record '" + rec.id + "' has no frames");
  }
  for (const auto& f : rec.frame_embeddings) {
    if (static_cast<Eigen::Index>(f.size()) != d) {
      throw ShapeError("fuse: record '" + rec.id + "' has a frame of the wrong dim");
    }
  }
  const Vector text = ingest::text_vector(rec);
  const Matrix frames = frame_matrix(rec);
  Vector out(3 * d);
  out.head(d) = text;
  out.segment(d, d) = frames.colwise().mean().transpose();
  out.tail(d) = neural::mha_forward(model.attention, text.transpose(), frames, frames)
                    .output.transpose();
  return out;
}

Matrix fuse_all(const FusionModel& model, const Dataset& ds, int threads) {
  const auto d = static_cast<Eigen::Index>(model.embed_dim);
  Matrix out(static_cast<Eigen::Index>(ds.size()), 3 * d);
  parallel_for(ds.size(), threads > 0 ? threads : worker_threads(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = fuse(model, ds.records[i]).transpose();
  });
  return out;
}

}  // namespace jdapt::fusion
