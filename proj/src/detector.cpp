#include "jdapt/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "jdapt/errors.hpp"
#include "jdapt/io.hpp"
#include "jdapt/parallel.hpp"
#include "jdapt/serialize.hpp"

namespace jdapt::detector {

using nlohmann::json;

const char* to_string(Condition c) {
  switch (c) {
    case Condition::kTextOnly:
      return "text_only";
    case Condition::kConcat:
      return "concat";
    case Condition::kFusionOnly:
      return "fusion_only";
    case Condition::kDaOnly:
      return "da_only";
    case Condition::kFull:
      return "full";
  }
  return "full";
}

Condition condition_from_string(const std::string& s) {
  if (s == "text_only") return Condition::kTextOnly;
  if (s == "concat") return Condition::kConcat;
  if (s == "fusion_only") return Condition::kFusionOnly;
  if (s == "da_only") return Condition::kDaOnly;
  if (s == "full") return Condition::kFull;
  throw ValidationError("unknown condition '" + s +
                        "' (expected text_only, concat, fusion_only, da_only or full)");
}

bool uses_fusion(Condition c) { return c == Condition::kFusionOnly || c == Condition::kFull; }

bool uses_adaptation(Condition c) { return c == Condition::kDaOnly || c == Condition::kFull; }

int feature_width(Condition c, int embed_dim) {
  switch (c) {
    case Condition::kTextOnly:
      return embed_dim;
    case Condition::kConcat:
    case Condition::kDaOnly:
      return 2 * embed_dim;
    case Condition::kFusionOnly:
    case Condition::kFull:
      return 3 * embed_dim;
  }
  return 3 * embed_dim;
}

Vector features(Condition c, const fusion::FusionModel* fusion, const EmbeddingRecord& rec) {
  if (uses_fusion(c)) {
    if (fusion == nullptr) {
      throw StateError(std::string("condition ") + to_string(c) + " needs a fusion model");
    }
    return fusion::fuse(*fusion, rec);
  }
  const auto d = static_cast<Eigen::Index>(rec.dim());
  if (c == Condition::kTextOnly) {
    return ingest::text_vector(rec);
  }
  if (rec.frames() == 0) {
    throw ShapeError("record '" + rec.id + "' has no frames");
  }
  for (const auto& f : rec.frame_embeddings) {
    if (f.size() != rec.dim()) {
      throw ShapeError("record '" + rec.id + "' has a frame of the wrong dim");
    }
  }
  Vector out(2 * d);
  out.head(d) = ingest::text_vector(rec);
  out.tail(d) = ingest::pooled_frames(rec);
  return out;
}

Matrix features_all(Condition c, const fusion::FusionModel* fusion, const Dataset& ds,
                    int threads) {
  if (ds.empty()) {
    return Matrix(0, 0);
  }
  const int width = feature_width(c, static_cast<int>(ds.records.front().dim()));
  Matrix out(static_cast<Eigen::Index>(ds.size()), width);
  parallel_for(ds.size(), threads > 0 ? threads : worker_threads(), [&](std::size_t i) {
    const Vector f = features(c, fusion, ds.records[i]);
    if (f.size() != width) {
      throw ShapeError("record '" + ds.records[i].id + "' has an inconsistent dimension");
    }
    out.row(static_cast<Eigen::Index>(i)) = f.transpose();
  });
  return out;
}

void DetectorModel::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("detector threshold must lie in (0, 1)");
  }
  if (net.empty() || net.output_dim() != 2) {
    throw ShapeError("detector network must output 2 logits");
  }
  if (manifest.embed_dim <= 0 ||
      net.input_dim() != feature_width(manifest.condition, manifest.embed_dim)) {
    throw ShapeError("detector manifest dims are inconsistent with its network");
  }
}

DetectorTrainResult train_detector(const Matrix& adapted, std::span<const int> labels,
                                   std::span<const std::string> ids,
                                   const adapt::ImportanceWeights& weights,
                                   const DetectorOptions& opts) {
  const auto n = static_cast<std::size_t>(adapted.rows());
  if (n == 0) {
    throw ValidationError("train_detector: no training rows");
  }
  if (labels.size() != n || ids.size() != n) {
    throw ShapeError("train_detector: rows, labels and ids lengths differ");
  }
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) {
    throw ValidationError("train_detector: threshold must lie in (0, 1)");
  }
  opts.train.validate();

  DetectorTrainResult result;
  const auto lookup = weights.as_map();
  neural::DenseBatch batch;
  batch.inputs = adapted;
  batch.labels.assign(labels.begin(), labels.end());
  batch.weights.resize(n);
  std::size_t unsafe = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = lookup.find(ids[i]);
    if (it == lookup.end()) {
      throw ValidationError("train_detector: no importance weight for record '" + ids[i] + "'");
    }
    batch.weights[i] = it->second;
    unsafe += static_cast<std::size_t>(labels[i] == 1);
  }
  const std::size_t safe = n - unsafe;
  if (safe != unsafe) {
    result.warnings.push_back("training set is unbalanced (safe=" + std::to_string(safe) +
                              ", unsafe=" + std::to_string(unsafe) + ")");
  }
  if (opts.class_balanced_weights && safe > 0 && unsafe > 0) {
    double sums[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) sums[labels[i]] += batch.weights[i];
    const double total = sums[0] + sums[1];
    if (sums[0] > 0.0 && sums[1] > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        batch.weights[i] *= 0.5 * total / sums[labels[i]];
      }
    }
  }

  neural::Rng rng(opts.train.seed);
  result.model.net =
      neural::DenseNet::make(static_cast<int>(adapted.cols()), opts.hidden, 2,
                             neural::Activation::kRelu, neural::Activation::kIdentity, rng);
  result.model.threshold = opts.threshold;
  neural::TrainConfig cfg = opts.train;
  cfg.seed = opts.train.seed + 1;
  result.history =
      neural::train_dense(result.model.net, neural::LossKind::kWeightedCrossEntropy, batch, cfg);

  const Matrix logits = neural::dense_forward(result.model.net, adapted);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = decide(logits.row(static_cast<Eigen::Index>(i)).transpose(), opts.threshold);
    correct += static_cast<std::size_t>((p.label == Label::kUnsafe ? 1 : 0) == labels[i]);
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

Prediction decide(const Vector& logits, double threshold) {
  if (logits.size() != 2) {
    throw ShapeError("decide: expected 2 logits");
  }
  const Vector p = neural::softmax(logits);
  Prediction out;
  out.score = p(1);
  out.label = out.score >= threshold ? Label::kUnsafe : Label::kSafe;
  return out;
}

Prediction predict(const DetectorModel& model, const Vector& fused,
                   const linalg::CoralMap* coral) {
  if (fused.size() != model.net.input_dim()) {
    throw ShapeError("predict: input has " + std::to_string(fused.size()) +
                     " entries, detector expects " + std::to_string(model.net.input_dim()));
  }
  if (coral == nullptr) {
    return decide(neural::dense_forward(model.net, fused), model.threshold);
  }
  const RowVector aligned = linalg::apply_coral(*coral, RowVector(fused.transpose()));
  return decide(neural::dense_forward(model.net, Vector(aligned.transpose())), model.threshold);
}

void ModelBundle::validate() const {
  detector.validate();
  const auto c = detector.manifest.condition;
  if (uses_fusion(c)) {
    if (!fusion) throw ValidationError("model bundle is missing its fusion model");
    fusion->validate();
    if (!fusion->frozen) throw StateError("bundled fusion model is not frozen");
    if (fusion->embed_dim != detector.manifest.embed_dim) {
      throw ShapeError("fusion embed_dim does not match the detector manifest");
    }
  }
  if (uses_adaptation(c)) {
    if (!coral) throw ValidationError("model bundle is missing its CORAL map");
    coral->validate();
    if (coral->order() != detector.net.input_dim()) {
      throw ShapeError("CORAL order does not match the detector input");
    }
  }
}

Prediction ModelBundle::classify(const EmbeddingRecord& rec) const {
  const auto d = static_cast<std::size_t>(detector.manifest.embed_dim);
  if (rec.dim() != d) {
    throw ShapeError("dimension mismatch: text_embedding has " + std::to_string(rec.dim()) +
                     " entries, model expects " + std::to_string(d));
  }
  for (const auto& f : rec.frame_embeddings) {
    if (f.size() != d) {
      throw ShapeError("dimension mismatch: frame has " + std::to_string(f.size()) +
                       " entries, model expects " + std::to_string(d));
    }
  }
  const auto c = detector.manifest.condition;
  if (detector.manifest.normalize) {
    EmbeddingRecord unit = rec;
    unit.text_embedding = ingest::l2_normalize(rec.text_embedding);
    for (auto& f : unit.frame_embeddings) f = ingest::l2_normalize(f);
    return predict(detector, features(c, fusion ? &*fusion : nullptr, unit), nullptr);
  }
  // Requests come from the target domain, which is where CORAL already put
  // the training data. Mapping them again would shift them a second time.
  return predict(detector, features(c, fusion ? &*fusion : nullptr, rec), nullptr);
}

json EvalReport::to_json(bool include_outcomes) const {
  json j{{"n", n},
         {"accuracy", accuracy},
         {"true_positive", true_positive},
         {"false_positive", false_positive},
         {"true_negative", true_negative},
         {"false_negative", false_negative},
         {"recall_safe", recall_safe},
         {"recall_unsafe", recall_unsafe},
         {"mean_latency_us", mean_latency_us},
         {"p95_latency_us", p95_latency_us},
         {"condition", condition},
         {"warnings", warnings}};
  if (include_outcomes) {
    json rows = json::array();
    for (const auto& o : outcomes) {
      rows.push_back({{"id", o.id},
                      {"truth", jdapt::to_string(o.truth)},
                      {"predicted", jdapt::to_string(o.predicted)},
                      {"score", o.score},
                      {"latency_us", o.latency_us}});
    }
    j["outcomes"] = rows;
  }
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  std::vector<RecordOutcome> outcomes;
  for (const auto& r : j.at("outcomes")) {
    outcomes.push_back({r.at("id").get<std::string>(),
                        label_from_string(r.at("truth").get<std::string>()),
                        label_from_string(r.at("predicted").get<std::string>()),
                        r.at("score").get<double>(), r.at("latency_us").get<double>()});
  }
  EvalReport rep = summarize(std::move(outcomes));
  rep.condition = j.value("condition", "");
  rep.warnings = j.value("warnings", std::vector<std::string>{});
  return rep;
}

EvalReport summarize(std::vector<RecordOutcome> outcomes) {
  EvalReport rep;
  rep.n = outcomes.size();
  std::vector<double> latencies;
  latencies.reserve(outcomes.size());
  double latency_sum = 0.0;
  for (const auto& o : outcomes) {
    const bool truth_unsafe = o.truth == Label::kUnsafe;
    const bool pred_unsafe = o.predicted == Label::kUnsafe;
    if (truth_unsafe && pred_unsafe) ++rep.true_positive;
    if (!truth_unsafe && pred_unsafe) ++rep.false_positive;
    if (!truth_unsafe && !pred_unsafe) ++rep.true_negative;
    if (truth_unsafe && !pred_unsafe) ++rep.false_negative;
    latencies.push_back(o.latency_us);
    latency_sum += o.latency_us;
  }
  if (rep.n > 0) {
    rep.accuracy = static_cast<double>(rep.true_positive + rep.true_negative) /
                   static_cast<double>(rep.n);
    rep.mean_latency_us = latency_sum / static_cast<double>(rep.n);
    std::sort(latencies.begin(), latencies.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(rep.n)));
    rep.p95_latency_us = latencies[std::max<std::size_t>(rank, 1) - 1];
  }
  const auto unsafe_total = rep.true_positive + rep.false_negative;
  const auto safe_total = rep.true_negative + rep.false_positive;
  rep.recall_unsafe = unsafe_total == 0 ? 0.0
                                        : static_cast<double>(rep.true_positive) /
                                              static_cast<double>(unsafe_total);
  rep.recall_safe = safe_total == 0 ? 0.0
                                    : static_cast<double>(rep.true_negative) /
                                          static_cast<double>(safe_total);
  rep.outcomes = std::move(outcomes);
  return rep;
}

EvalReport evaluate(const ModelBundle& bundle, const Dataset& test) {
  bundle.validate();
  for (const auto& rec : test.records) {
    if (rec.label == Label::kUnknown) {
      throw ValidationError("evaluate: test record '" + rec.id + "' has an unknown label");
    }
  }
  std::vector<RecordOutcome> outcomes;
  outcomes.reserve(test.size());
  for (const auto& rec : test.records) {
    const auto start = std::chrono::steady_clock::now();
    const Prediction p = bundle.classify(rec);
    const auto stop = std::chrono::steady_clock::now();
    outcomes.push_back({rec.id, rec.label, p.label, p.score,
                        std::chrono::duration<double, std::micro>(stop - start).count()});
  }
  EvalReport rep = summarize(std::move(outcomes));
  rep.condition = to_string(bundle.detector.manifest.condition);
  if (rep.n > 0 && rep.accuracy < 0.5) {
    rep.warnings.push_back(
        "accuracy below 0.5: the detector may be label-inverted on this domain");
  }
  return rep;
}

namespace {

json manifest_to_json(const Manifest& m) {
  return {{"version", m.version},
          {"embed_dim", m.embed_dim},
          {"normalize", m.normalize},
          {"condition", to_string(m.condition)},
          {"fusion_ref", m.fusion_ref},
          {"coral_ref", m.coral_ref}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();
    m.normalize = j.at("normalize").get<bool>();
    m.condition = condition_from_string(j.at("condition").get<std::string>());
    m.fusion_ref = j.at("fusion_ref").get<std::string>();
    m.coral_ref = j.at("coral_ref").get<std::string>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("manifest: ") + e.what());
  }
  return m;
}

}  // namespace

std::string model_to_string(const ModelBundle& bundle) {
  bundle.validate();
  json payload;
  payload["detector"] = {{"net", serialize::to_json(bundle.detector.net)},
                         {"threshold", bundle.detector.threshold}};
  payload["manifest"] = manifest_to_json(bundle.detector.manifest);
  payload["fusion"] = bundle.fusion ? serialize::to_json(*bundle.fusion) : json(nullptr);
  payload["coral"] = bundle.coral ? serialize::to_json(*bundle.coral) : json(nullptr);
  return serialize::make_container("model", payload);
}

ModelBundle model_from_string(const std::string& text) {
  const json payload = serialize::open_container(text, "model");
  ModelBundle bundle;
  try {
    bundle.detector.net = serialize::dense_from_json(payload.at("detector").at("net"));
    bundle.detector.threshold = payload.at("detector").at("threshold").get<double>();
    bundle.detector.manifest = manifest_from_json(payload.at("manifest"));
    if (!payload.at("fusion").is_null()) {
      bundle.fusion = serialize::fusion_from_json(payload.at("fusion"));
    }
    if (!payload.at("coral").is_null()) {
      bundle.coral = serialize::coral_from_json(payload.at("coral"));
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("model container: ") + e.what());
  }
  bundle.validate();
  return bundle;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  io::write_file(path, model_to_string(bundle));
}

ModelBundle load_model(const std::filesystem::path& path) {
  return model_from_string(io::read_file(path));
}

}  // namespace jdapt::detector
