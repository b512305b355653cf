#include "jdapt/pipeline.hpp"

#include <unordered_map>

#include "jdapt/io.hpp"
#include "jdapt/serialize.hpp"

namespace jdapt::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kLoad: return "load";
    case Stage::kTrainFusion: return "train-fusion";
    case Stage::kFuse: return "fuse";
    case Stage::kTrainDomain: return "train-domain";
    case Stage::kAdapt: return "adapt";
    case Stage::kTrainDetector: return "train-detector";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

json ArtifactManifest::to_json() const {
  return {{"status", status}, {"failed_stage", failed_stage}, {"error", error},
          {"condition", condition}, {"files", files}, {"inputs", inputs}};
}

ArtifactManifest ArtifactManifest::from_json(const json& j) {
  ArtifactManifest m;
  try {
    m.status = j.at("status").get<std::string>();
    m.failed_stage = j.at("failed_stage").get<std::string>();
    m.error = j.at("error").get<std::string>();
    m.condition = j.at("condition").get<std::string>();
    m.files = j.at("files").get<std::map<std::string, std::string>>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("artifact manifest: ") + e.what());
  }
  return m;
}

ArtifactManifest ArtifactManifest::read(const fs::path& dir) {
  const std::string text = io::read_file(dir / files::kManifest);
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("artifact manifest is not valid JSON: ") + e.what());
  }
}

void ArtifactManifest::write(const fs::path& dir) const {
  io::write_file(dir / files::kManifest, to_json().dump(2) + "\n");
}

void ArtifactManifest::verify(const fs::path& dir) const {
  for (const auto& [name, sum] : files) {
    const fs::path p = dir / name;
    if (!fs::is_regular_file(p)) {
      throw CorruptionError("artifact listed in manifest is missing: " + name);
    }
    if (io::sha256_file(p) != sum) {
      throw CorruptionError("artifact checksum mismatch: " + name);
    }
  }
}

json RunSummary::to_json() const {
  json j = report.to_json(false);
  j["train_accuracy"] = train_accuracy;
  j["domain_heldout_accuracy"] = domain_heldout_accuracy ? json(*domain_heldout_accuracy) : json();
  j["pipeline_warnings"] = warnings;
  return j;
}

Runner::Runner(config::PipelineConfig cfg) : cfg_(std::move(cfg)), dir_(cfg_.paths.artifacts) {
  cfg_.validate();
  if (fs::is_regular_file(dir_ / files::kManifest)) {
    try {
      manifest_ = ArtifactManifest::read(dir_);
    } catch (const Error&) {
      manifest_ = {};
    }
  }
  manifest_.condition = detector::to_string(cfg_.condition);
}

template <class Fn>
void Runner::stage(Stage s, Fn&& fn) {
  auto fail = [&](const std::string& what) {
    manifest_.status = "incomplete";
    manifest_.failed_stage = to_string(s);
    manifest_.error = what;
    try {
      fs::create_directories(dir_);
      manifest_.write(dir_);
    } catch (const std::exception&) {
      // The original failure matters more than the manifest.
    }
  };
  try {
    fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    fail(e.what());
    throw StageError(s, e.what(), e.is_validation());
  } catch (const std::exception& e) {
    fail(e.what());
    throw StageError(s, e.what(), false);
  }
}

void Runner::record(const char* name) {
  manifest_.files[name] = io::sha256_file(dir_ / name);
  manifest_.status = "incomplete";
  manifest_.failed_stage.clear();
  manifest_.error.clear();
  manifest_.write(dir_);
}

void Runner::require_loaded() {
  if (!loaded_) load();
}

void Runner::load() {
  stage(Stage::kLoad, [&] {
    cfg_.check_paths();
    fs::create_directories(dir_);
    const ingest::LoadOptions opts{cfg_.normalize};
    general_ = ingest::load_records(cfg_.paths.general, opts);
    target_benign_ = ingest::load_records(cfg_.paths.target_benign, opts);
    // The model bundle normalizes on its own, so test data stays raw.
    test_ = ingest::load_records(cfg_.paths.test, ingest::LoadOptions{false});
    const std::size_t d = general_.dim;
    if (target_benign_.dim != d || test_.dim != d) {
      throw ShapeError("input files disagree on the embedding dimension (general " +
                       std::to_string(d) + ", target_benign " +
                       std::to_string(target_benign_.dim) + ", test " +
                       std::to_string(test_.dim) + ")");
    }
    if (cfg_.embed_dim > 0 && static_cast<std::size_t>(cfg_.embed_dim) != d) {
      throw ShapeError("config embed_dim " + std::to_string(cfg_.embed_dim) +
                       " does not match the data (" + std::to_string(d) + ")");
    }
    if (detector::uses_fusion(cfg_.condition) && d % static_cast<std::size_t>(cfg_.fusion.heads)) {
      throw ValidationError("embedding dimension " + std::to_string(d) +
                            " is not divisible by fusion heads " +
                            std::to_string(cfg_.fusion.heads));
    }
    for (const auto& rec : target_benign_.records) {
      if (rec.label == Label::kUnsafe) {
        warnings_.push_back("target_benign contains unsafe-labeled records; labels are ignored");
        break;
      }
    }
    manifest_.inputs["general"] = io::sha256_file(cfg_.paths.general);
    manifest_.inputs["target_benign"] = io::sha256_file(cfg_.paths.target_benign);
    manifest_.inputs["test"] = io::sha256_file(cfg_.paths.test);
    loaded_ = true;
  });
}

void Runner::train_fusion() {
  require_loaded();
  stage(Stage::kTrainFusion, [&] {
    if (!detector::uses_fusion(cfg_.condition)) {
      fusion_.reset();
      manifest_.files.erase(files::kFusion);
      return;
    }
    fusion_ = fusion::train_fusion(general_, cfg_.fusion).model;
    serialize::write_container(dir_ / files::kFusion, "fusion", serialize::to_json(*fusion_));
    record(files::kFusion);
  });
}

const fusion::FusionModel* Runner::fusion_ptr() {
  if (!detector::uses_fusion(cfg_.condition)) return nullptr;
  if (!fusion_) {
    fusion_ = serialize::fusion_from_json(serialize::read_container(dir_ / files::kFusion, "fusion"));
  }
  return &*fusion_;
}

void Runner::fuse() {
  require_loaded();
  stage(Stage::kFuse, [&] {
    const auto* fm = fusion_ptr();
    Features f;
    f.general = detector::features_all(cfg_.condition, fm, general_, cfg_.threads);
    f.target = detector::features_all(cfg_.condition, fm, target_benign_, cfg_.threads);
    for (const auto& rec : general_.records) {
      f.general_ids.push_back(rec.id);
      f.general_labels.push_back(rec.label == Label::kUnsafe ? 1 : rec.label == Label::kSafe ? 0 : -1);
    }
    serialize::write_container(dir_ / files::kFeatures, "features",
                               {{"condition", detector::to_string(cfg_.condition)},
                                {"general", serialize::matrix_to_json(f.general)},
                                {"general_ids", f.general_ids},
                                {"general_labels", f.general_labels},
                                {"target", serialize::matrix_to_json(f.target)}});
    features_ = std::move(f);
    record(files::kFeatures);
  });
}

const Features& Runner::features() {
  if (!features_) {
    const json j = serialize::read_container(dir_ / files::kFeatures, "features");
    Features f;
    try {
      if (j.at("condition").get<std::string>() != detector::to_string(cfg_.condition)) {
        throw ValidationError("stored features were computed for condition " +
                              j.at("condition").get<std::string>());
      }
      f.general = serialize::matrix_from_json(j.at("general"));
      f.general_ids = j.at("general_ids").get<std::vector<std::string>>();
      f.general_labels = j.at("general_labels").get<std::vector<int>>();
      f.target = serialize::matrix_from_json(j.at("target"));
    } catch (const json::exception& e) {
      throw CorruptionError(std::string("features artifact: ") + e.what());
    }
    features_ = std::move(f);
  }
  return *features_;
}

void Runner::train_domain() {
  require_loaded();
  stage(Stage::kTrainDomain, [&] {
    const Features& f = features();
    adapt::ImportanceWeights w;
    if (detector::uses_adaptation(cfg_.condition) && !cfg_.force_unit_weights) {
      Matrix general = f.general;
      if (cfg_.weights_after_coral) general = linalg::apply_coral(fit_map(nullptr), f.general);
      auto trained = adapt::train_domain_classifier(general, f.target, cfg_.domain);
      domain_heldout_ = trained.heldout_accuracy;
      serialize::write_container(dir_ / files::kDomain, "domain",
                                 {{"net", serialize::to_json(trained.model.net)},
                                  {"heldout_accuracy", trained.heldout_accuracy}});
      record(files::kDomain);
      w = adapt::importance_weights(trained.model, general, f.general_ids, cfg_.clamp);
    } else {
      w.clamp = cfg_.clamp;
      w.ids = f.general_ids;
      w.values.assign(f.general_ids.size(), 1.0);
      manifest_.files.erase(files::kDomain);
    }
    io::write_file(dir_ / files::kWeights, adapt::weights_to_ndjson(w));
    weights_ = std::move(w);
    record(files::kWeights);
  });
}

const adapt::ImportanceWeights& Runner::weights() {
  if (!weights_) {
    weights_ = adapt::weights_from_ndjson(io::read_file(dir_ / files::kWeights), cfg_.clamp);
  }
  return *weights_;
}

linalg::CoralMap Runner::fit_map(const std::vector<double>* weights) {
  const Features& f = features();
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < f.general_ids.size(); ++i) {
    if (cfg_.coral_source == config::CoralSource::kAll || f.general_labels[i] == 0) {
      rows.push_back(static_cast<Eigen::Index>(i));
    }
  }
  if (rows.size() < 2) {
    throw DegenerateSampleError("fewer than 2 general records qualify as CORAL source");
  }
  Matrix source(static_cast<Eigen::Index>(rows.size()), f.general.cols());
  std::vector<double> source_w;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    source.row(static_cast<Eigen::Index>(k)) = f.general.row(rows[k]);
    if (weights) source_w.push_back((*weights)[static_cast<std::size_t>(rows[k])]);
  }
  return weights ? adapt::fit_adaptation(source, source_w, f.target, cfg_.coral)
                 : adapt::fit_adaptation(source, f.target, cfg_.coral);
}

void Runner::adapt() {
  require_loaded();
  stage(Stage::kAdapt, [&] {
    if (!detector::uses_adaptation(cfg_.condition)) {
      coral_.reset();
      manifest_.files.erase(files::kCoral);
      return;
    }
    const auto& w = weights();
    if (w.ids != features().general_ids) {
      throw ValidationError("importance weights do not line up with the general features");
    }
    // Post-alignment weights were computed from an unweighted map; reusing
    // them to refit that map would be circular.
    const bool weighted = cfg_.weighted_coral && !cfg_.weights_after_coral;
    coral_ = fit_map(weighted ? &w.values : nullptr);
    serialize::write_container(dir_ / files::kCoral, "coral", serialize::to_json(*coral_));
    record(files::kCoral);
  });
}

void Runner::train_detector() {
  require_loaded();
  stage(Stage::kTrainDetector, [&] {
    const Features& f = features();
    const auto* fm = fusion_ptr();
    if (detector::uses_adaptation(cfg_.condition) && !coral_) {
      coral_ = serialize::coral_from_json(serialize::read_container(dir_ / files::kCoral, "coral"));
    }
    std::unordered_map<std::string, Eigen::Index> row_of;
    for (std::size_t i = 0; i < f.general_ids.size(); ++i) {
      row_of.emplace(f.general_ids[i], static_cast<Eigen::Index>(i));
    }
    const Dataset balanced = ingest::balance(general_, cfg_.balance_seed);
    Matrix x(static_cast<Eigen::Index>(balanced.size()), f.general.cols());
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (std::size_t k = 0; k < balanced.size(); ++k) {
      const auto& rec = balanced.records[k];
      const auto it = row_of.find(rec.id);
      if (it == row_of.end()) {
        throw ValidationError("record '" + rec.id + "' has no stored features");
      }
      x.row(static_cast<Eigen::Index>(k)) = f.general.row(it->second);
      labels.push_back(rec.label == Label::kUnsafe ? 1 : 0);
      ids.push_back(rec.id);
    }
    if (coral_) x = linalg::apply_coral(*coral_, x);

    auto trained = detector::train_detector(x, labels, ids, weights(), cfg_.detector);
    train_accuracy_ = trained.train_accuracy;
    for (auto& msg : trained.warnings) warnings_.push_back(std::move(msg));

    detector::ModelBundle b;
    b.detector = std::move(trained.model);
    b.detector.manifest.embed_dim = static_cast<int>(general_.dim);
    b.detector.manifest.normalize = cfg_.normalize;
    b.detector.manifest.condition = cfg_.condition;
    if (fm) {
      b.fusion = *fm;
      b.detector.manifest.fusion_ref = manifest_.files.count(files::kFusion)
                                           ? manifest_.files.at(files::kFusion)
                                           : io::sha256_file(dir_ / files::kFusion);
    }
    if (coral_) {
      b.coral = *coral_;
      b.detector.manifest.coral_ref = manifest_.files.count(files::kCoral)
                                          ? manifest_.files.at(files::kCoral)
                                          : io::sha256_file(dir_ / files::kCoral);
    }
    detector::save_model(b, dir_ / files::kModel);
    bundle_ = std::move(b);
    record(files::kModel);
  });
}

detector::EvalReport Runner::evaluate() {
  require_loaded();
  stage(Stage::kEvaluate, [&] {
    auto rep = detector::evaluate(bundle(), test_);
    io::write_file(dir_ / files::kReport, rep.to_json(true).dump() + "\n");
    report_ = std::move(rep);
    record(files::kReport);
  });
  return *report_;
}

RunSummary Runner::run_all() {
  manifest_ = {};
  manifest_.condition = detector::to_string(cfg_.condition);
  warnings_.clear();
  load();
  train_fusion();
  fuse();
  train_domain();
  adapt();
  train_detector();
  evaluate();
  manifest_.status = "complete";
  manifest_.write(dir_);

  RunSummary s;
  s.report = *report_;
  s.train_accuracy = train_accuracy_;
  s.domain_heldout_accuracy = domain_heldout_;
  s.warnings = warnings_;
  return s;
}

const Dataset& Runner::general() {
  require_loaded();
  return general_;
}

const Dataset& Runner::target_benign() {
  require_loaded();
  return target_benign_;
}

const Dataset& Runner::test() {
  require_loaded();
  return test_;
}

const detector::ModelBundle& Runner::bundle() {
  if (!bundle_) bundle_ = detector::load_model(dir_ / files::kModel);
  return *bundle_;
}

detector::ModelBundle load_verified_model(const fs::path& model_path) {
  if (!fs::is_regular_file(model_path)) {
    throw IoError("model file not found: " + model_path.string());
  }
  const fs::path dir = model_path.parent_path().empty() ? fs::path(".") : model_path.parent_path();
  if (fs::is_regular_file(dir / files::kManifest)) {
    const auto m = ArtifactManifest::read(dir);
    if (m.files.count(model_path.filename().string())) m.verify(dir);  // every listed file
  }
  return detector::load_model(model_path);
}

detector::EvalReport evaluate_model(const fs::path& model_path, const fs::path& test_path,
                                    std::optional<detector::Condition> condition) {
  const auto bundle = load_verified_model(model_path);
  if (condition && *condition != bundle.detector.manifest.condition) {
    throw ValidationError(std::string("model was trained for condition ") +
                          detector::to_string(bundle.detector.manifest.condition) + ", not " +
                          detector::to_string(*condition));
  }
  const Dataset test = ingest::load_records(test_path, ingest::LoadOptions{false});
  if (test.dim != static_cast<std::size_t>(bundle.embed_dim())) {
    throw ShapeError("test data dim " + std::to_string(test.dim) + " != model dim " +
                     std::to_string(bundle.embed_dim()));
  }
  return detector::evaluate(bundle, test);
}

}  // namespace jdapt::pipeline
