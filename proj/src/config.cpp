#include "jdapt/config.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "jdapt/errors.hpp"
#include "jdapt/io.hpp"

namespace jdapt::config {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"paths", {"general", "target_benign", "test", "artifacts"}},
      {"data", {"embed_dim", "normalize"}},
      {"fusion", {"heads", "lr", "epochs", "batch_size"}},
      {"domain", {"hidden", "holdout_fraction", "lr", "epochs", "batch_size"}},
      {"adapt",
       {"lambda", "center_and_shift", "w_min", "w_max", "coral_source", "weighted_coral",
        "weights_after_coral", "force_unit_weights"}},
      {"detector",
       {"hidden", "threshold", "class_balanced_weights", "lr", "epochs", "batch_size"}},
      {"pipeline", {"condition", "seed", "threads"}},
  };
  return s;
}

template <class T>
T read(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  const auto v = tree.get_optional<T>(key);
  if (!v) throw ValidationError("config: cannot parse " + key + " = '" + *node + "'");
  return *v;
}

bool read_bool(const pt::ptree& tree, const std::string& key, bool fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  if (*node == "true" || *node == "1" || *node == "yes") return true;
  if (*node == "false" || *node == "0" || *node == "no") return false;
  throw ValidationError("config: " + key + " must be true or false, got '" + *node + "'");
}

std::vector<int> read_sizes(const pt::ptree& tree, const std::string& key,
                            std::vector<int> fallback) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  std::vector<int> out;
  std::stringstream in(*node);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(item.substr(b), &used);
      if (item.find_first_not_of(" \t", b + used) != std::string::npos) throw std::invalid_argument("");
      out.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError("config: " + key + " must be a comma-separated list of integers");
    }
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

void read_train(const pt::ptree& tree, const std::string& section, neural::TrainConfig& cfg) {
  cfg.learning_rate = read<double>(tree, section + ".lr", cfg.learning_rate);
  cfg.epochs = read<int>(tree, section + ".epochs", cfg.epochs);
  cfg.batch_size = read<int>(tree, section + ".batch_size", cfg.batch_size);
}

void check_sizes(const std::vector<int>& v, const char* what) {
  for (int h : v) {
    if (h < 1) throw ValidationError(std::string("config: ") + what + " sizes must be >= 1");
  }
}

}  // namespace

const char* to_string(CoralSource s) { return s == CoralSource::kSafe ? "safe" : "all"; }

void PipelineConfig::validate() const {
  if (paths.general.empty() || paths.target_benign.empty() || paths.test.empty() ||
      paths.artifacts.empty()) {
    throw ValidationError("config: [paths] needs general, target_benign, test and artifacts");
  }
  if (embed_dim < 0) throw ValidationError("config: embed_dim must be >= 0");
  if (threads < 0) throw ValidationError("config: threads must be >= 0");
  if (fusion.heads < 1) throw ValidationError("config: fusion heads must be >= 1");
  if (embed_dim > 0 && embed_dim % fusion.heads != 0) {
    throw ValidationError("config: embed_dim must be divisible by fusion heads");
  }
  fusion.train.validate();
  domain.train.validate();
  detector.train.validate();
  check_sizes(domain.hidden, "domain hidden");
  check_sizes(detector.hidden, "detector hidden");
  if (!(domain.holdout_fraction >= 0.0 && domain.holdout_fraction < 1.0)) {
    throw ValidationError("config: holdout_fraction must be in [0, 1)");
  }
  clamp.validate();
  if (!(coral.lambda >= 0.0) || !std::isfinite(coral.lambda)) {
    throw ValidationError("config: lambda must be finite and >= 0");
  }
  if (!(detector.threshold > 0.0 && detector.threshold < 1.0)) {
    throw ValidationError("config: threshold must lie in (0, 1)");
  }
}

void PipelineConfig::check_paths() const {
  for (const auto* p : {&paths.general, &paths.target_benign, &paths.test}) {
    if (!std::filesystem::is_regular_file(*p)) {
      throw ValidationError("config: input file not found: " + p->string());
    }
  }
  if (std::filesystem::exists(paths.artifacts) && !std::filesystem::is_directory(paths.artifacts)) {
    throw ValidationError("config: artifacts path is not a directory: " +
                          paths.artifacts.string());
  }
}

void PipelineConfig::reseed(std::uint64_t base) {
  seed = base;
  fusion.train.seed = base;
  domain.train.seed = base + 101;
  detector.train.seed = base + 202;
  balance_seed = base + 303;
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), e.line());
  }
  for (const auto& [section, body] : tree) {
    const auto it = schema().find(section);
    if (it == schema().end()) {
      throw ValidationError("config: unknown section [" + section + "]");
    }
    if (!body.data().empty()) {
      throw ValidationError("config: key '" + section + "' outside of any section");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) {
        throw ValidationError("config: unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  PipelineConfig cfg;
  cfg.paths.general = resolve(tree.get<std::string>("paths.general", ""), base_dir);
  cfg.paths.target_benign = resolve(tree.get<std::string>("paths.target_benign", ""), base_dir);
  cfg.paths.test = resolve(tree.get<std::string>("paths.test", ""), base_dir);
  cfg.paths.artifacts = resolve(tree.get<std::string>("paths.artifacts", ""), base_dir);

  cfg.embed_dim = read<int>(tree, "data.embed_dim", cfg.embed_dim);
  cfg.normalize = read_bool(tree, "data.normalize", cfg.normalize);

  cfg.fusion.heads = read<int>(tree, "fusion.heads", cfg.fusion.heads);
  read_train(tree, "fusion", cfg.fusion.train);

  cfg.domain.hidden = read_sizes(tree, "domain.hidden", cfg.domain.hidden);
  cfg.domain.holdout_fraction =
      read<double>(tree, "domain.holdout_fraction", cfg.domain.holdout_fraction);
  read_train(tree, "domain", cfg.domain.train);

  cfg.coral.lambda = read<double>(tree, "adapt.lambda", cfg.coral.lambda);
  cfg.coral.center_and_shift = read_bool(tree, "adapt.center_and_shift", cfg.coral.center_and_shift);
  cfg.clamp.w_min = read<double>(tree, "adapt.w_min", cfg.clamp.w_min);
  cfg.clamp.w_max = read<double>(tree, "adapt.w_max", cfg.clamp.w_max);
  const auto source = tree.get<std::string>("adapt.coral_source", "safe");
  if (source == "safe") {
    cfg.coral_source = CoralSource::kSafe;
  } else if (source == "all") {
    cfg.coral_source = CoralSource::kAll;
  } else {
    throw ValidationError("config: coral_source must be 'safe' or 'all'");
  }
  cfg.weighted_coral = read_bool(tree, "adapt.weighted_coral", cfg.weighted_coral);
  cfg.weights_after_coral = read_bool(tree, "adapt.weights_after_coral", cfg.weights_after_coral);
  cfg.force_unit_weights = read_bool(tree, "adapt.force_unit_weights", cfg.force_unit_weights);

  cfg.detector.hidden = read_sizes(tree, "detector.hidden", cfg.detector.hidden);
  cfg.detector.threshold = read<double>(tree, "detector.threshold", cfg.detector.threshold);
  cfg.detector.class_balanced_weights = read_bool(tree, "detector.class_balanced_weights",
                                                  cfg.detector.class_balanced_weights);
  read_train(tree, "detector", cfg.detector.train);

  cfg.condition = detector::condition_from_string(
      tree.get<std::string>("pipeline.condition", detector::to_string(cfg.condition)));
  cfg.threads = read<int>(tree, "pipeline.threads", cfg.threads);
  cfg.reseed(read<std::uint64_t>(tree, "pipeline.seed", 0));

  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ValidationError("config file not found: " + path.string());
  }
  return parse_config(io::read_file(path), std::filesystem::absolute(path).parent_path());
}

std::string format_config(const PipelineConfig& cfg) {
  // shortest text that parses back to the same double
  auto num = [](double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  std::ostringstream o;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[paths]\n"
    << "general = " << cfg.paths.general.string() << "\n"
    << "target_benign = " << cfg.paths.target_benign.string() << "\n"
    << "test = " << cfg.paths.test.string() << "\n"
    << "artifacts = " << cfg.paths.artifacts.string() << "\n\n"
    << "[data]\n"
    << "embed_dim = " << cfg.embed_dim << "\n"
    << "normalize = " << b(cfg.normalize) << "\n\n"
    << "[fusion]\n"
    << "heads = " << cfg.fusion.heads << "\n"
    << "lr = " << num(cfg.fusion.train.learning_rate) << "\n"
    << "epochs = " << cfg.fusion.train.epochs << "\n"
    << "batch_size = " << cfg.fusion.train.batch_size << "\n\n"
    << "[domain]\n"
    << "hidden = " << join(cfg.domain.hidden) << "\n"
    << "holdout_fraction = " << num(cfg.domain.holdout_fraction) << "\n"
    << "lr = " << num(cfg.domain.train.learning_rate) << "\n"
    << "epochs = " << cfg.domain.train.epochs << "\n"
    << "batch_size = " << cfg.domain.train.batch_size << "\n\n"
    << "[adapt]\n"
    << "lambda = " << num(cfg.coral.lambda) << "\n"
    << "center_and_shift = " << b(cfg.coral.center_and_shift) << "\n"
    << "w_min = " << num(cfg.clamp.w_min) << "\n"
    << "w_max = " << num(cfg.clamp.w_max) << "\n"
    << "coral_source = " << to_string(cfg.coral_source) << "\n"
    << "weighted_coral = " << b(cfg.weighted_coral) << "\n"
    << "weights_after_coral = " << b(cfg.weights_after_coral) << "\n"
    << "force_unit_weights = " << b(cfg.force_unit_weights) << "\n\n"
    << "[detector]\n"
    << "hidden = " << join(cfg.detector.hidden) << "\n"
    << "threshold = " << num(cfg.detector.threshold) << "\n"
    << "class_balanced_weights = " << b(cfg.detector.class_balanced_weights) << "\n"
    << "lr = " << num(cfg.detector.train.learning_rate) << "\n"
    << "epochs = " << cfg.detector.train.epochs << "\n"
    << "batch_size = " << cfg.detector.train.batch_size << "\n\n"
    << "[pipeline]\n"
    << "condition = " << detector::to_string(cfg.condition) << "\n"
    << "seed = " << cfg.seed << "\n"
    << "threads = " << cfg.threads << "\n";
  return o.str();
}

}  // namespace jdapt::config
