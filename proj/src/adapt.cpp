#include "jdapt/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "jdapt/errors.hpp"

namespace jdapt::adapt {

Vector DomainModel::target_probability(const Matrix& x) const {
  return neural::dense_forward(net, x).col(0);
}

DomainTrainResult train_domain_classifier(const Matrix& general, const Matrix& target,
                                          const DomainOptions& opts) {
  if (general.rows() == 0 || target.rows() == 0) {
    throw ValidationError("train_domain_classifier: both domains need samples");
  }
  if (general.cols() != target.cols()) {
    throw ShapeError("train_domain_classifier: general width " + std::to_string(general.cols()) +
                     " != target width " + std::to_string(target.cols()));
  }
  if (!(opts.holdout_fraction >= 0.0 && opts.holdout_fraction < 1.0)) {
    throw ValidationError("train_domain_classifier: holdout_fraction must be in [0, 1)");
  }
  opts.train.validate();

  neural::Rng rng(opts.train.seed);
  const auto per_domain = static_cast<std::size_t>(std::min(general.rows(), target.rows()));
  auto pick = [&](const Matrix& m) {
    auto idx = neural::shuffled_indices(static_cast<std::size_t>(m.rows()), rng);
    idx.resize(per_domain);
    return idx;
  };
  const auto gen_idx = pick(general);
  const auto tgt_idx = pick(target);

  neural::DenseBatch all;
  all.inputs.resize(static_cast<Eigen::Index>(2 * per_domain), general.cols());
  for (std::size_t i = 0; i < per_domain; ++i) {
    all.inputs.row(static_cast<Eigen::Index>(2 * i)) =
        general.row(static_cast<Eigen::Index>(gen_idx[i]));
    all.inputs.row(static_cast<Eigen::Index>(2 * i + 1)) =
        target.row(static_cast<Eigen::Index>(tgt_idx[i]));
    all.labels.push_back(0);
    all.labels.push_back(1);
  }

  const auto order = neural::shuffled_indices(2 * per_domain, rng);
  auto holdout = static_cast<std::size_t>(
      std::floor(opts.holdout_fraction * static_cast<double>(order.size()) + 0.5));
  if (holdout >= order.size()) holdout = 0;
  const std::span<const std::size_t> held(order.data(), holdout);
  const std::span<const std::size_t> fit(order.data() + holdout, order.size() - holdout);
  const neural::DenseBatch train = all.gather(fit);

  DomainTrainResult result;
  result.model.net = neural::DenseNet::make(static_cast<int>(general.cols()), opts.hidden, 1,
                                            neural::Activation::kRelu,
                                            neural::Activation::kSigmoid, rng);
  neural::TrainConfig cfg = opts.train;
  cfg.seed = opts.train.seed + 1;
  result.history =
      neural::train_dense(result.model.net, neural::LossKind::kBinaryCrossEntropy, train, cfg);

  if (holdout > 0) {
    const neural::DenseBatch test = all.gather(held);
    const Vector p = result.model.target_probability(test.inputs);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      correct += static_cast<std::size_t>((p(i) >= 0.5 ? 1 : 0) ==
                                          test.labels[static_cast<std::size_t>(i)]);
    }
    result.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(holdout);
  }
  result.heldout_size = holdout;
  return result;
}

void WeightClamp::validate() const {
  if (!(w_min > 0.0 && w_min < w_max) || !std::isfinite(w_max)) {
    throw ValidationError("weight clamp needs 0 < w_min < w_max < inf");
  }
}

double odds_weight(double p, const WeightClamp& clamp) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError("odds_weight: probability outside [0, 1]");
  }
  const double odds = p >= 1.0 ? clamp.w_max : p / (1.0 - p);
  return std::clamp(odds, clamp.w_min, clamp.w_max);
}

double ImportanceWeights::at(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) {
    throw ValidationError("no importance weight for record '" + id + "'");
  }
  return values[static_cast<std::size_t>(it - ids.begin())];
}

std::unordered_map<std::string, double> ImportanceWeights::as_map() const {
  std::unordered_map<std::string, double> m;
  m.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) m.emplace(ids[i], values[i]);
  return m;
}

ImportanceWeights importance_weights(const DomainModel& model, const Matrix& general,
                                     std::span<const std::string> ids, const WeightClamp& clamp) {
  clamp.validate();
  if (ids.size() != static_cast<std::size_t>(general.rows())) {
    throw ShapeError("importance_weights: one id per general row required");
  }
  const Vector p = model.target_probability(general);
  ImportanceWeights w;
  w.clamp = clamp;
  w.ids.assign(ids.begin(), ids.end());
  w.values.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    w.values[i] = odds_weight(p(static_cast<Eigen::Index>(i)), clamp);
  }
  return w;
}

linalg::CoralMap fit_adaptation(const Matrix& general, const Matrix& target,
                                const linalg::CoralOptions& opts) {
  return linalg::fit_coral(general, target, opts);
}

linalg::CoralMap fit_adaptation(const Matrix& general, std::span<const double> general_weights,
                                const Matrix& target, const linalg::CoralOptions& opts) {
  return linalg::fit_coral(general, general_weights, target, opts);
}

std::string weights_to_ndjson(const ImportanceWeights& w) {
  std::string out;
  for (std::size_t i = 0; i < w.ids.size(); ++i) {
    out += nlohmann::json{{"id", w.ids[i]}, {"weight", w.values[i]}}.dump();
    out.push_back('\n');
  }
  return out;
}

ImportanceWeights weights_from_ndjson(const std::string& text, const WeightClamp& clamp) {
  ImportanceWeights w;
  w.clamp = clamp;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      w.ids.push_back(j.at("id").get<std::string>());
      w.values.push_back(j.at("weight").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return w;
}

}  // namespace jdapt::adapt
