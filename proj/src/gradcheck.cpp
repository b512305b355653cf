#include "jdapt/gradcheck.hpp"

#include <random>

namespace jdapt::gradcheck {

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, neural::Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

}  // namespace

std::vector<ArchitectureCheck> check_all(const Shapes& shapes, std::uint64_t seed,
                                         const neural::GradCheckOptions& opts) {
  neural::Rng rng(seed);
  const int d = shapes.embed_dim;
  const int n = shapes.samples;
  std::vector<ArchitectureCheck> out;

  {
    const auto params = neural::AttentionParams::init(d, shapes.heads, rng);
    std::vector<neural::AttentionSample> batch;
    for (int i = 0; i < n; ++i) {
      neural::AttentionSample s;
      s.query = random_matrix(1, d, rng);
      s.keys = random_matrix(shapes.frames, d, rng);
      s.values = s.keys;
      s.target = random_matrix(1, d, rng);
      batch.push_back(std::move(s));
    }
    out.push_back({"fusion_attention", neural::to_string(neural::LossKind::kMse),
                   params.parameter_count(), neural::grad_check(params, batch, opts)});
  }

  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> weight(0.05, 20.0);
  {
    auto net = neural::DenseNet::make(3 * d, shapes.domain_hidden, 1, neural::Activation::kRelu,
                                      neural::Activation::kSigmoid, rng);
    neural::DenseBatch batch;
    batch.inputs = random_matrix(n, 3 * d, rng);
    for (int i = 0; i < n; ++i) batch.labels.push_back(coin(rng) ? 1 : 0);
    out.push_back({"domain_classifier",
                   neural::to_string(neural::LossKind::kBinaryCrossEntropy),
                   net.parameter_count(),
                   neural::grad_check(net, neural::LossKind::kBinaryCrossEntropy, batch, opts)});
  }

  {
    auto net = neural::DenseNet::make(3 * d, shapes.detector_hidden, 2, neural::Activation::kRelu,
                                      neural::Activation::kIdentity, rng);
    neural::DenseBatch batch;
    batch.inputs = random_matrix(n, 3 * d, rng);
    for (int i = 0; i < n; ++i) {
      batch.labels.push_back(coin(rng) ? 1 : 0);
      batch.weights.push_back(weight(rng));
    }
    out.push_back({"detector",
                   neural::to_string(neural::LossKind::kWeightedCrossEntropy),
                   net.parameter_count(),
                   neural::grad_check(net, neural::LossKind::kWeightedCrossEntropy, batch, opts)});
  }
  return out;
}

}  // namespace jdapt::gradcheck
