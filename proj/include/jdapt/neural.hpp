#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jdapt/linalg.hpp"

namespace jdapt::neural {

using Rng = std::mt19937_64;

enum class Activation { kRelu, kIdentity, kSigmoid, kSoftmax };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Affine map z = W x + b followed by an activation. W is out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
  Activation activation = Activation::kIdentity;
};

/// Feedforward stack of dense layers. Parameters flatten layer by layer,
/// weight (row-major) then bias.
class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// Glorot-uniform weights and zero biases. An empty `hidden` gives a
  /// single affine layer.
  static DenseNet make(int input_dim, std::span<const int> hidden, int output_dim,
                       Activation hidden_activation, Activation output_activation, Rng& rng);

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::size_t parameter_count() const;
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }

  void get_parameters(std::span<double> out) const;
  void set_parameters(std::span<const double> in);
  std::vector<double> parameters() const;

 private:
  void validate() const;
  std::vector<DenseLayer> layers_;
};

/// Multi-head attention with a single query token. Every per-head projection
/// is d x d_h; the output projection is d x d. No bias terms.
struct AttentionParams {
  int heads = 0;
  int model_dim = 0;
  std::vector<Matrix> query;
  std::vector<Matrix> key;
  std::vector<Matrix> value;
  Matrix output;

  int head_dim() const { return heads > 0 ? model_dim / heads : 0; }

  static AttentionParams init(int model_dim, int heads, Rng& rng);
  /// Per-head projections are the matching column slices of I_d, output is I_d.
  static AttentionParams identity(int model_dim, int heads);

  void validate() const;
  std::size_t parameter_count() const;
  void get_parameters(std::span<double> out) const;
  void set_parameters(std::span<const double> in);
  std::vector<double> parameters() const;
};

struct AttentionResult {
  RowVector output;  // 1 x d
  Matrix attn;       // heads x m, each row on the simplex
};

Vector softmax(const Vector& logits);

AttentionResult mha_forward(const AttentionParams& params, const RowVector& query,
                            const Matrix& keys, const Matrix& values);

Vector dense_forward(const DenseNet& net, const Vector& x);
/// Row-wise forward pass; returns n x output_dim.
Matrix dense_forward(const DenseNet& net, const Matrix& x);

/// Mean over rows of -w log softmax(logits)[label], normalized by the weight
/// sum. Zero total weight gives a zero loss.
double weighted_ce_loss(const Matrix& logits, std::span<const int> labels,
                        std::span<const double> weights);
double mse_loss(const Vector& pred, const Vector& target);
/// Weighted binary cross-entropy from logits, normalized by the weight sum.
double weighted_bce_loss(const Vector& logits, std::span<const int> labels,
                         std::span<const double> weights);

enum class LossKind { kMse, kWeightedCrossEntropy, kBinaryCrossEntropy };

const char* to_string(LossKind k);

/// Inputs and targets for a DenseNet loss. `targets` is used by MSE;
/// `labels` and `weights` by the two cross-entropy losses. Empty weights
/// mean all ones.
struct DenseBatch {
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;
  std::vector<double> weights;

  Eigen::Index size() const { return inputs.rows(); }
  DenseBatch gather(std::span<const std::size_t> rows) const;
};

/// One cross-attention training sample: the query attends over keys/values
/// and the output is regressed onto target by MSE.
struct AttentionSample {
  RowVector query;
  Matrix keys;
  Matrix values;
  RowVector target;
};

/// Loss value and its gradient, flattened in the model's parameter order.
struct Gradient {
  double loss = 0.0;
  std::vector<double> values;
};

double dense_loss(const DenseNet& net, LossKind kind, const DenseBatch& batch);
Gradient backward(const DenseNet& net, LossKind kind, const DenseBatch& batch);

/// Mean per-sample MSE of the attention output against each target.
double attention_loss(const AttentionParams& params, std::span<const AttentionSample> batch);
Gradient backward(const AttentionParams& params, std::span<const AttentionSample> batch);

enum class InitScheme { kGlorotUniform };

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;
  InitScheme init = InitScheme::kGlorotUniform;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update. Increments the step counter before use, so
/// the first call runs with t = 1.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg);

struct TrainHistory {
  std::vector<double> epoch_loss;
};

/// Seeded-shuffle minibatch Adam. The last partial batch is kept.
TrainHistory train_dense(DenseNet& net, LossKind kind, const DenseBatch& data,
                         const TrainConfig& cfg);
TrainHistory train_attention(AttentionParams& params, std::span<const AttentionSample> data,
                             const TrainConfig& cfg);

/// Per-epoch visiting order: a seeded permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

struct GradCheckOptions {
  double fd_step = 1e-5;
  /// Models with more parameters are checked on a seeded random subset.
  std::size_t full_check_limit = 5000;
  std::size_t subset_size = 500;
  std::uint64_t seed = 7;
  /// Corrupts the analytic gradient; used as a negative control.
  bool inject_fault = false;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
};

/// Central-difference check of `backward`. Relative error per parameter is
/// |g - n| / max(|g|, |n|, 1e-6).
GradCheckResult grad_check(const DenseNet& net, LossKind kind, const DenseBatch& batch,
                           const GradCheckOptions& opts = {});
GradCheckResult grad_check(const AttentionParams& params, std::span<const AttentionSample> batch,
                           const GradCheckOptions& opts = {});

}  // namespace jdapt::neural
