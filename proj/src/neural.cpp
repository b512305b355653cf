#include "jdapt/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "jdapt/errors.hpp"

namespace jdapt::neural {

namespace {

double glorot_bound(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Matrix glorot_matrix(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                     Eigen::Index fan_out, Rng& rng) {
  const double a = glorot_bound(fan_in, fan_out);
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = dist(rng);
  }
  return m;
}

std::size_t copy_out(const double* src, Eigen::Index n, std::span<double> out, std::size_t at) {
  std::copy(src, src + n, out.begin() + static_cast<std::ptrdiff_t>(at));
  return at + static_cast<std::size_t>(n);
}

std::size_t copy_in(double* dst, Eigen::Index n, std::span<const double> in, std::size_t at) {
  std::copy(in.begin() + static_cast<std::ptrdiff_t>(at),
            in.begin() + static_cast<std::ptrdiff_t>(at) + n, dst);
  return at + static_cast<std::size_t>(n);
}

double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void apply_activation(Matrix& z, Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      z = z.cwiseMax(0.0);
      return;
    case Activation::kSigmoid:
      z = z.unaryExpr([](double v) { return sigmoid(v); });
      return;
    case Activation::kSoftmax:
      for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double mx = z.row(r).maxCoeff();
        z.row(r) = (z.row(r).array() - mx).exp();
        z.row(r) /= z.row(r).sum();
      }
      return;
  }
}

// grad w.r.t. pre-activation given grad w.r.t. activation output.
Matrix activation_backward(const Matrix& pre, const Matrix& post, const Matrix& grad_out,
                           Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return grad_out;
    case Activation::kRelu:
      return (pre.array() > 0.0).select(grad_out, 0.0);
    case Activation::kSigmoid:
      return grad_out.cwiseProduct(post.cwiseProduct((1.0 - post.array()).matrix()));
    case Activation::kSoftmax: {
      Matrix g(grad_out.rows(), grad_out.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double dot = grad_out.row(r).dot(post.row(r));
        g.row(r) = post.row(r).cwiseProduct((grad_out.row(r).array() - dot).matrix());
      }
      return g;
    }
  }
  return grad_out;
}

struct DenseCache {
  std::vector<Matrix> pre;   // Z_l
  std::vector<Matrix> post;  // A_l, post[0] is the input
};

DenseCache dense_forward_cached(const DenseNet& net, const Matrix& x) {
  DenseCache cache;
  cache.post.push_back(x);
  for (const auto& layer : net.layers()) {
    Matrix z = cache.post.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    Matrix a = z;
    apply_activation(a, layer.activation);
    cache.pre.push_back(std::move(z));
    cache.post.push_back(std::move(a));
  }
  return cache;
}

std::vector<double> resolve_weights(const DenseBatch& batch) {
  if (batch.weights.empty()) {
    return std::vector<double>(static_cast<std::size_t>(batch.size()), 1.0);
  }
  return batch.weights;
}

void check_batch(const DenseNet& net, LossKind kind, const DenseBatch& batch) {
  if (net.empty()) {
    throw ShapeError("DenseNet has no layers");
  }
  if (batch.inputs.cols() != net.input_dim()) {
    throw ShapeError("batch input width " + std::to_string(batch.inputs.cols()) +
                     " does not match network input " + std::to_string(net.input_dim()));
  }
  const auto n = static_cast<std::size_t>(batch.size());
  switch (kind) {
    case LossKind::kMse:
      if (batch.targets.rows() != batch.inputs.rows() || batch.targets.cols() != net.output_dim()) {
        throw ShapeError("MSE targets must be n x output_dim");
      }
      break;
    case LossKind::kWeightedCrossEntropy:
      if (net.output_dim() != 2) {
        throw ShapeError("weighted cross-entropy needs a 2-logit output");
      }
      [[fallthrough]];
    case LossKind::kBinaryCrossEntropy:
      if (kind == LossKind::kBinaryCrossEntropy &&
          (net.output_dim() != 1 || net.layers().back().activation != Activation::kSigmoid)) {
        throw ShapeError("binary cross-entropy needs a single sigmoid output");
      }
      if (batch.labels.size() != n || (!batch.weights.empty() && batch.weights.size() != n)) {
        throw ShapeError("labels/weights length does not match batch size");
      }
      break;
  }
}

// Logits for the cross-entropy heads are always the final pre-activation.
struct LossHead {
  double loss;
  Matrix grad_pre;  // gradient w.r.t. final pre-activation
};

LossHead dense_head(const DenseNet& net, LossKind kind, const DenseBatch& batch,
                    const DenseCache& cache) {
  const Matrix& out = cache.post.back();
  const Matrix& z = cache.pre.back();
  const auto n = batch.size();
  LossHead head{0.0, Matrix::Zero(z.rows(), z.cols())};
  switch (kind) {
    case LossKind::kMse: {
      const Matrix diff = out - batch.targets;
      const double denom = static_cast<double>(n * out.cols());
      head.loss = n == 0 ? 0.0 : diff.squaredNorm() / denom;
      const Matrix grad_out = n == 0 ? Matrix(diff) : Matrix((2.0 / denom) * diff);
      head.grad_pre = activation_backward(z, out, grad_out, net.layers().back().activation);
      break;
    }
    case LossKind::kWeightedCrossEntropy: {
      const auto w = resolve_weights(batch);
      head.loss = weighted_ce_loss(z, batch.labels, w);
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      if (total <= 0.0) {
        break;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector p = softmax(z.row(i).transpose());
        Vector g = p;
        g(batch.labels[static_cast<std::size_t>(i)]) -= 1.0;
        head.grad_pre.row(i) = (w[static_cast<std::size_t>(i)] / total) * g.transpose();
      }
      break;
    }
    case LossKind::kBinaryCrossEntropy: {
      const auto w = resolve_weights(batch);
      const Vector logits = z.col(0);
      head.loss = weighted_bce_loss(logits, batch.labels, w);
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      if (total <= 0.0) {
        break;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        head.grad_pre(i, 0) = (w[k] / total) * (sigmoid(logits(i)) - batch.labels[k]);
      }
      break;
    }
  }
  return head;
}

void check_labels(std::span<const int> labels, int classes) {
  for (const int y : labels) {
    if (y < 0 || y >= classes) {
      throw ValidationError("label " + std::to_string(y) + " out of range");
    }
  }
}

void check_weights(std::span<const double> weights) {
  for (const double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ValidationError("sample weights must be finite and non-negative");
    }
  }
}

template <class LossFn>
GradCheckResult run_grad_check(std::vector<double> params, std::vector<double> analytic,
                               LossFn&& loss_at, const GradCheckOptions& opts) {
  const std::size_t n = params.size();
  std::size_t faulty = n;
  if (opts.inject_fault && n > 0) {
    faulty = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs(analytic[i]) > std::abs(analytic[faulty])) faulty = i;
    }
    analytic[faulty] += 0.5 * std::abs(analytic[faulty]) + 1e-3;
  }
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  if (n > opts.full_check_limit) {
    Rng rng(opts.seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(std::max<std::size_t>(opts.subset_size, 200));
    // the corrupted entry must be among the checked ones
    if (faulty < n && std::find(indices.begin(), indices.end(), faulty) == indices.end()) {
      indices.back() = faulty;
    }
    std::sort(indices.begin(), indices.end());
  }
  GradCheckResult result;
  for (const std::size_t i : indices) {
    const double orig = params[i];
    params[i] = orig + opts.fd_step;
    const double up = loss_at(params);
    params[i] = orig - opts.fd_step;
    const double down = loss_at(params);
    params[i] = orig;
    const double numeric = (up - down) / (2.0 * opts.fd_step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
    case Activation::kSigmoid:
      return "sigmoid";
    case Activation::kSoftmax:
      return "softmax";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw ValidationError("unknown activation '" + name + "'");
}

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::kMse:
      return "mse";
    case LossKind::kWeightedCrossEntropy:
      return "weighted_ce";
    case LossKind::kBinaryCrossEntropy:
      return "bce";
  }
  return "mse";
}

// ---------------------------------------------------------------------------
// DenseNet

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

void DenseNet::validate() const {
  if (layers_.empty()) {
    throw ShapeError("DenseNet needs at least one layer");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rows() == 0 || l.weight.cols() == 0 || l.bias.size() != l.weight.rows()) {
      throw ShapeError("DenseNet layer " + std::to_string(i) + " has inconsistent shapes");
    }
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      throw ShapeError("DenseNet layer " + std::to_string(i) + " input does not chain");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw ValidationError("DenseNet layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

DenseNet DenseNet::make(int input_dim, std::span<const int> hidden, int output_dim,
                        Activation hidden_activation, Activation output_activation, Rng& rng) {
  if (input_dim <= 0 || output_dim <= 0) {
    throw ShapeError("DenseNet::make: dimensions must be positive");
  }
  std::vector<DenseLayer> layers;
  int fan_in = input_dim;
  for (const int width : hidden) {
    if (width <= 0) {
      throw ShapeError("DenseNet::make: hidden widths must be positive");
    }
    layers.push_back({glorot_matrix(width, fan_in, fan_in, width, rng), Vector::Zero(width),
                      hidden_activation});
    fan_in = width;
  }
  layers.push_back({glorot_matrix(output_dim, fan_in, fan_in, output_dim, rng),
                    Vector::Zero(output_dim), output_activation});
  return DenseNet(std::move(layers));
}

Eigen::Index DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }

Eigen::Index DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return n;
}

void DenseNet::get_parameters(std::span<double> out) const {
  if (out.size() != parameter_count()) {
    throw ShapeError("DenseNet::get_parameters: buffer size mismatch");
  }
  std::size_t at = 0;
  for (const auto& l : layers_) {
    at = copy_out(l.weight.data(), l.weight.size(), out, at);
    at = copy_out(l.bias.data(), l.bias.size(), out, at);
  }
}

void DenseNet::set_parameters(std::span<const double> in) {
  if (in.size() != parameter_count()) {
    throw ShapeError("DenseNet::set_parameters: buffer size mismatch");
  }
  std::size_t at = 0;
  for (auto& l : layers_) {
    at = copy_in(l.weight.data(), l.weight.size(), in, at);
    at = copy_in(l.bias.data(), l.bias.size(), in, at);
  }
}

std::vector<double> DenseNet::parameters() const {
  std::vector<double> p(parameter_count());
  get_parameters(p);
  return p;
}

// ---------------------------------------------------------------------------
// AttentionParams

AttentionParams AttentionParams::init(int model_dim, int heads, Rng& rng) {
  AttentionParams p;
  p.heads = heads;
  p.model_dim = model_dim;
  if (heads <= 0 || model_dim <= 0 || model_dim % heads != 0) {
    throw ShapeError("attention model_dim " + std::to_string(model_dim) +
                     " must be a positive multiple of heads " + std::to_string(heads));
  }
  const int dh = model_dim / heads;
  for (auto* proj : {&p.query, &p.key, &p.value}) {
    for (int h = 0; h < heads; ++h) {
      proj->push_back(glorot_matrix(model_dim, dh, model_dim, dh, rng));
    }
  }
  p.output = glorot_matrix(model_dim, model_dim, model_dim, model_dim, rng);
  return p;
}

AttentionParams AttentionParams::identity(int model_dim, int heads) {
  AttentionParams p;
  p.heads = heads;
  p.model_dim = model_dim;
  if (heads <= 0 || model_dim <= 0 || model_dim % heads != 0) {
    throw ShapeError("attention model_dim must be a positive multiple of heads");
  }
  const int dh = model_dim / heads;
  const Matrix eye = Matrix::Identity(model_dim, model_dim);
  for (auto* proj : {&p.query, &p.key, &p.value}) {
    for (int h = 0; h < heads; ++h) {
      proj->push_back(eye.middleCols(h * dh, dh));
    }
  }
  p.output = eye;
  return p;
}

void AttentionParams::validate() const {
  if (heads <= 0 || model_dim <= 0 || model_dim % heads != 0) {
    throw ShapeError("attention model_dim must be a positive multiple of heads");
  }
  const auto h = static_cast<std::size_t>(heads);
  if (query.size() != h || key.size() != h || value.size() != h) {
    throw ShapeError("attention needs one projection per head");
  }
  for (const auto* proj : {&query, &key, &value}) {
    for (const auto& m : *proj) {
      if (m.rows() != model_dim || m.cols() != head_dim()) {
        throw ShapeError("attention head projection must be d x d_h");
      }
      if (!m.allFinite()) {
        throw ValidationError("attention projection has non-finite entries");
      }
    }
  }
  if (output.rows() != model_dim || output.cols() != model_dim || !output.allFinite()) {
    throw ShapeError("attention output projection must be finite d x d");
  }
}

std::size_t AttentionParams::parameter_count() const {
  const auto d = static_cast<std::size_t>(model_dim);
  return 3 * d * d + d * d;
}

void AttentionParams::get_parameters(std::span<double> out) const {
  if (out.size() != parameter_count()) {
    throw ShapeError("AttentionParams::get_parameters: buffer size mismatch");
  }
  std::size_t at = 0;
  for (const auto* proj : {&query, &key, &value}) {
    for (const auto& m : *proj) at = copy_out(m.data(), m.size(), out, at);
  }
  copy_out(output.data(), output.size(), out, at);
}

void AttentionParams::set_parameters(std::span<const double> in) {
  if (in.size() != parameter_count()) {
    throw ShapeError("AttentionParams::set_parameters: buffer size mismatch");
  }
  std::size_t at = 0;
  for (auto* proj : {&query, &key, &value}) {
    for (auto& m : *proj) at = copy_in(m.data(), m.size(), in, at);
  }
  copy_in(output.data(), output.size(), in, at);
}

std::vector<double> AttentionParams::parameters() const {
  std::vector<double> p(parameter_count());
  get_parameters(p);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

AttentionResult mha_forward(const AttentionParams& params, const RowVector& query,
                            const Matrix& keys, const Matrix& values) {
  if (keys.rows() == 0) {
    throw ShapeError("mha_forward: empty key/value sequence");
  }
  const auto d = params.model_dim;
  if (query.size() != d || keys.cols() != d || values.cols() != d || keys.rows() != values.rows()) {
    throw ShapeError("mha_forward: query/keys/values do not match model_dim " +
                     std::to_string(d));
  }
  const int dh = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult r;
  r.attn.resize(params.heads, keys.rows());
  RowVector concat(d);
  for (int h = 0; h < params.heads; ++h) {
    const RowVector q = query * params.query[h];
    const Matrix k = keys * params.key[h];
    const Matrix v = values * params.value[h];
    const Vector a = softmax((k * q.transpose()) * scale);
    r.attn.row(h) = a.transpose();
    concat.segment(h * dh, dh) = a.transpose() * v;
  }
  r.output = concat * params.output;
  return r;
}

Vector dense_forward(const DenseNet& net, const Vector& x) {
  if (x.size() != net.input_dim()) {
    throw ShapeError("dense_forward: input has " + std::to_string(x.size()) +
                     " entries, network expects " + std::to_string(net.input_dim()));
  }
  Vector a = x;
  for (const auto& layer : net.layers()) {
    Vector z = layer.weight * a + layer.bias;
    switch (layer.activation) {
      case Activation::kIdentity:
        break;
      case Activation::kRelu:
        z = z.cwiseMax(0.0);
        break;
      case Activation::kSigmoid:
        z = z.unaryExpr([](double v) { return sigmoid(v); });
        break;
      case Activation::kSoftmax:
        z = softmax(z);
        break;
    }
    a = std::move(z);
  }
  return a;
}

Matrix dense_forward(const DenseNet& net, const Matrix& x) {
  if (x.cols() != net.input_dim()) {
    throw ShapeError("dense_forward: input width " + std::to_string(x.cols()) +
                     " does not match network input " + std::to_string(net.input_dim()));
  }
  return dense_forward_cached(net, x).post.back();
}

// ---------------------------------------------------------------------------
// Losses

double weighted_ce_loss(const Matrix& logits, std::span<const int> labels,
                        std::span<const double> weights) {
  const auto n = static_cast<std::size_t>(logits.rows());
  if (labels.size() != n || weights.size() != n) {
    throw ShapeError("weighted_ce_loss: logits, labels and weights lengths differ");
  }
  if (logits.cols() != 2) {
    throw ShapeError("weighted_ce_loss: expected 2 logits per row");
  }
  check_weights(weights);
  check_labels(labels, 2);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    num += weights[i] * (lse - logits(r, labels[i]));
    den += weights[i];
  }
  return den == 0.0 ? 0.0 : num / den;
}

double mse_loss(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse_loss: dimension mismatch");
  }
  if (pred.size() == 0) {
    return 0.0;
  }
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double weighted_bce_loss(const Vector& logits, std::span<const int> labels,
                         std::span<const double> weights) {
  const auto n = static_cast<std::size_t>(logits.size());
  if (labels.size() != n || weights.size() != n) {
    throw ShapeError("weighted_bce_loss: logits, labels and weights lengths differ");
  }
  check_weights(weights);
  check_labels(labels, 2);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits(static_cast<Eigen::Index>(i));
    num += weights[i] * (softplus(z) - labels[i] * z);
    den += weights[i];
  }
  return den == 0.0 ? 0.0 : num / den;
}

// ---------------------------------------------------------------------------
// Backward passes

DenseBatch DenseBatch::gather(std::span<const std::size_t> rows) const {
  DenseBatch out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  if (targets.size() > 0) {
    out.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const auto k = static_cast<Eigen::Index>(i);
    out.inputs.row(k) = inputs.row(r);
    if (targets.size() > 0) out.targets.row(k) = targets.row(r);
    if (!labels.empty()) out.labels.push_back(labels[rows[i]]);
    if (!weights.empty()) out.weights.push_back(weights[rows[i]]);
  }
  return out;
}

double dense_loss(const DenseNet& net, LossKind kind, const DenseBatch& batch) {
  check_batch(net, kind, batch);
  const DenseCache cache = dense_forward_cached(net, batch.inputs);
  const Matrix& out = cache.post.back();
  const Matrix& z = cache.pre.back();
  switch (kind) {
    case LossKind::kMse:
      return batch.size() == 0 ? 0.0
                               : (out - batch.targets).squaredNorm() /
                                     static_cast<double>(batch.size() * out.cols());
    case LossKind::kWeightedCrossEntropy:
      return weighted_ce_loss(z, batch.labels, resolve_weights(batch));
    case LossKind::kBinaryCrossEntropy:
      return weighted_bce_loss(z.col(0), batch.labels, resolve_weights(batch));
  }
  return 0.0;
}

Gradient backward(const DenseNet& net, LossKind kind, const DenseBatch& batch) {
  check_batch(net, kind, batch);
  const DenseCache cache = dense_forward_cached(net, batch.inputs);
  LossHead head = dense_head(net, kind, batch, cache);

  const auto& layers = net.layers();
  std::vector<Matrix> grad_w(layers.size());
  std::vector<Vector> grad_b(layers.size());
  Matrix grad_pre = std::move(head.grad_pre);
  for (std::size_t li = layers.size(); li-- > 0;) {
    grad_w[li] = grad_pre.transpose() * cache.post[li];
    grad_b[li] = grad_pre.colwise().sum().transpose();
    if (li > 0) {
      const Matrix grad_post = grad_pre * layers[li].weight;
      grad_pre = activation_backward(cache.pre[li - 1], cache.post[li], grad_post,
                                     layers[li - 1].activation);
    }
  }

  Gradient g;
  g.loss = head.loss;
  g.values.resize(net.parameter_count());
  std::size_t at = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    at = copy_out(grad_w[li].data(), grad_w[li].size(), g.values, at);
    at = copy_out(grad_b[li].data(), grad_b[li].size(), g.values, at);
  }
  return g;
}

double attention_loss(const AttentionParams& params, std::span<const AttentionSample> batch) {
  if (batch.empty()) {
    return 0.0;
  }
  double total = 0.0;
  for (const auto& s : batch) {
    const auto r = mha_forward(params, s.query, s.keys, s.values);
    if (s.target.size() != r.output.size()) {
      throw ShapeError("attention_loss: target dimension mismatch");
    }
    total += (r.output - s.target).squaredNorm() / static_cast<double>(params.model_dim);
  }
  return total / static_cast<double>(batch.size());
}

Gradient backward(const AttentionParams& params, std::span<const AttentionSample> batch) {
  params.validate();
  const int d = params.model_dim;
  const int dh = params.head_dim();
  const int heads = params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Matrix> gq(heads, Matrix::Zero(d, dh));
  std::vector<Matrix> gk(heads, Matrix::Zero(d, dh));
  std::vector<Matrix> gv(heads, Matrix::Zero(d, dh));
  Matrix go = Matrix::Zero(d, d);
  double total = 0.0;
  const double inv_b = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());

  for (const auto& s : batch) {
    if (s.keys.rows() == 0) {
      throw ShapeError("attention backward: empty key/value sequence");
    }
    if (s.query.size() != d || s.keys.cols() != d || s.values.cols() != d ||
        s.target.size() != d || s.keys.rows() != s.values.rows()) {
      throw ShapeError("attention backward: sample does not match model_dim");
    }
    RowVector concat(d);
    std::vector<RowVector> qs(heads);
    std::vector<Matrix> ks(heads), vs(heads);
    std::vector<Vector> as(heads);
    for (int h = 0; h < heads; ++h) {
      qs[h] = s.query * params.query[h];
      ks[h] = s.keys * params.key[h];
      vs[h] = s.values * params.value[h];
      as[h] = softmax((ks[h] * qs[h].transpose()) * scale);
      concat.segment(h * dh, dh) = as[h].transpose() * vs[h];
    }
    const RowVector out = concat * params.output;
    const RowVector diff = out - s.target;
    total += diff.squaredNorm() / d;

    const RowVector gout = (2.0 * inv_b / d) * diff;
    go.noalias() += concat.transpose() * gout;
    const RowVector gconcat = gout * params.output.transpose();
    for (int h = 0; h < heads; ++h) {
      const RowVector gctx = gconcat.segment(h * dh, dh);
      const Matrix gvh = as[h] * gctx;                  // m x dh
      const Vector ga = vs[h] * gctx.transpose();       // m
      const double dot = ga.dot(as[h]);
      const Vector gs = scale * as[h].cwiseProduct((ga.array() - dot).matrix());
      const RowVector gqh = gs.transpose() * ks[h];     // 1 x dh
      const Matrix gkh = gs * qs[h];                    // m x dh
      gq[h].noalias() += s.query.transpose() * gqh;
      gk[h].noalias() += s.keys.transpose() * gkh;
      gv[h].noalias() += s.values.transpose() * gvh;
    }
  }

  Gradient g;
  g.loss = total * inv_b;
  g.values.resize(params.parameter_count());
  std::size_t at = 0;
  for (const auto* proj : {&gq, &gk, &gv}) {
    for (const auto& m : *proj) at = copy_out(m.data(), m.size(), g.values, at);
  }
  copy_out(go.data(), go.size(), g.values, at);
  return g;
}

// ---------------------------------------------------------------------------
// Optimization

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("adam eps must be > 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and state sizes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

namespace {

template <class Model, class StepFn>
TrainHistory run_minibatches(Model& model, std::size_t n, const TrainConfig& cfg, StepFn&& grad_of) {
  cfg.validate();
  TrainHistory history;
  if (n == 0) {
    throw ValidationError("training set is empty");
  }
  Rng rng(cfg.seed);
  AdamState state(model.parameter_count());
  std::vector<double> params = model.parameters();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Gradient g = grad_of(model, rows);
      loss_sum += g.loss * static_cast<double>(rows.size());
      adam_step(params, g.values, state, cfg);
      model.set_parameters(params);
    }
    history.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  return history;
}

}  // namespace

TrainHistory train_dense(DenseNet& net, LossKind kind, const DenseBatch& data,
                         const TrainConfig& cfg) {
  check_batch(net, kind, data);
  return run_minibatches(net, static_cast<std::size_t>(data.size()), cfg,
                         [&](const DenseNet& m, std::span<const std::size_t> rows) {
                           return backward(m, kind, data.gather(rows));
                         });
}

TrainHistory train_attention(AttentionParams& params, std::span<const AttentionSample> data,
                             const TrainConfig& cfg) {
  params.validate();
  std::vector<AttentionSample> scratch;
  return run_minibatches(params, data.size(), cfg,
                         [&](const AttentionParams& m, std::span<const std::size_t> rows) {
                           scratch.clear();
                           for (const auto r : rows) scratch.push_back(data[r]);
                           return backward(m, scratch);
                         });
}

// ---------------------------------------------------------------------------
// Gradient verification

GradCheckResult grad_check(const DenseNet& net, LossKind kind, const DenseBatch& batch,
                           const GradCheckOptions& opts) {
  const Gradient g = backward(net, kind, batch);
  DenseNet work = net;
  return run_grad_check(
      net.parameters(), g.values,
      [&](const std::vector<double>& p) {
        work.set_parameters(p);
        return dense_loss(work, kind, batch);
      },
      opts);
}

GradCheckResult grad_check(const AttentionParams& params, std::span<const AttentionSample> batch,
                           const GradCheckOptions& opts) {
  const Gradient g = backward(params, batch);
  AttentionParams work = params;
  return run_grad_check(
      params.parameters(), g.values,
      [&](const std::vector<double>& p) {
        work.set_parameters(p);
        return attention_loss(work, batch);
      },
      opts);
}

}  // namespace jdapt::neural
