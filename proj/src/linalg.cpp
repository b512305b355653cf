#include "jdapt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jdapt/errors.hpp"

namespace jdapt::linalg {

namespace {

constexpr double kSymmetryTolerance = 1e-9;

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw ValidationError(std::string(what) + " contains non-finite entries");
  }
}

}  // namespace

Vector column_means(const Matrix& x) {
  if (x.rows() == 0) {
    throw DegenerateSampleError("column_means: empty sample");
  }
  return x.colwise().mean().transpose();
}

Matrix sample_covariance(const Matrix& x, int ddof) {
  if (ddof < 0) {
    throw ValidationError("sample_covariance: ddof must be 0 or 1");
  }
  if (x.rows() < ddof + 1) {
    throw DegenerateSampleError("sample_covariance: need at least " + std::to_string(ddof + 1) +
                                " rows, got " + std::to_string(x.rows()));
  }
  require_finite(x, "sample_covariance input");
  const RowVector mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  Matrix cov = centered.transpose() * centered;
  cov /= static_cast<double>(x.rows() - ddof);
  // Exact symmetry; the product above is symmetric only up to round-off.
  Matrix sym = 0.5 * (cov + cov.transpose());
  return sym;
}

Matrix spd_power(const Matrix& a, Power p, double eig_floor) {
  if (a.rows() != a.cols()) {
    throw ShapeError("spd_power: matrix is " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ", expected square");
  }
  if (a.rows() == 0) {
    throw ShapeError("spd_power: empty matrix");
  }
  require_finite(a, "spd_power input");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTolerance * scale) {
    throw ShapeError("spd_power: matrix is not symmetric (max asymmetry " + std::to_string(asym) +
                     ")");
  }
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw SingularityError("spd_power: eigendecomposition did not converge");
  }
  Vector values = solver.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double lam = std::max(values(i), eig_floor);
    if (p == Power::kInvSqrt) {
      if (lam <= 0.0) {
        throw SingularityError("spd_power: zero eigenvalue in inverse square root");
      }
      values(i) = 1.0 / std::sqrt(lam);
    } else {
      values(i) = std::sqrt(std::max(lam, 0.0));
    }
  }
  const Eigen::MatrixXd& vecs = solver.eigenvectors();
  Matrix out = vecs * values.asDiagonal() * vecs.transpose();
  return 0.5 * (out + out.transpose());
}

void CoralMap::validate() const {
  if (transform.rows() != transform.cols()) {
    throw ShapeError("CoralMap: transform must be square");
  }
  if (source_mean.size() != transform.rows() || target_mean.size() != transform.rows()) {
    throw ShapeError("CoralMap: mean dimensions do not match transform order");
  }
  if (!(lambda >= 0.0)) {
    throw ValidationError("CoralMap: lambda must be >= 0");
  }
}

namespace {

void check_weights(const Matrix& x, std::span<const double> w, const char* who) {
  if (w.size() != static_cast<std::size_t>(x.rows())) {
    throw ShapeError(std::string(who) + ": " + std::to_string(w.size()) + " weights for " +
                     std::to_string(x.rows()) + " rows");
  }
  double sum = 0.0;
  for (double v : w) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError(std::string(who) + ": weights must be finite and >= 0");
    }
    sum += v;
  }
  if (!(sum > 0.0)) {
    throw DegenerateSampleError(std::string(who) + ": weights sum to zero");
  }
}

CoralMap coral_from_stats(const Matrix& source_cov, Vector source_mean, const Matrix& target,
                          const CoralOptions& opts) {
  if (source_cov.cols() != target.cols()) {
    throw ShapeError("fit_coral: source has " + std::to_string(source_cov.cols()) +
                     " columns, target has " + std::to_string(target.cols()));
  }
  if (target.rows() < 2) {
    throw DegenerateSampleError("fit_coral: need at least 2 rows in both source and target");
  }
  if (!(opts.lambda >= 0.0)) {
    throw ValidationError("fit_coral: lambda must be >= 0");
  }
  const auto d = source_cov.cols();
  const Matrix ident = Matrix::Identity(d, d);
  const Matrix cs = source_cov + opts.lambda * ident;
  const Matrix ct = sample_covariance(target, 1) + opts.lambda * ident;

  if (opts.lambda == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cs, Eigen::EigenvaluesOnly);
    const double top = solver.eigenvalues().maxCoeff();
    const double bottom = solver.eigenvalues().minCoeff();
    if (top <= 0.0 || bottom <= std::max(opts.eig_floor, 1e-12 * top)) {
      throw SingularityError(
          "fit_coral: source covariance is rank deficient; use a regularization lambda > 0");
    }
  }

  CoralMap map;
  map.transform = spd_power(cs, Power::kInvSqrt, opts.eig_floor) *
                  spd_power(ct, Power::kSqrt, opts.eig_floor);
  map.source_mean = std::move(source_mean);
  map.target_mean = column_means(target);
  map.lambda = opts.lambda;
  map.center_and_shift = opts.center_and_shift;
  return map;
}

}  // namespace

Vector weighted_means(const Matrix& x, std::span<const double> w) {
  check_weights(x, w, "weighted_means");
  const Eigen::Map<const Vector> wv(w.data(), static_cast<Eigen::Index>(w.size()));
  return (x.transpose() * wv) / wv.sum();
}

Matrix weighted_covariance(const Matrix& x, std::span<const double> w) {
  check_weights(x, w, "weighted_covariance");
  const Eigen::Map<const Vector> wv(w.data(), static_cast<Eigen::Index>(w.size()));
  const double v1 = wv.sum();
  const double v2 = wv.squaredNorm();
  const double denom = v1 - v2 / v1;
  if (!(denom > 0.0)) {
    throw DegenerateSampleError("weighted_covariance: weight mass sits on a single row");
  }
  const Vector mean = (x.transpose() * wv) / v1;
  const Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * wv.asDiagonal() * centered / denom;
  return 0.5 * (cov + cov.transpose());
}

CoralMap fit_coral(const Matrix& source, const Matrix& target, const CoralOptions& opts) {
  if (source.cols() != target.cols()) {
    throw ShapeError("fit_coral: source has " + std::to_string(source.cols()) +
                     " columns, target has " + std::to_string(target.cols()));
  }
  if (source.rows() < 2 || target.rows() < 2) {
    throw DegenerateSampleError("fit_coral: need at least 2 rows in both source and target");
  }
  return coral_from_stats(sample_covariance(source, 1), column_means(source), target, opts);
}

CoralMap fit_coral(const Matrix& source, std::span<const double> source_weights,
                   const Matrix& target, const CoralOptions& opts) {
  if (source.cols() != target.cols()) {
    throw ShapeError("fit_coral: source has " + std::to_string(source.cols()) +
                     " columns, target has " + std::to_string(target.cols()));
  }
  return coral_from_stats(weighted_covariance(source, source_weights),
                          weighted_means(source, source_weights), target, opts);
}

Matrix apply_coral(const CoralMap& map, const Matrix& x) {
  map.validate();
  if (x.cols() != map.order()) {
    throw ShapeError("apply_coral: input has " + std::to_string(x.cols()) +
                     " columns, map order is " + std::to_string(map.order()));
  }
  if (!map.center_and_shift) {
    return x * map.transform;
  }
  Matrix out = (x.rowwise() - map.source_mean.transpose()) * map.transform;
  out.rowwise() += map.target_mean.transpose();
  return out;
}

RowVector apply_coral(const CoralMap& map, const RowVector& x) {
  if (x.size() != map.order()) {
    throw ShapeError("apply_coral: input has " + std::to_string(x.size()) +
                     " entries, map order is " + std::to_string(map.order()));
  }
  if (!map.center_and_shift) {
    return x * map.transform;
  }
  return (x - map.source_mean.transpose()) * map.transform + map.target_mean.transpose();
}

double relative_frobenius(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("relative_frobenius: shape mismatch");
  }
  const double denom = b.norm();
  const double num = (a - b).norm();
  return denom == 0.0 ? num : num / denom;
}

}  // namespace jdapt::linalg
