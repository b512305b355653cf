#pragma once

#include <span>

#include <Eigen/Dense>

namespace jdapt {

/// Dense double-precision matrix, row-major so that one sample is one
/// contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace linalg {

/// Column covariance of X about its column means, divided by n - ddof.
/// Throws DegenerateSampleError when n < ddof + 1.
Matrix sample_covariance(const Matrix& x, int ddof = 1);

Vector column_means(const Matrix& x);

/// Weighted column means and covariance with reliability weights: the
/// normalizer is V1 - V2 / V1, so unit weights reproduce ddof = 1. Weights
/// must be finite and non-negative with a positive sum.
Vector weighted_means(const Matrix& x, std::span<const double> w);
Matrix weighted_covariance(const Matrix& x, std::span<const double> w);

enum class Power { kSqrt, kInvSqrt };

/// Symmetric matrix power V diag(max(l, eig_floor)^p) V^T.
///
/// A must be symmetric to within 1e-9 (scaled by its largest entry); it is
/// symmetrized before decomposition. The inverse square root of a matrix with
/// a non-positive floored eigenvalue raises SingularityError.
Matrix spd_power(const Matrix& a, Power p, double eig_floor = 1e-10);

/// Linear covariance-alignment map between a source and a target sample.
struct CoralMap {
  Matrix transform;
  Vector source_mean;
  Vector target_mean;
  double lambda = 1.0;
  bool center_and_shift = true;

  Eigen::Index order() const { return transform.rows(); }
  void validate() const;
};

struct CoralOptions {
  double lambda = 1.0;
  bool center_and_shift = true;
  double eig_floor = 1e-10;
};

/// transform = (C_s + lambda I)^(-1/2) (C_t + lambda I)^(1/2) with unbiased
/// covariances. With lambda = 0 a rank-deficient source covariance is an
/// error rather than silently floored.
CoralMap fit_coral(const Matrix& source, const Matrix& target, const CoralOptions& opts = {});

/// Same, with per-row weights on the source statistics.
CoralMap fit_coral(const Matrix& source, std::span<const double> source_weights,
                   const Matrix& target, const CoralOptions& opts = {});

/// Rows mapped as (x - source_mean) T + target_mean, or x T when the map
/// does not center.
Matrix apply_coral(const CoralMap& map, const Matrix& x);
RowVector apply_coral(const CoralMap& map, const RowVector& x);

/// ||a - b||_F / ||b||_F.
double relative_frobenius(const Matrix& a, const Matrix& b);

}  // namespace linalg
}  // namespace jdapt
