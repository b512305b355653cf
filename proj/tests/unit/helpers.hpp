#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "jdapt/ingest.hpp"
#include "jdapt/linalg.hpp"

namespace testutil {

using jdapt::Matrix;
using jdapt::Vector;

inline Matrix gaussian(int n, int d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = nd(rng);
  return m;
}

// Two-pass covariance with explicit loops, independent of the library.
inline Matrix naive_covariance(const Matrix& x, int ddof = 1) {
  const auto n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) mean[j] += x(i, j);
  for (auto& v : mean) v /= static_cast<double>(n);
  Matrix c = Matrix::Zero(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
      c(a, b) = s / static_cast<double>(n - ddof);
    }
  return c;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

inline Matrix random_spd(int d, std::uint64_t seed) {
  Matrix a = gaussian(d, d, seed);
  return a * a.transpose() + d * Matrix::Identity(d, d);
}

inline jdapt::EmbeddingRecord make_record(const std::string& id, jdapt::Label label,
                                          std::vector<float> text,
                                          std::vector<std::vector<float>> frames,
                                          jdapt::Domain domain = jdapt::Domain::kGeneral) {
  jdapt::EmbeddingRecord r;
  r.id = id;
  r.label = label;
  r.domain = domain;
  r.text_embedding = std::move(text);
  r.frame_embeddings = std::move(frames);
  return r;
}

inline jdapt::Dataset random_dataset(int n, int d, int m, std::uint64_t seed,
                                     jdapt::Domain domain = jdapt::Domain::kGeneral) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  jdapt::Dataset ds;
  ds.dim = d;
  for (int i = 0; i < n; ++i) {
    std::vector<float> t(d);
    for (auto& v : t) v = nd(rng);
    std::vector<std::vector<float>> f(m, std::vector<float>(d));
    for (auto& fr : f)
      for (auto& v : fr) v = nd(rng);
    ds.records.push_back(make_record("r" + std::to_string(i),
                                     i % 2 ? jdapt::Label::kUnsafe : jdapt::Label::kSafe,
                                     std::move(t), std::move(f), domain));
  }
  return ds;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("jdapt_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testutil
