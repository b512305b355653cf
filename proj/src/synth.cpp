#include "jdapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "jdapt/errors.hpp"
#include "jdapt/neural.hpp"

namespace jdapt::synth {

namespace {

using Rng = std::mt19937_64;

// Independent streams per purpose so that changing one count does not
// reshuffle the others.
Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

Vector gaussian(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

struct Draw {
  Vector z;
  int unsafe = 0;
};

class Sampler {
 public:
  Sampler(const SynthScenario& sc, LatentBasis basis) : sc_(sc), basis_(std::move(basis)) {}

  Draw general(Rng& rng) const {
    std::bernoulli_distribution coin(0.5);
    Draw d;
    d.z = gaussian(sc_.latent_dim(), rng);
    const double s = sc_.class_separation;
    if (sc_.kind == ScenarioKind::kInteractionLabel) {
      d.z += (coin(rng) ? s : -s) * basis_.text_dir;
      d.z += (coin(rng) ? s : -s) * basis_.image_dir;
      d.unsafe = basis_.text_dir.dot(d.z) * basis_.image_dir.dot(d.z) > 0.0 ? 1 : 0;
      return d;
    }
    const bool y = coin(rng);
    const bool c = coin(rng);
    // Two sub-clusters per class along a class-specific direction, so the
    // class covariance is not isotropic.
    const Vector q = basis_.rotation.row(y ? 2 : 1).transpose();
    d.z += (y ? s : -s) * basis_.label_dir + (c ? s : -s) * q;
    d.unsafe = basis_.label_dir.dot(d.z) > 0.0 ? 1 : 0;
    return d;
  }

  Draw target(Rng& rng) const {
    Draw d = general(rng);
    if (sc_.recolor.size() > 0) d.z = sc_.recolor * d.z;
    if (sc_.mean_offset.size() > 0) d.z += sc_.mean_offset;
    return d;
  }

  EmbeddingRecord record(const Draw& draw, std::string id, Domain domain, Rng& rng) const {
    EmbeddingRecord rec;
    rec.id = std::move(id);
    rec.domain = domain;
    rec.label = draw.unsafe ? Label::kUnsafe : Label::kSafe;
    const auto d = static_cast<Eigen::Index>(sc_.d);
    rec.text_embedding.resize(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) {
      rec.text_embedding[static_cast<std::size_t>(i)] = static_cast<float>(draw.z(i));
    }
    std::normal_distribution<double> nd(0.0, sc_.frame_noise);
    for (int f = 0; f < sc_.m; ++f) {
      std::vector<float> frame(static_cast<std::size_t>(d));
      for (Eigen::Index i = 0; i < d; ++i) {
        frame[static_cast<std::size_t>(i)] = static_cast<float>(draw.z(d + i) + nd(rng));
      }
      rec.frame_embeddings.push_back(std::move(frame));
    }
    return rec;
  }

  const LatentBasis& basis() const { return basis_; }

 private:
  const SynthScenario& sc_;
  LatentBasis basis_;
};

std::string make_id(const char* prefix, std::size_t i) {
  std::string n = std::to_string(i);
  if (n.size() < 6) n.insert(0, 6 - n.size(), '0');
  return std::string(prefix) + "-" + n;
}

Dataset empty_dataset(const SynthScenario& sc, const char* part) {
  Dataset ds;
  ds.dim = static_cast<std::size_t>(sc.d);
  ds.provenance.push_back(std::string("synth:") + to_string(sc.kind) + ":" + part +
                          ":seed=" + std::to_string(sc.seed));
  return ds;
}

std::size_t attempt_budget(std::size_t wanted) { return 1000 * wanted + 1000; }

}  // namespace

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kCovariateShift: return "covariate_shift";
    case ScenarioKind::kInteractionLabel: return "interaction_label";
    case ScenarioKind::kConflictingConcept: return "conflicting_concept";
  }
  return "?";
}

ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "covariate_shift") return ScenarioKind::kCovariateShift;
  if (s == "interaction_label") return ScenarioKind::kInteractionLabel;
  if (s == "conflicting_concept") return ScenarioKind::kConflictingConcept;
  throw ValidationError("unknown scenario '" + s + "'");
}

void SynthScenario::validate() const {
  if (d < 2) throw ValidationError("scenario: d must be >= 2");
  if (m < 1) throw ValidationError("scenario: m must be >= 1");
  if (n_general < 1 || n_target_benign < 1 || n_target_test < 1) {
    throw ValidationError("scenario: sample counts must be >= 1");
  }
  if (!(flip_fraction >= 0.0 && flip_fraction <= 1.0)) {
    throw ValidationError("scenario: flip fraction must be in [0, 1], got " +
                          std::to_string(flip_fraction));
  }
  if (!(std::isfinite(displacement) && displacement >= 0.0)) {
    throw ValidationError("scenario: displacement must be finite and >= 0");
  }
  if (!(std::isfinite(class_separation) && class_separation >= 0.0)) {
    throw ValidationError("scenario: class separation must be finite and >= 0");
  }
  if (!(std::isfinite(frame_noise) && frame_noise >= 0.0)) {
    throw ValidationError("scenario: frame noise must be finite and >= 0");
  }
  const auto w = static_cast<Eigen::Index>(latent_dim());
  if (mean_offset.size() != 0 && mean_offset.size() != w) {
    throw ShapeError("scenario: mean offset needs " + std::to_string(w) + " entries");
  }
  if (recolor.size() != 0 && (recolor.rows() != w || recolor.cols() != w)) {
    throw ShapeError("scenario: recolor must be " + std::to_string(w) + "x" + std::to_string(w));
  }
  if (!mean_offset.allFinite() || !recolor.allFinite()) {
    throw ValidationError("scenario: shift parameters must be finite");
  }
}

LatentBasis latent_basis(int d, std::uint64_t seed) {
  if (d < 2) throw ValidationError("latent_basis: d must be >= 2");
  Rng rng = stream(seed, 1);
  const Eigen::Index w = 2 * d;
  Matrix g(w, w);
  for (Eigen::Index i = 0; i < w; ++i) g.row(i) = gaussian(w, rng).transpose();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ();
  LatentBasis b;
  b.rotation = q.transpose();
  b.label_dir = b.rotation.row(0).transpose();
  b.text_dir = Vector::Zero(w);
  b.image_dir = Vector::Zero(w);
  b.text_dir.head(d) = gaussian(d, rng).normalized();
  b.image_dir.tail(d) = gaussian(d, rng).normalized();
  return b;
}

Matrix anisotropic_recolor(const LatentBasis& basis, int keep, double lo, double hi,
                           std::uint64_t seed) {
  if (!(lo > 0.0 && lo <= hi)) throw ValidationError("anisotropic_recolor: need 0 < lo <= hi");
  Rng rng = stream(seed, 2);
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  const Eigen::Index w = basis.rotation.rows();
  Vector scale = Vector::Ones(w);
  for (Eigen::Index i = keep; i < w; ++i) scale(i) = std::exp(u(rng));
  return basis.rotation.transpose() * scale.asDiagonal() * basis.rotation;
}

SynthScenario default_scenario(ScenarioKind kind, std::uint64_t seed, double offset_scale) {
  SynthScenario sc;
  sc.kind = kind;
  sc.seed = seed;
  if (kind == ScenarioKind::kCovariateShift) {
    const LatentBasis b = latent_basis(sc.d, seed);
    sc.mean_offset = offset_scale * b.label_dir;
    // The label direction and both cluster axes keep their scale.
    sc.recolor = anisotropic_recolor(b, 3, 0.4, 2.5, seed);
  } else if (kind == ScenarioKind::kConflictingConcept) {
    sc.flip_fraction = 0.3;
  }
  return sc;
}

SynthData generate(const SynthScenario& sc) {
  sc.validate();
  const Sampler sampler(sc, latent_basis(sc.d, sc.seed));
  SynthData out;

  {
    Rng rng = stream(sc.seed, 10);
    std::vector<Draw> draws;
    draws.reserve(sc.n_general);
    for (std::size_t i = 0; i < sc.n_general; ++i) draws.push_back(sampler.general(rng));

    const auto n_flip = static_cast<std::size_t>(
        std::floor(sc.flip_fraction * static_cast<double>(sc.n_general) + 0.5));
    auto order = neural::shuffled_indices(sc.n_general, rng);
    std::vector<char> flipped(sc.n_general, 0);
    for (std::size_t k = 0; k < n_flip; ++k) flipped[order[k]] = 1;

    out.general = empty_dataset(sc, "general");
    for (std::size_t i = 0; i < sc.n_general; ++i) {
      Draw& dr = draws[i];
      if (flipped[i]) {
        // Pushed away from the decision boundary, then given the opposite label.
        dr.z += (dr.unsafe ? sc.displacement : -sc.displacement) * sampler.basis().label_dir;
        dr.unsafe = 1 - dr.unsafe;
      }
      auto rec = sampler.record(dr, make_id("g", i), Domain::kGeneral, rng);
      if (flipped[i]) rec.meta["flipped"] = "1";
      out.general.records.push_back(std::move(rec));
    }
  }

  {
    Rng rng = stream(sc.seed, 11);
    out.target_benign = empty_dataset(sc, "target_benign");
    std::size_t attempts = 0;
    while (out.target_benign.size() < sc.n_target_benign) {
      if (++attempts > attempt_budget(sc.n_target_benign)) {
        throw ValidationError("scenario produces too few safe target samples");
      }
      const Draw dr = sampler.target(rng);
      if (dr.unsafe) continue;
      out.target_benign.records.push_back(sampler.record(
          dr, make_id("tb", out.target_benign.size()), Domain::kTarget, rng));
    }
  }

  {
    Rng rng = stream(sc.seed, 12);
    out.target_test = empty_dataset(sc, "target_test");
    std::size_t quota[2] = {sc.n_target_test / 2, sc.n_target_test - sc.n_target_test / 2};
    std::size_t attempts = 0;
    while (quota[0] + quota[1] > 0) {
      if (++attempts > attempt_budget(sc.n_target_test)) {
        throw ValidationError("scenario cannot fill a balanced target test set");
      }
      const Draw dr = sampler.target(rng);
      if (quota[dr.unsafe] == 0) continue;
      --quota[dr.unsafe];
      out.target_test.records.push_back(
          sampler.record(dr, make_id("tt", out.target_test.size()), Domain::kTarget, rng));
    }
  }
  return out;
}

}  // namespace jdapt::synth
