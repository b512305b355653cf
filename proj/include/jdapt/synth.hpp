#pragma once

#include <cstdint>
#include <string>

#include "jdapt/ingest.hpp"

namespace jdapt::synth {

enum class ScenarioKind { kCovariateShift, kInteractionLabel, kConflictingConcept };

const char* to_string(ScenarioKind k);
ScenarioKind scenario_from_string(const std::string& s);

/// Samples live in a latent space of width 2d: the first d coordinates are
/// the text embedding, the last d are the image content shared by all
/// frames. Each frame adds its own Gaussian noise on top.
struct SynthScenario {
  ScenarioKind kind = ScenarioKind::kCovariateShift;
  int d = 16;
  int m = 2;
  std::size_t n_general = 4000;
  std::size_t n_target_benign = 1000;
  std::size_t n_target_test = 1000;
  /// Target = recolor * z + mean_offset, latent coordinates. Empty means
  /// no offset / identity.
  Vector mean_offset;
  Matrix recolor;
  double flip_fraction = 0.0;
  /// Distance flipped samples are pushed along the label direction, in
  /// units of the per-coordinate noise scale.
  double displacement = 6.0;
  double class_separation = 1.5;
  double frame_noise = 0.1;
  std::uint64_t seed = 0;

  int latent_dim() const { return 2 * d; }
  void validate() const;
};

/// Defaults for a kind. covariate_shift gets an offset of `offset_scale`
/// along the label direction and an anisotropic recolor that leaves the
/// label structure alone; conflicting_concept gets flip fraction 0.3.
SynthScenario default_scenario(ScenarioKind kind, std::uint64_t seed = 0,
                               double offset_scale = 4.0);

/// The planted directions for a scenario, derived from its seed.
struct LatentBasis {
  Matrix rotation;  // rows are orthonormal directions
  Vector label_dir;
  Vector text_dir;
  Vector image_dir;
};
LatentBasis latent_basis(int d, std::uint64_t seed);

/// Scale factors in [lo, hi] (log-uniform) on every direction except the
/// first `keep` rows of the basis.
Matrix anisotropic_recolor(const LatentBasis& basis, int keep, double lo, double hi,
                           std::uint64_t seed);

struct SynthData {
  Dataset general;
  Dataset target_benign;  // safe only
  Dataset target_test;    // exactly half safe, half unsafe (extra one unsafe when odd)
};

SynthData generate(const SynthScenario& sc);

}  // namespace jdapt::synth
