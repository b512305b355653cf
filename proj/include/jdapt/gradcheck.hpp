#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jdapt/neural.hpp"

namespace jdapt::gradcheck {

struct ArchitectureCheck {
  std::string name;
  std::string loss;
  std::size_t parameters = 0;
  neural::GradCheckResult result;
};

struct Shapes {
  int embed_dim = 16;
  int heads = 4;
  int frames = 2;
  int samples = 8;
  std::vector<int> domain_hidden{64};
  std::vector<int> detector_hidden{256};
};

/// Checks the three trainable pieces at their pipeline shapes on seeded
/// random inputs: fusion attention (MSE), domain classifier (BCE) and
/// detector (weighted cross-entropy).
std::vector<ArchitectureCheck> check_all(const Shapes& shapes, std::uint64_t seed,
                                         const neural::GradCheckOptions& opts);

}  // namespace jdapt::gradcheck
