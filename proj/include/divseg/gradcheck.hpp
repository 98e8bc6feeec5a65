#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divseg/nn.hpp"

namespace divseg {

// Finite-difference checks of the hand-derived gradients, run in double
// precision on small random problems.
struct GradCheckCase {
  std::string loss;  // "pixel_bce", "global_bce" or "masked_ce"
  size_t instance = 0;
  GradCheckResult result;
};

struct GradCheckSuite {
  std::vector<GradCheckCase> cases;
  double max_rel_error() const;
};

/// For each instance: a random two-layer net on a random grid with unique
/// pooling argmaxes, checked under both pooled log-losses (all parameters),
/// and random logits with a random label subset for the masked
/// cross-entropy (all logits).
GradCheckSuite run_gradient_checks(uint64_t seed, size_t instances);

}  // namespace divseg
