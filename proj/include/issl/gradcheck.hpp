// Finite-difference verification registry: one named check per
// differentiable operation, graph composition, and loss term, ending with
// the full training objective. Checks run at float64 on small pinned
// inputs chosen away from the documented non-differentiable points (|x|
// kinks, min ties, clamp edges, bilinear cell boundaries); quantities the
// training step treats as data (masks, self-samples, median factors) are
// pinned to the unperturbed forward pass, which is exactly the function
// the backward pass differentiates.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "issl/autodiff.hpp"

namespace issl::gradcheck {

struct CheckReport {
  std::string name;
  ad::GradCheckResult result;
};

/// Every registered check, evaluated on inputs derived from `seed`.
std::vector<CheckReport> run_all(std::uint64_t seed);

/// Convenience for multi-seed sweeps: the per-check worst case across
/// master seeds [0, seeds).
std::vector<CheckReport> run_seeds(int seeds);

}  // namespace issl::gradcheck
