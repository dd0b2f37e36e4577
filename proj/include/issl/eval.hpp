// Depth evaluation: the standard error/accuracy metrics with optional
// global median scaling and depth caps, prediction post-processing, and the
// static/dynamic + shape/translation error decomposition.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "issl/types.hpp"
#include "json.hpp"

namespace issl::eval {

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rms = 0.0;
  double rms_log = 0.0;
  double a1 = 0.0;  // fraction with max(p/g, g/p) strictly below 1.25
  double a2 = 0.0;  // ... 1.25^2
  double a3 = 0.0;  // ... 1.25^3
  double scale_factor = 1.0;
  std::int64_t pixel_count = 0;
};

struct MetricOptions {
  double d_min = 1e-3;  // evaluation floor, meters
  double d_max = 80.0;  // cap; 70 is the Make3D-style convention
  bool median_scale = true;
};

/// Pixels enter the evaluation when the mask is set and gt lies in
/// (d_min, d_max]. The prediction is optionally median-scaled by a single
/// global factor, then clamped to [d_min, d_max]. Throws
/// DegenerateInputError when nothing qualifies.
DepthMetrics compute_metrics(const DepthMap& pred, const DepthMap& gt, const ValidityMask& valid,
                             const MetricOptions& opt);

/// Blend of a prediction and the un-flipped prediction of the mirrored
/// input. Within 5% of the left edge the mirrored branch wins, within 5%
/// of the right edge the direct branch wins, linear 20x ramps in between,
/// and the 50/50 mean elsewhere (per-column weights, see the ramp in the
/// implementation).
DepthMap post_process(const DepthMap& pred, const DepthMap& pred_of_flipped);

struct RegionMetrics {
  std::optional<DepthMetrics> static_region;   // absent when the region is empty
  std::optional<DepthMetrics> dynamic_region;
};

/// compute_metrics restricted to the static (instance id 0) and dynamic
/// (any nonzero id) partitions of the valid set.
RegionMetrics static_dynamic_report(const DepthMap& pred, const DepthMap& gt,
                                    const ValidityMask& valid, const std::vector<int>& instance_ids,
                                    const MetricOptions& opt);

struct TranslationError {
  // Per-metric whole minus shape; the convention used for Table-style
  // reporting of the translation row.
  DepthMetrics difference;
  // The same quantity measured directly on the correction field
  // |pred - aligned| against gt (only the metrics that make sense there).
  double residual_abs_rel = 0.0;
  double residual_sq_rel = 0.0;
  double residual_rms = 0.0;
};

struct RegionDecomposition {
  DepthMetrics whole;
  DepthMetrics shape;  // after instance-wise median alignment
  TranslationError translation;
};

struct DecompositionReport {
  std::optional<RegionDecomposition> static_region;
  std::optional<RegionDecomposition> dynamic_region;
  double scale_factor = 1.0;  // the single global factor applied before regions
};

/// Error decomposition: one global median scaling, then per region the
/// plain metrics (whole), the metrics after aligning each instance's
/// median to its GT median (shape; the static region counts as one
/// instance), and the translation remainder in both conventions.
DecompositionReport decompose_errors(const DepthMap& pred, const DepthMap& gt,
                                     const ValidityMask& valid,
                                     const std::vector<int>& instance_ids,
                                     const MetricOptions& opt);

nlohmann::json metrics_to_json(const DepthMetrics& m);
nlohmann::json decomposition_to_json(const DecompositionReport& report);

}  // namespace issl::eval
