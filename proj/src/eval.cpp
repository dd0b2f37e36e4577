#include "issl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "issl/errors.hpp"
#include "issl/losses.hpp"

namespace issl::eval {

namespace {

void check_aligned(const DepthMap& pred, const DepthMap& gt, const ValidityMask& valid) {
  if (pred.width != gt.width || pred.height != gt.height || valid.width != gt.width ||
      valid.height != gt.height) {
    throw ValidationError(fmt::format("evaluation inputs disagree on shape: pred {}x{}, gt {}x{}",
                                      pred.width, pred.height, gt.width, gt.height));
  }
}

bool in_eval_set(const DepthMap& gt, const ValidityMask& valid, size_t i,
                 const MetricOptions& opt) {
  return valid.values[i] != 0 && gt.values[i] > opt.d_min && gt.values[i] <= opt.d_max;
}

/// Metrics over explicit pixel index lists; pred must already be scaled
/// and clamped by the caller.
DepthMetrics metrics_over(const std::vector<double>& pred, const std::vector<double>& gt) {
  DepthMetrics m;
  m.pixel_count = static_cast<std::int64_t>(pred.size());
  const double n = static_cast<double>(pred.size());
  double sq_sum = 0.0, log_sq_sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], g = gt[i];
    const double diff = p - g;
    m.abs_rel += std::abs(diff) / g;
    m.sq_rel += diff * diff / g;
    sq_sum += diff * diff;
    const double log_diff = std::log(p) - std::log(g);
    log_sq_sum += log_diff * log_diff;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) m.a1 += 1.0;
    if (ratio < 1.25 * 1.25) m.a2 += 1.0;
    if (ratio < 1.25 * 1.25 * 1.25) m.a3 += 1.0;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rms = std::sqrt(sq_sum / n);
  m.rms_log = std::sqrt(log_sq_sum / n);
  m.a1 /= n;
  m.a2 /= n;
  m.a3 /= n;
  return m;
}

struct ScaledPrediction {
  std::vector<double> values;  // full raster, scaled then clamped
  double factor = 1.0;
};

ScaledPrediction scale_and_clamp(const DepthMap& pred, const DepthMap& gt,
                                 const ValidityMask& valid, const MetricOptions& opt) {
  std::vector<double> pred_sel, gt_sel;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (!in_eval_set(gt, valid, i, opt)) continue;
    pred_sel.push_back(pred.values[i]);
    gt_sel.push_back(gt.values[i]);
  }
  if (pred_sel.empty()) {
    throw DegenerateInputError("no pixels qualify for evaluation (mask and depth caps)");
  }

  ScaledPrediction out;
  if (opt.median_scale) {
    const double pred_median = losses::lower_median(std::move(pred_sel));
    if (pred_median == 0.0) throw DegenerateInputError("prediction median is zero");
    out.factor = losses::lower_median(std::move(gt_sel)) / pred_median;
  }
  out.values.resize(pred.values.size());
  for (size_t i = 0; i < pred.values.size(); ++i) {
    out.values[i] = std::clamp(pred.values[i] * out.factor, opt.d_min, opt.d_max);
  }
  return out;
}

DepthMetrics metrics_for_indices(const std::vector<double>& scaled_pred, const DepthMap& gt,
                                 const std::vector<size_t>& indices, double factor) {
  std::vector<double> p, g;
  p.reserve(indices.size());
  g.reserve(indices.size());
  for (size_t i : indices) {
    p.push_back(scaled_pred[i]);
    g.push_back(gt.values[i]);
  }
  DepthMetrics m = metrics_over(p, g);
  m.scale_factor = factor;
  return m;
}

}  // namespace

DepthMetrics compute_metrics(const DepthMap& pred, const DepthMap& gt, const ValidityMask& valid,
                             const MetricOptions& opt) {
  check_aligned(pred, gt, valid);
  const ScaledPrediction scaled = scale_and_clamp(pred, gt, valid, opt);

  std::vector<size_t> indices;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (in_eval_set(gt, valid, i, opt)) indices.push_back(i);
  }
  return metrics_for_indices(scaled.values, gt, indices, scaled.factor);
}

DepthMap post_process(const DepthMap& pred, const DepthMap& pred_of_flipped) {
  if (pred.width != pred_of_flipped.width || pred.height != pred_of_flipped.height) {
    throw ValidationError("post_process inputs must share dimensions");
  }
  if (pred.width < 2) throw ValidationError("post_process needs at least two columns");

  const int w = pred.width, h = pred.height;
  DepthMap out(w, h);
  for (int x = 0; x < w; ++x) {
    // Ramp of the reference post-processing scheme: full weight to the
    // mirrored branch over the left 5% of columns, fading out by 10%.
    const double pos = static_cast<double>(x) / (w - 1);
    const double l_mask = 1.0 - std::clamp(20.0 * (pos - 0.05), 0.0, 1.0);
    const double pos_mirror = static_cast<double>(w - 1 - x) / (w - 1);
    const double r_mask = 1.0 - std::clamp(20.0 * (pos_mirror - 0.05), 0.0, 1.0);
    const double mean_w = 1.0 - l_mask - r_mask;
    for (int y = 0; y < h; ++y) {
      const double direct = pred.at(x, y);
      const double mirrored = pred_of_flipped.at(w - 1 - x, y);
      out.at(x, y) = r_mask * direct + l_mask * mirrored + mean_w * 0.5 * (direct + mirrored);
    }
  }
  return out;
}

RegionMetrics static_dynamic_report(const DepthMap& pred, const DepthMap& gt,
                                    const ValidityMask& valid, const std::vector<int>& instance_ids,
                                    const MetricOptions& opt) {
  check_aligned(pred, gt, valid);
  if (instance_ids.size() != gt.values.size()) {
    throw ValidationError("instance map does not match the raster");
  }

  auto region_mask = [&](bool dynamic) {
    ValidityMask mask(valid.width, valid.height);
    for (size_t i = 0; i < instance_ids.size(); ++i) {
      mask.values[i] = valid.values[i] && ((instance_ids[i] != 0) == dynamic);
    }
    return mask;
  };

  RegionMetrics out;
  for (bool dynamic : {false, true}) {
    const ValidityMask mask = region_mask(dynamic);
    std::int64_t usable = 0;
    for (size_t i = 0; i < mask.values.size(); ++i) {
      if (in_eval_set(gt, mask, i, opt)) ++usable;
    }
    if (usable == 0) continue;  // region reported as absent
    DepthMetrics m = compute_metrics(pred, gt, mask, opt);
    (dynamic ? out.dynamic_region : out.static_region) = m;
  }
  return out;
}

DecompositionReport decompose_errors(const DepthMap& pred, const DepthMap& gt,
                                     const ValidityMask& valid,
                                     const std::vector<int>& instance_ids,
                                     const MetricOptions& opt) {
  check_aligned(pred, gt, valid);
  if (instance_ids.size() != gt.values.size()) {
    throw ValidationError("instance map does not match the raster");
  }

  // One global scaling for everything downstream; regions then see a fixed
  // prediction.
  const ScaledPrediction scaled = scale_and_clamp(pred, gt, valid, opt);

  // Instance-wise median alignment. Label 0 (all static pixels) counts as
  // a single instance.
  std::map<int, std::vector<size_t>> groups;
  std::vector<size_t> eval_indices;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (!in_eval_set(gt, valid, i, opt)) continue;
    eval_indices.push_back(i);
    groups[instance_ids[i]].push_back(i);
  }
  if (eval_indices.empty()) throw DegenerateInputError("no pixels qualify for evaluation");

  std::vector<double> aligned = scaled.values;
  for (const auto& [label, indices] : groups) {
    std::vector<double> p, g;
    for (size_t i : indices) {
      p.push_back(scaled.values[i]);
      g.push_back(gt.values[i]);
    }
    const double ratio = losses::lower_median(std::move(g)) / losses::lower_median(std::move(p));
    for (size_t i : indices) aligned[i] = scaled.values[i] * ratio;
  }

  auto region_report = [&](bool dynamic) -> std::optional<RegionDecomposition> {
    std::vector<size_t> indices;
    for (size_t i : eval_indices) {
      if ((instance_ids[i] != 0) == dynamic) indices.push_back(i);
    }
    if (indices.empty()) return std::nullopt;

    RegionDecomposition r;
    r.whole = metrics_for_indices(scaled.values, gt, indices, scaled.factor);
    r.shape = metrics_for_indices(aligned, gt, indices, scaled.factor);

    r.translation.difference.abs_rel = r.whole.abs_rel - r.shape.abs_rel;
    r.translation.difference.sq_rel = r.whole.sq_rel - r.shape.sq_rel;
    r.translation.difference.rms = r.whole.rms - r.shape.rms;
    r.translation.difference.rms_log = r.whole.rms_log - r.shape.rms_log;
    r.translation.difference.a1 = r.whole.a1 - r.shape.a1;
    r.translation.difference.a2 = r.whole.a2 - r.shape.a2;
    r.translation.difference.a3 = r.whole.a3 - r.shape.a3;
    r.translation.difference.scale_factor = scaled.factor;
    r.translation.difference.pixel_count = static_cast<std::int64_t>(indices.size());

    double abs_sum = 0.0, sq_rel_sum = 0.0, sq_sum = 0.0;
    for (size_t i : indices) {
      const double res = std::abs(scaled.values[i] - aligned[i]);
      abs_sum += res / gt.values[i];
      sq_rel_sum += res * res / gt.values[i];
      sq_sum += res * res;
    }
    const double n = static_cast<double>(indices.size());
    r.translation.residual_abs_rel = abs_sum / n;
    r.translation.residual_sq_rel = sq_rel_sum / n;
    r.translation.residual_rms = std::sqrt(sq_sum / n);
    return r;
  };

  DecompositionReport report;
  report.scale_factor = scaled.factor;
  report.static_region = region_report(false);
  report.dynamic_region = region_report(true);
  return report;
}

nlohmann::json metrics_to_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel},   {"rms", m.rms},
          {"rms_log", m.rms_log}, {"a1", m.a1},           {"a2", m.a2},
          {"a3", m.a3},           {"scale_factor", m.scale_factor},
          {"pixel_count", m.pixel_count}};
}

nlohmann::json decomposition_to_json(const DecompositionReport& report) {
  auto region_json = [](const std::optional<RegionDecomposition>& r) -> nlohmann::json {
    if (!r) return nullptr;
    return {{"whole", metrics_to_json(r->whole)},
            {"shape", metrics_to_json(r->shape)},
            {"translation",
             {{"difference", metrics_to_json(r->translation.difference)},
              {"residual_abs_rel", r->translation.residual_abs_rel},
              {"residual_sq_rel", r->translation.residual_sq_rel},
              {"residual_rms", r->translation.residual_rms}}}};
  };
  return {{"scale_factor", report.scale_factor},
          {"static", region_json(report.static_region)},
          {"dynamic", region_json(report.dynamic_region)}};
}

}  // namespace issl::eval
