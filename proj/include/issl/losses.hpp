// Loss terms for the self-supervised objective: photometric error with a
// per-pixel minimum over source views and auto-masking, edge-aware
// smoothness on mean-normalized inverse depth, and the geometric
// self-sample consistency loss with median scaling.
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "issl/autodiff.hpp"
#include "issl/errors.hpp"

namespace issl::losses {

struct LossWeights {
  double lambda1 = 1.0;    // photometric
  double lambda2 = 0.001;  // smoothness
  double lambda3 = 0.1;    // self-sample consistency
  double alpha = 0.15;     // L1 share of the photometric term

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
      throw ValidationError("loss weights must be nonnegative");
    }
    if (alpha < 0 || alpha > 1) throw ValidationError("alpha must lie in [0,1]");
  }
};

// SSIM stabilizers for images in [0,1].
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean over the leading (channel) axis: (C,H,W) -> (H,W).
template <typename T>
ad::Tensor<T> channel_mean(const ad::Tensor<T>& x) {
  if (x.shape().size() != 3) throw ValidationError("channel_mean: expected (C,H,W)");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  ad::Tensor<T> acc = ad::reshape(ad::slice(x, {0, 0, 0}, {1, h, w}), {h, w});
  for (int i = 1; i < c; ++i) {
    acc = acc + ad::reshape(ad::slice(x, {i, 0, 0}, {1, h, w}), {h, w});
  }
  return acc / static_cast<T>(c);
}

namespace detail {

// 3x3 uniform box filter with reflection padding, one channel.
template <typename T>
ad::Tensor<T> box3(const ad::Tensor<T>& plane_1hw) {
  ad::Tape<T>& tape = *plane_1hw.tape();
  auto weight = tape.constant({1, 1, 3, 3}, std::vector<T>(9, T(1) / T(9)));
  auto bias = tape.constant({1}, {T(0)});
  return ad::conv2d(plane_1hw, weight, bias, 1, ad::Padding::kReflect);
}

template <typename T>
void check_image_pair(const ad::Tensor<T>& a, const ad::Tensor<T>& b, const char* name) {
  if (a.shape().size() != 3 || a.shape() != b.shape()) {
    throw ValidationError(fmt::format("{}: expected two matching (C,H,W) images", name));
  }
}

}  // namespace detail

/// Per-pixel channel-mean absolute difference: (C,H,W)^2 -> (H,W).
template <typename T>
ad::Tensor<T> l1_map(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  detail::check_image_pair(a, b, "l1_map");
  return channel_mean(ad::abs(a - b));
}

/// (1 - SSIM)/2 per pixel, channel-averaged. SSIM statistics come from a
/// 3x3 uniform box filter with reflection padding.
template <typename T>
ad::Tensor<T> ssim_map(const ad::Tensor<T>& a, const ad::Tensor<T>& b) {
  detail::check_image_pair(a, b, "ssim_map");
  const int c = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  ad::Tensor<T> acc;
  for (int ch = 0; ch < c; ++ch) {
    auto ac = ad::slice(a, {ch, 0, 0}, {1, h, w});
    auto bc = ad::slice(b, {ch, 0, 0}, {1, h, w});
    auto mu_a = detail::box3(ac);
    auto mu_b = detail::box3(bc);
    auto sigma_a = detail::box3(ac * ac) - mu_a * mu_a;
    auto sigma_b = detail::box3(bc * bc) - mu_b * mu_b;
    auto sigma_ab = detail::box3(ac * bc) - mu_a * mu_b;
    auto numer = (T(2) * (mu_a * mu_b) + T(kSsimC1)) * (T(2) * sigma_ab + T(kSsimC2));
    auto denom = (mu_a * mu_a + mu_b * mu_b + T(kSsimC1)) * (sigma_a + sigma_b + T(kSsimC2));
    auto dissim = (T(1) - numer / denom) * T(0.5);
    acc = ch == 0 ? dissim : acc + dissim;
  }
  return ad::reshape(acc / static_cast<T>(c), {h, w});
}

/// alpha * L1 + (1 - alpha) * SSIM dissimilarity, per pixel.
template <typename T>
ad::Tensor<T> photometric_map(const ad::Tensor<T>& warped, const ad::Tensor<T>& target,
                              double alpha) {
  auto l1 = l1_map(warped, target);
  if (alpha >= 1.0) return l1;
  auto ssim = ssim_map(warped, target);
  if (alpha <= 0.0) return ssim;
  return l1 * static_cast<T>(alpha) + ssim * static_cast<T>(1.0 - alpha);
}

/// Elementwise minimum across per-source maps; ties keep the earliest
/// source's gradient.
template <typename T>
ad::Tensor<T> min_reprojection(const std::vector<ad::Tensor<T>>& maps) {
  if (maps.empty()) throw ValidationError("min_reprojection: no maps");
  ad::Tensor<T> acc = maps[0];
  for (size_t i = 1; i < maps.size(); ++i) acc = ad::min_elementwise(acc, maps[i]);
  return acc;
}

/// Evaluates photometric maps of raw (unwarped) sources against the target
/// on a scratch tape, returning plain values. Used by the auto-mask, which
/// is a constant in backpropagation.
template <typename T>
std::vector<std::vector<T>> unwarped_photometric_values(const std::vector<T>& target,
                                                        const std::vector<std::vector<T>>& sources,
                                                        int channels, int h, int w, double alpha) {
  std::vector<std::vector<T>> out;
  out.reserve(sources.size());
  for (const auto& src : sources) {
    ad::Tape<T> tape;
    auto t_src = tape.constant({channels, h, w}, src);
    auto t_tgt = tape.constant({channels, h, w}, target);
    out.push_back(photometric_map(t_src, t_tgt, alpha).values());
  }
  return out;
}

/// 1 where the best warped reprojection error beats (strictly) the best
/// unwarped photometric error; stationary pixels fail the test and drop
/// out of the photometric loss.
template <typename T>
std::vector<T> automask(const std::vector<std::vector<T>>& warped_maps,
                        const std::vector<std::vector<T>>& unwarped_maps) {
  if (warped_maps.empty() || unwarped_maps.empty()) {
    throw ValidationError("automask: need at least one map on each side");
  }
  const size_t n = warped_maps[0].size();
  std::vector<T> mask(n);
  for (size_t i = 0; i < n; ++i) {
    T warped = warped_maps[0][i];
    for (size_t s = 1; s < warped_maps.size(); ++s) warped = std::min(warped, warped_maps[s][i]);
    T unwarped = unwarped_maps[0][i];
    for (size_t s = 1; s < unwarped_maps.size(); ++s)
      unwarped = std::min(unwarped, unwarped_maps[s][i]);
    mask[i] = warped < unwarped ? T(1) : T(0);
  }
  return mask;
}

/// Edge-aware smoothness on the mean-normalized inverse depth, forward
/// differences. The x and y terms live on different supports ((H,W-1) and
/// (H-1,W)), so each is averaged over its own domain and the two means are
/// summed.
template <typename T>
ad::Tensor<T> smoothness_loss(const ad::Tensor<T>& depth, const ad::Tensor<T>& image) {
  if (depth.shape().size() != 2 || image.shape().size() != 3 ||
      image.shape()[1] != depth.shape()[0] || image.shape()[2] != depth.shape()[1]) {
    throw ValidationError("smoothness_loss: depth (H,W) and image (C,H,W) must align");
  }
  const int h = depth.shape()[0], w = depth.shape()[1];
  const int c = image.shape()[0];

  auto inv = T(1) / depth;
  auto norm = inv / ad::reduce_mean(inv);

  auto dx = ad::slice(norm, {0, 1}, {h, w - 1}) - ad::slice(norm, {0, 0}, {h, w - 1});
  auto dy = ad::slice(norm, {1, 0}, {h - 1, w}) - ad::slice(norm, {0, 0}, {h - 1, w});

  auto img_dx = channel_mean(ad::abs(ad::slice(image, {0, 0, 1}, {c, h, w - 1}) -
                                     ad::slice(image, {0, 0, 0}, {c, h, w - 1})));
  auto img_dy = channel_mean(ad::abs(ad::slice(image, {0, 1, 0}, {c, h - 1, w}) -
                                     ad::slice(image, {0, 0, 0}, {c, h - 1, w})));

  auto term_x = ad::reduce_mean(ad::abs(dx) * ad::exp(-img_dx));
  auto term_y = ad::reduce_mean(ad::abs(dy) * ad::exp(-img_dy));
  return term_x + term_y;
}

/// Lower median: for even counts the smaller of the two middle elements.
template <typename T>
T lower_median(std::vector<T> values) {
  if (values.empty()) throw DegenerateInputError("median of an empty set");
  const size_t k = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

/// median(ref over mask) / median(pred over mask). Throws when the mask is
/// empty or either median is zero (no meaningful scale).
template <typename T, typename MaskT>
T median_scale_factor(const std::vector<T>& pred, const std::vector<T>& ref,
                      const std::vector<MaskT>& mask) {
  std::vector<T> p, r;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != MaskT(0)) {
      p.push_back(pred[i]);
      r.push_back(ref[i]);
    }
  }
  if (p.empty()) throw DegenerateInputError("median scaling over an empty mask");
  const T mp = lower_median(std::move(p));
  const T mr = lower_median(std::move(r));
  if (mp == T(0) || mr == T(0)) throw DegenerateInputError("median scaling hit a zero median");
  return mr / mp;
}

enum class IsslReduction { kMean, kSum };

/// Consistency between the re-inferred depth on a self-sample and the
/// generated self-sample depth: |d̂ - d| / (d̂ + d) over valid pixels.
/// The prediction is median-scaled to the reference first; the factor is
/// computed from forward values and enters the graph as a constant, so no
/// gradient flows through the scaling.
template <typename T>
ad::Tensor<T> issl_loss(const ad::Tensor<T>& d_hat, const std::vector<T>& d_self,
                        const std::vector<std::uint8_t>& valid, bool median_scaling = true,
                        IsslReduction reduction = IsslReduction::kMean) {
  ad::Tape<T>& tape = *d_hat.tape();
  if (d_hat.size() != static_cast<std::int64_t>(d_self.size()) || d_self.size() != valid.size()) {
    throw ValidationError("issl_loss: shape mismatch");
  }
  std::int64_t count = 0;
  for (std::uint8_t v : valid) count += (v != 0);
  if (count == 0) throw DegenerateInputError("issl_loss: no valid pixels");

  ad::Tensor<T> pred = d_hat;
  if (median_scaling) {
    const T factor = median_scale_factor(d_hat.values(), d_self, valid);
    pred = d_hat * factor;
  }
  auto ref = tape.constant(d_hat.shape(), std::vector<T>(d_self.begin(), d_self.end()));
  auto ratio = ad::abs(pred - ref) / (pred + ref);

  std::vector<T> mask_values(valid.size());
  for (size_t i = 0; i < valid.size(); ++i) mask_values[i] = valid[i] ? T(1) : T(0);
  auto mask = tape.constant(d_hat.shape(), std::move(mask_values));
  return ad::masked_reduce(ratio, mask,
                           reduction == IsslReduction::kMean ? ad::MaskedReduce::kMean
                                                             : ad::MaskedReduce::kSum);
}

/// lambda1 * L_p + lambda2 * L_s + lambda3 * L_issl. Absent terms
/// (undefined tensors) are treated as zero so ablations don't build dead
/// graph nodes.
template <typename T>
ad::Tensor<T> total_loss(ad::Tape<T>& tape, const LossWeights& weights,
                         const ad::Tensor<T>& photometric, const ad::Tensor<T>& smoothness,
                         const ad::Tensor<T>& issl) {
  ad::Tensor<T> total = tape.scalar(T(0));
  if (photometric.defined()) total = total + photometric * static_cast<T>(weights.lambda1);
  if (smoothness.defined()) total = total + smoothness * static_cast<T>(weights.lambda2);
  if (issl.defined()) total = total + issl * static_cast<T>(weights.lambda3);
  return total;
}

}  // namespace issl::losses
