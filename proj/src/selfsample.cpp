#include "issl/selfsample.hpp"

#include <algorithm>
#include <cstddef>

#include "issl/errors.hpp"
#include "issl/warp.hpp"

namespace issl::selfsample {

void SamplerConfig::validate() const {
  if (theta_r_start < 0.0 || theta_r_end < 0.0 || theta_t < 0.0) {
    throw ValidationError("sampler bounds must be non-negative");
  }
  if (theta_r_start > theta_r_end) {
    throw ValidationError("theta_r_start must not exceed theta_r_end");
  }
  if (n_k < 1) throw ValidationError("n_k must be at least 1");
  if (total_epochs < 1) throw ValidationError("total_epochs must be at least 1");
}

double theta_r_at(const SamplerConfig& config, int epoch) {
  config.validate();
  if (epoch < 0 || epoch >= config.total_epochs) {
    throw ValidationError("epoch outside the configured schedule");
  }
  if (epoch == 0) return config.theta_r_start;
  if (epoch == config.total_epochs - 1) return config.theta_r_end;
  double frac = static_cast<double>(epoch) / static_cast<double>(config.total_epochs - 1);
  return config.theta_r_start + (config.theta_r_end - config.theta_r_start) * frac;
}

namespace {

double draw_component(Rng& rng, Distribution distribution, double bound) {
  if (distribution == Distribution::kUniform) return rng.uniform(-bound, bound);
  double x = rng.normal() * (bound / 2.0);
  return std::clamp(x, -bound, bound);
}

}  // namespace

RigidMotion sample_motion(const SamplerConfig& config, int epoch, Rng& rng) {
  double theta_r = theta_r_at(config, epoch);
  RigidMotion m;
  for (int i = 0; i < 3; ++i) m.rotation[i] = draw_component(rng, config.distribution, theta_r);
  for (int i = 0; i < 3; ++i) {
    m.translation[i] = draw_component(rng, config.distribution, config.theta_t);
  }
  return m;
}

SelfSample generate_self_sample(const Image& image, const DepthMap& depth, const RigidMotion& m,
                                const CameraIntrinsics& intrinsics, DepthSource depth_source) {
  // The "source" view of the warp is the frame itself: the moved points
  // gather image and depth from where they came from.
  warp::SynthesisResult synth = warp::synthesize_view(image, depth, depth, m, intrinsics);

  SelfSample sample;
  sample.image = std::move(synth.image);
  sample.motion = m;
  sample.validity = std::move(synth.valid);
  sample.depth =
      depth_source == DepthSource::kSampled ? std::move(synth.depth) : std::move(synth.projected_z);
  for (std::size_t i = 0; i < sample.depth.values.size(); ++i) {
    if (sample.validity.values[i] == 0) sample.depth.values[i] = 0.0;
  }
  return sample;
}

std::vector<SelfSample> generate_batch(const Image& image, const DepthMap& depth,
                                       const CameraIntrinsics& intrinsics,
                                       const SamplerConfig& config, int epoch, Rng& rng) {
  config.validate();
  // Motions are drawn up front in a fixed order; synthesis itself consumes
  // no randomness, so the stream position depends only on n_k.
  std::vector<RigidMotion> motions;
  motions.reserve(static_cast<std::size_t>(config.n_k));
  for (int k = 0; k < config.n_k; ++k) motions.push_back(sample_motion(config, epoch, rng));

  std::vector<SelfSample> batch;
  batch.reserve(motions.size());
  for (const RigidMotion& m : motions) {
    batch.push_back(generate_self_sample(image, depth, m, intrinsics, config.depth_source));
  }
  return batch;
}

}  // namespace issl::selfsample
