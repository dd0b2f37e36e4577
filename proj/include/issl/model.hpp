// Desk-scale depth predictor: a four-layer conv encoder-decoder with a
// sigmoid disparity head. Inference is a pure function of (parameters,
// image), which is what allows re-applying the same network to generated
// self-samples.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "issl/autodiff.hpp"
#include "issl/random.hpp"
#include "issl/types.hpp"

namespace issl::model {

struct NetConfig {
  int in_channels = 3;
  std::array<int, 4> widths{8, 16, 16, 8};
  // Depth range of the sigmoid-to-depth mapping.
  double d_min = 0.1;
  double d_max = 100.0;

  void validate() const;
};

template <typename T>
struct ParamArray {
  std::string name;
  ad::Shape shape;
  std::vector<T> values;
};

template <typename T>
struct TinyDepthNet {
  NetConfig config;
  std::vector<ParamArray<T>> params;
};

/// Parameter names and shapes implied by a config, in storage order:
/// conv1..conv4 then head, weight before bias.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const NetConfig& config);

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases
/// start at zero and consume no draws. All draws come from the weight-init
/// stream of `master_seed`.
template <typename T>
TinyDepthNet<T> make_net(const NetConfig& config, std::uint64_t master_seed) {
  config.validate();
  TinyDepthNet<T> net;
  net.config = config;
  Rng rng = stream_rng(master_seed, Stream::kWeightInit, {});
  for (auto& [name, shape] : parameter_layout(config)) {
    ParamArray<T> p;
    p.name = name;
    p.shape = shape;
    p.values.resize(static_cast<size_t>(ad::numel(shape)));
    if (name.ends_with(".weight")) {
      // shape is (Co, Ci, K, K); fan-in counts every input the unit sees.
      const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
      const double bound = 1.0 / std::sqrt(fan_in);
      for (T& v : p.values) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    net.params.push_back(std::move(p));
  }
  return net;
}

template <typename T>
std::vector<ad::Tensor<T>> make_variables(ad::Tape<T>& tape, const TinyDepthNet<T>& net) {
  std::vector<ad::Tensor<T>> out;
  out.reserve(net.params.size());
  for (const ParamArray<T>& p : net.params) out.push_back(tape.variable(p.shape, p.values));
  return out;
}

template <typename T>
std::vector<ad::Tensor<T>> make_constants(ad::Tape<T>& tape, const TinyDepthNet<T>& net) {
  std::vector<ad::Tensor<T>> out;
  out.reserve(net.params.size());
  for (const ParamArray<T>& p : net.params) out.push_back(tape.constant(p.shape, p.values));
  return out;
}

namespace detail {

template <typename T>
void check_predict_input(const NetConfig& config, size_t n_params, const ad::Tensor<T>& image) {
  if (n_params != 10) {
    throw ValidationError(fmt::format("expected 10 parameter tensors, got {}", n_params));
  }
  const ad::Shape& s = image.shape();
  if (s.size() != 3 || s[0] != config.in_channels) {
    throw ValidationError(fmt::format("predict: expected image ({},H,W), got {}",
                                      config.in_channels, ad::shape_str(s)));
  }
  if (s[1] % 4 != 0 || s[2] % 4 != 0 || s[1] < 4 || s[2] < 4) {
    throw ValidationError(fmt::format(
        "predict: spatial dims must be multiples of 4 to survive the two stride-2 stages, got {}",
        ad::shape_str(s)));
  }
}

}  // namespace detail

/// Disparity in (0,1), shape (1,H,W) for an (in_channels,H,W) image.
/// `params` must come from make_variables/make_constants in layout order.
template <typename T>
ad::Tensor<T> predict_disparity(const NetConfig& config, const std::vector<ad::Tensor<T>>& params,
                                const ad::Tensor<T>& image) {
  detail::check_predict_input(config, params.size(), image);
  using namespace ad;
  Tensor<T> h = softplus(conv2d(image, params[0], params[1], 2, Padding::kZero));
  h = softplus(conv2d(h, params[2], params[3], 2, Padding::kZero));
  h = softplus(conv2d(upsample_nearest2x(h), params[4], params[5], 1, Padding::kZero));
  h = softplus(conv2d(upsample_nearest2x(h), params[6], params[7], 1, Padding::kZero));
  return sigmoid(conv2d(h, params[8], params[9], 1, Padding::kZero));
}

/// D = 1 / (a*sigma + b) with a = 1/d_min - 1/d_max, b = 1/d_max, so
/// sigma -> 1 gives d_min and sigma -> 0 gives d_max. Keeps the input
/// shape.
template <typename T>
ad::Tensor<T> disparity_to_depth(const ad::Tensor<T>& sigma, const NetConfig& config) {
  const T a = static_cast<T>(1.0 / config.d_min - 1.0 / config.d_max);
  const T b = static_cast<T>(1.0 / config.d_max);
  ad::Tensor<T> denom = sigma * a + b;
  return sigma.tape()->scalar(T(1)) / denom;
}

/// Depth map (H,W) straight from an image tensor.
template <typename T>
ad::Tensor<T> predict_depth(const NetConfig& config, const std::vector<ad::Tensor<T>>& params,
                            const ad::Tensor<T>& image) {
  ad::Tensor<T> depth = disparity_to_depth(predict_disparity(config, params, image), config);
  return ad::reshape(depth, {image.shape()[1], image.shape()[2]});
}

/// Host-side inference on a frozen net: scratch tape, constants only.
DepthMap predict_depth_map(const TinyDepthNet<float>& net, const Image& image);

/// Checkpoint: one-line JSON manifest (config + parameter shapes) followed
/// by the float32 parameter blob in layout order. Round-trips bitwise.
void save_net(const TinyDepthNet<float>& net, const std::string& path);
TinyDepthNet<float> load_net(const std::string& path);

}  // namespace issl::model
