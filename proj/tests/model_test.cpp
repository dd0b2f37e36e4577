#include "issl/model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "issl/errors.hpp"
#include "issl/io.hpp"
#include "oracles.hpp"

using issl::FormatError;
using issl::Image;
using issl::ValidationError;
namespace ad = issl::ad;
namespace model = issl::model;

namespace {

model::NetConfig tiny_config() {
  model::NetConfig config;
  config.widths = {2, 4, 4, 2};  // keeps finite-difference sweeps cheap
  return config;
}

std::vector<double> random_image_values(int c, int h, int w, std::uint64_t key) {
  issl::Rng rng = issl::stream_rng(31, issl::Stream::kTest, {30, key});
  std::vector<double> v(static_cast<size_t>(c) * h * w);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return v;
}

std::string scratch(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Forward pass replicated with the scalar reference kernels, so layer
// wiring (strides, padding, upsampling, activations) is pinned
// independently of the autodiff graph.
std::vector<double> oracle_forward(const model::TinyDepthNet<double>& net,
                                   const std::vector<double>& image, int h, int w) {
  auto softplus = [](std::vector<double> x) {
    for (double& v : x) v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    return x;
  };
  auto upsample = [](const std::vector<double>& x, int c, int hh, int ww) {
    std::vector<double> out(static_cast<size_t>(c) * hh * 2 * ww * 2);
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < hh * 2; ++y)
        for (int xx = 0; xx < ww * 2; ++xx)
          out[(static_cast<size_t>(cc) * hh * 2 + y) * ww * 2 + xx] =
              x[(static_cast<size_t>(cc) * hh + y / 2) * ww + xx / 2];
    return out;
  };
  const auto& p = net.params;
  const auto& cw = net.config.widths;
  const int ci = net.config.in_channels;

  std::vector<double> a = softplus(
      oracles::conv2d(image, ci, h, w, p[0].values, cw[0], 3, p[1].values, 2, false));
  a = softplus(oracles::conv2d(a, cw[0], h / 2, w / 2, p[2].values, cw[1], 3, p[3].values, 2, false));
  a = upsample(a, cw[1], h / 4, w / 4);
  a = softplus(oracles::conv2d(a, cw[1], h / 2, w / 2, p[4].values, cw[2], 3, p[5].values, 1, false));
  a = upsample(a, cw[2], h / 2, w / 2);
  a = softplus(oracles::conv2d(a, cw[2], h, w, p[6].values, cw[3], 3, p[7].values, 1, false));
  a = oracles::conv2d(a, cw[3], h, w, p[8].values, 1, 3, p[9].values, 1, false);

  const double da = 1.0 / net.config.d_min - 1.0 / net.config.d_max;
  const double db = 1.0 / net.config.d_max;
  for (double& v : a) {
    const double sigma = 1.0 / (1.0 + std::exp(-v));
    v = 1.0 / (da * sigma + db);
  }
  return a;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("parameter layout follows the declared architecture") {
  model::NetConfig config;  // default widths 8/16/16/8
  const auto layout = model::parameter_layout(config);
  REQUIRE(layout.size() == 10);
  CHECK(layout[0].first == "conv1.weight");
  CHECK(layout[0].second == ad::Shape{8, 3, 3, 3});
  CHECK(layout[3].second == ad::Shape{16});
  CHECK(layout[4].second == ad::Shape{16, 16, 3, 3});
  CHECK(layout[8].first == "head.weight");
  CHECK(layout[8].second == ad::Shape{1, 8, 3, 3});
  CHECK(layout[9].second == ad::Shape{1});
}

TEST_CASE("initialization is seeded, bounded and zero-biased") {
  auto net_a = model::make_net<float>(tiny_config(), 42);
  auto net_b = model::make_net<float>(tiny_config(), 42);
  auto net_c = model::make_net<float>(tiny_config(), 43);

  bool any_difference = false;
  for (size_t i = 0; i < net_a.params.size(); ++i) {
    CHECK(net_a.params[i].values == net_b.params[i].values);
    if (net_a.params[i].values != net_c.params[i].values) any_difference = true;

    const auto& p = net_a.params[i];
    if (p.name.ends_with(".bias")) {
      for (float v : p.values) CHECK(v == 0.0f);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.shape[1]) * 9.0);
      double max_abs = 0.0;
      for (float v : p.values) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
      CHECK(max_abs <= bound);
      CHECK(max_abs > 0.0);
    }
  }
  CHECK(any_difference);
}

TEST_CASE("disparity-to-depth mapping hits its endpoints") {
  model::NetConfig config;
  ad::Tape<double> tape;
  auto at = [&](double sigma) {
    return model::disparity_to_depth(tape.constant({1}, {sigma}), config).value();
  };
  CHECK(at(1.0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(at(0.0) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(at(0.5) == doctest::Approx(1.0 / (9.99 * 0.5 + 0.01)).epsilon(1e-14));
}

TEST_CASE("depth output is bounded for arbitrary parameters") {
  model::NetConfig config = tiny_config();
  const int h = 8, w = 8;

  for (double scale : {1.0, 50.0}) {
    auto net = model::make_net<double>(config, 7);
    for (auto& p : net.params) {
      for (double& v : p.values) v *= scale;  // push activations toward saturation
    }
    ad::Tape<double> tape;
    ad::Tensor<double> image =
        tape.constant({3, h, w}, random_image_values(3, h, w, static_cast<uint64_t>(scale)));
    ad::Tensor<double> depth = model::predict_depth(config, make_constants(tape, net), image);

    CHECK(depth.shape() == ad::Shape{h, w});
    for (double d : depth.values()) {
      CHECK(d >= config.d_min);
      CHECK(d <= config.d_max);
    }
  }
}

TEST_CASE("prediction rejects images the decoder cannot restore") {
  model::NetConfig config = tiny_config();
  auto net = model::make_net<double>(config, 7);
  ad::Tape<double> tape;
  auto params = make_constants(tape, net);

  ad::Tensor<double> bad = tape.constant({3, 10, 8}, random_image_values(3, 10, 8, 0));
  CHECK_THROWS_AS(model::predict_depth(config, params, bad), ValidationError);
  ad::Tensor<double> wrong_ch = tape.constant({1, 8, 8}, random_image_values(1, 8, 8, 1));
  CHECK_THROWS_AS(model::predict_depth(config, params, wrong_ch), ValidationError);
}

TEST_CASE("inference is a pure function of parameters and image") {
  model::NetConfig config = tiny_config();
  auto net = model::make_net<float>(config, 11);
  Image img(12, 8, 3);
  auto values = random_image_values(3, 8, 12, 2);
  for (size_t i = 0; i < values.size(); ++i) img.values[i] = values[i];

  issl::DepthMap first = model::predict_depth_map(net, img);
  issl::DepthMap second = model::predict_depth_map(net, img);
  CHECK(first.values == second.values);
}

TEST_CASE("forward pass matches the scalar reference chain") {
  model::NetConfig config = tiny_config();
  auto net = model::make_net<double>(config, 13);
  const int h = 8, w = 12;
  const auto image = random_image_values(3, h, w, 3);

  ad::Tape<double> tape;
  ad::Tensor<double> depth =
      model::predict_depth(config, make_constants(tape, net), tape.constant({3, h, w}, image));
  const std::vector<double> expected = oracle_forward(net, image, h, w);

  REQUIRE(depth.values().size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) {
    CHECK(depth.values()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("parameter gradients through an L1 objective pass finite differences") {
  model::NetConfig config = tiny_config();
  auto net = model::make_net<double>(config, 17);
  const int h = 8, w = 8;
  const auto image = random_image_values(3, h, w, 4);

  std::vector<ad::GradCheckInput<double>> inputs;
  for (const auto& p : net.params) inputs.push_back({p.shape, p.values});

  auto builder = [&](ad::Tape<double>& tape,
                     const std::vector<ad::Tensor<double>>& vars) -> ad::Tensor<double> {
    ad::Tensor<double> img = tape.constant({3, h, w}, image);
    ad::Tensor<double> depth = model::predict_depth(config, vars, img);
    // L1 against a target below d_min keeps |.| away from its kink.
    return ad::reduce_mean(ad::abs(depth - tape.scalar(0.05)));
  };

  ad::GradCheckResult res = ad::grad_check<double>(builder, inputs, {});
  INFO("max rel err ", res.max_rel_err, " at input ", res.worst_input, " coord ", res.worst_coord);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.checked > 300);
}

TEST_CASE("checkpoints round-trip bitwise and reject mismatched manifests") {
  auto net = model::make_net<float>(tiny_config(), 23);
  const std::string path = scratch("net_checkpoint.bin");
  model::save_net(net, path);

  model::TinyDepthNet<float> back = model::load_net(path);
  CHECK(back.config.widths == net.config.widths);
  REQUIRE(back.params.size() == net.params.size());
  for (size_t i = 0; i < net.params.size(); ++i) {
    CHECK(back.params[i].name == net.params[i].name);
    CHECK(back.params[i].values == net.params[i].values);
  }

  // Manifest kind mismatch.
  auto [manifest, blob] = issl::io::read_blob(path);
  nlohmann::json wrong = manifest;
  wrong["kind"] = "something_else";
  issl::io::write_blob(path, wrong, blob);
  CHECK_THROWS_AS(model::load_net(path), FormatError);

  // Declared shape disagrees with the config-implied layout.
  wrong = manifest;
  wrong["params"][0]["shape"] = {5, 5};
  issl::io::write_blob(path, wrong, blob);
  CHECK_THROWS_AS(model::load_net(path), FormatError);

  // Truncated payload.
  issl::io::write_blob(path, manifest, std::vector<float>(blob.begin(), blob.end() - 3));
  CHECK_THROWS_AS(model::load_net(path), FormatError);

  std::remove(path.c_str());
}

TEST_SUITE_END();
