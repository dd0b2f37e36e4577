#include "issl/model.hpp"

#include <cmath>

#include "issl/io.hpp"

namespace issl::model {

void NetConfig::validate() const {
  if (in_channels < 1) throw ValidationError("in_channels must be positive");
  for (int w : widths) {
    if (w < 1) throw ValidationError("channel widths must be positive");
  }
  if (!(d_min > 0.0) || !(d_max > d_min) || !std::isfinite(d_max)) {
    throw ValidationError("require 0 < d_min < d_max < inf");
  }
}

std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const NetConfig& config) {
  const auto& w = config.widths;
  std::vector<std::pair<std::string, ad::Shape>> layout;
  auto layer = [&layout](const std::string& name, int co, int ci) {
    layout.emplace_back(name + ".weight", ad::Shape{co, ci, 3, 3});
    layout.emplace_back(name + ".bias", ad::Shape{co});
  };
  layer("conv1", w[0], config.in_channels);
  layer("conv2", w[1], w[0]);
  layer("conv3", w[2], w[1]);
  layer("conv4", w[3], w[2]);
  layer("head", 1, w[3]);
  return layout;
}

DepthMap predict_depth_map(const TinyDepthNet<float>& net, const Image& image) {
  ad::Tape<float> tape;
  std::vector<float> pixels(image.values.begin(), image.values.end());
  ad::Tensor<float> input =
      tape.constant({image.channels, image.height, image.width}, std::move(pixels));
  ad::Tensor<float> depth = predict_depth(net.config, make_constants(tape, net), input);

  DepthMap out(image.width, image.height);
  const std::vector<float>& v = depth.values();
  for (size_t i = 0; i < v.size(); ++i) out.values[i] = v[i];
  return out;
}

void save_net(const TinyDepthNet<float>& net, const std::string& path) {
  nlohmann::json manifest;
  manifest["kind"] = "tiny_depth_net";
  manifest["in_channels"] = net.config.in_channels;
  manifest["widths"] = net.config.widths;
  manifest["d_min"] = net.config.d_min;
  manifest["d_max"] = net.config.d_max;
  nlohmann::json shapes = nlohmann::json::array();
  std::vector<float> blob;
  for (const ParamArray<float>& p : net.params) {
    shapes.push_back({{"name", p.name}, {"shape", p.shape}});
    blob.insert(blob.end(), p.values.begin(), p.values.end());
  }
  manifest["params"] = std::move(shapes);
  io::write_blob(path, manifest, blob);
}

TinyDepthNet<float> load_net(const std::string& path) {
  auto [manifest, blob] = io::read_blob(path);
  try {
    if (manifest.at("kind") != "tiny_depth_net") {
      throw FormatError(fmt::format("'{}': not a depth net checkpoint", path));
    }
    TinyDepthNet<float> net;
    net.config.in_channels = manifest.at("in_channels");
    net.config.widths = manifest.at("widths");
    net.config.d_min = manifest.at("d_min");
    net.config.d_max = manifest.at("d_max");
    net.config.validate();

    const auto layout = parameter_layout(net.config);
    const auto& declared = manifest.at("params");
    if (declared.size() != layout.size()) {
      throw FormatError(fmt::format("'{}': expected {} parameter entries, found {}", path,
                                    layout.size(), declared.size()));
    }
    size_t offset = 0;
    for (size_t i = 0; i < layout.size(); ++i) {
      if (declared[i].at("name") != layout[i].first ||
          declared[i].at("shape").get<ad::Shape>() != layout[i].second) {
        throw FormatError(fmt::format("'{}': parameter {} does not match the layout implied "
                                      "by the config",
                                      path, declared[i].at("name").get<std::string>()));
      }
      ParamArray<float> p;
      p.name = layout[i].first;
      p.shape = layout[i].second;
      const size_t count = static_cast<size_t>(ad::numel(p.shape));
      if (offset + count > blob.size()) {
        throw FormatError(fmt::format("'{}': parameter blob shorter than manifest", path));
      }
      p.values.assign(blob.begin() + offset, blob.begin() + offset + count);
      offset += count;
      net.params.push_back(std::move(p));
    }
    if (offset != blob.size()) {
      throw FormatError(fmt::format("'{}': {} trailing floats after parameters", path,
                                    blob.size() - offset));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("'{}': malformed manifest: {}", path, e.what()));
  }
}

}  // namespace issl::model
