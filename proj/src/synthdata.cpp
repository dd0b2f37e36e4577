#include "issl/synthdata.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>
#include <fmt/format.h>

#include "issl/errors.hpp"
#include "issl/geometry.hpp"
#include "issl/io.hpp"
#include "issl/parallel.hpp"
#include "issl/warp.hpp"

namespace issl::synthdata {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kAmplitudeBudget = 0.45;
// Finest texture detail, in pixels at the surface's reference depth. At 20
// pixels per cycle the bilinear resampling error of a sine stays below
// (pi/10)^2 / 8 of its amplitude, comfortably inside the warp oracle's
// 0.01 budget.
constexpr double kMinWavelengthPx = 20.0;

}  // namespace

double Texture::eval(int channel, double x, double y) const {
  double v = base;
  for (const Wave& w : waves[channel]) {
    v += w.amplitude * std::sin(kTwoPi * (w.freq_x * x + w.freq_y * y) + w.phase);
  }
  return v;
}

Texture make_texture(Rng& rng, int channels, int waves_per_channel, double min_wavelength) {
  if (channels < 1 || waves_per_channel < 1 || !(min_wavelength > 0.0)) {
    throw ValidationError("make_texture: need positive channel/wave counts and wavelength");
  }
  Texture t;
  t.waves.resize(channels);
  const double full_amp = kAmplitudeBudget / waves_per_channel;
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < waves_per_channel; ++i) {
      Texture::Wave w;
      const double wavelength = rng.uniform(min_wavelength, 4.0 * min_wavelength);
      const double angle = rng.uniform(0.0, kTwoPi);
      w.freq_x = std::cos(angle) / wavelength;
      w.freq_y = std::sin(angle) / wavelength;
      w.phase = rng.uniform(0.0, kTwoPi);
      w.amplitude = full_amp * rng.uniform(0.6, 1.0);
      t.waves[c].push_back(w);
    }
  }
  return t;
}

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("scene dimensions must be positive");
  intrinsics.validate();
  if (!(background_depth > 0.0) || !std::isfinite(background_depth)) {
    throw ValidationError("background_depth must be positive and finite");
  }
  if (waves_per_channel < 1) throw ValidationError("waves_per_channel must be at least 1");
  if (camera_trajectory.empty()) throw ValidationError("camera_trajectory must not be empty");
  for (const RigidMotion& pose : camera_trajectory) pose.validate();
  for (size_t i = 0; i < objects.size(); ++i) {
    const ObjectSpec& o = objects[i];
    if (!(o.depth > 0.0)) {
      throw ValidationError(fmt::format("objects[{}].depth must be positive", i));
    }
    if (o.depth >= background_depth) {
      throw ValidationError(
          fmt::format("objects[{}] sits at or behind the background plane", i));
    }
    if (!(o.width_px > 0.0) || !(o.height_px > 0.0)) {
      throw ValidationError(fmt::format("objects[{}] extent must be positive", i));
    }
    o.motion.validate();
  }
}

namespace {

Eigen::Vector3d parse_vec3(const nlohmann::json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(fmt::format("{}: expected an array of 3 numbers", context));
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

RigidMotion parse_motion(const nlohmann::json& j, const std::string& context) {
  io::reject_unknown_keys(j, {"rotation", "translation"}, context);
  RigidMotion m;
  m.rotation = parse_vec3(j.at("rotation"), context + ".rotation");
  m.translation = parse_vec3(j.at("translation"), context + ".translation");
  return m;
}

}  // namespace

SceneSpec parse_scene_spec(const nlohmann::json& j) {
  io::reject_unknown_keys(j,
                          {"width", "height", "intrinsics", "background_depth", "texture_seed",
                           "waves_per_channel", "camera_trajectory", "objects"},
                          "scene");
  SceneSpec spec;
  try {
    spec.width = j.at("width");
    spec.height = j.at("height");
    const nlohmann::json& k = j.at("intrinsics");
    io::reject_unknown_keys(k, {"fx", "fy", "cx", "cy"}, "scene.intrinsics");
    spec.intrinsics.fx = k.at("fx");
    spec.intrinsics.fy = k.at("fy");
    spec.intrinsics.cx = k.at("cx");
    spec.intrinsics.cy = k.at("cy");
    spec.background_depth = j.at("background_depth");
    spec.texture_seed = j.at("texture_seed");
    spec.waves_per_channel = j.value("waves_per_channel", 3);
    for (size_t f = 0; f < j.at("camera_trajectory").size(); ++f) {
      spec.camera_trajectory.push_back(
          parse_motion(j.at("camera_trajectory")[f], fmt::format("scene.camera_trajectory[{}]", f)));
    }
    if (j.contains("objects")) {
      for (size_t i = 0; i < j.at("objects").size(); ++i) {
        const nlohmann::json& o = j.at("objects")[i];
        const std::string ctx = fmt::format("scene.objects[{}]", i);
        io::reject_unknown_keys(o, {"depth", "center", "size_px", "motion"}, ctx);
        ObjectSpec obj;
        obj.depth = o.at("depth");
        if (o.at("center").size() != 2 || o.at("size_px").size() != 2) {
          throw ValidationError(ctx + ": center and size_px must have 2 entries");
        }
        obj.center_u = o.at("center")[0];
        obj.center_v = o.at("center")[1];
        obj.width_px = o.at("size_px")[0];
        obj.height_px = o.at("size_px")[1];
        obj.motion = parse_motion(o.at("motion"), ctx + ".motion");
        spec.objects.push_back(obj);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("scene spec: {}", e.what()));
  }
  spec.validate();
  return spec;
}

nlohmann::json scene_spec_to_json(const SceneSpec& spec) {
  auto motion_json = [](const RigidMotion& m) {
    return nlohmann::json{
        {"rotation", {m.rotation.x(), m.rotation.y(), m.rotation.z()}},
        {"translation", {m.translation.x(), m.translation.y(), m.translation.z()}}};
  };
  nlohmann::json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["intrinsics"] = {{"fx", spec.intrinsics.fx},
                     {"fy", spec.intrinsics.fy},
                     {"cx", spec.intrinsics.cx},
                     {"cy", spec.intrinsics.cy}};
  j["background_depth"] = spec.background_depth;
  j["texture_seed"] = spec.texture_seed;
  j["waves_per_channel"] = spec.waves_per_channel;
  j["camera_trajectory"] = nlohmann::json::array();
  for (const RigidMotion& pose : spec.camera_trajectory) {
    j["camera_trajectory"].push_back(motion_json(pose));
  }
  j["objects"] = nlohmann::json::array();
  for (const ObjectSpec& o : spec.objects) {
    j["objects"].push_back({{"depth", o.depth},
                            {"center", {o.center_u, o.center_v}},
                            {"size_px", {o.width_px, o.height_px}},
                            {"motion", motion_json(o.motion)}});
  }
  return j;
}

namespace {

struct ObjectState {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // accumulated, world frame
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double half_w = 0.0;  // meters in the patch plane
  double half_h = 0.0;
};

RenderedFrame render_frame(const SceneSpec& spec, const std::vector<Texture>& textures,
                           const std::vector<ObjectState>& states, const RigidMotion& pose) {
  const int w = spec.width, h = spec.height;
  RenderedFrame frame;
  frame.image = Image(w, h, 3);
  frame.gt_depth = DepthMap(w, h);
  frame.instance_ids.assign(static_cast<size_t>(w) * h, 0);
  frame.camera_pose = pose;

  const Eigen::Matrix3d cam_rot = geometry::axis_angle_to_matrix(pose.rotation);
  const Eigen::Vector3d origin = pose.translation;
  const Eigen::Matrix3d k_inv = spec.intrinsics.inverse_matrix();
  std::atomic<bool> missed{false};

  parallel_for(static_cast<std::int64_t>(w) * h, [&](std::int64_t idx) {
    const int x = static_cast<int>(idx % w);
    const int y = static_cast<int>(idx / w);
    // K^-1 (u,v,1) has unit z, so the ray parameter equals camera-space
    // depth directly.
    const Eigen::Vector3d dir = cam_rot * (k_inv * Eigen::Vector3d(x, y, 1.0));

    double best_s = std::numeric_limits<double>::infinity();
    int best_id = -1;
    Eigen::Vector2d best_local = Eigen::Vector2d::Zero();

    if (std::abs(dir.z()) > 1e-15) {
      const double s = (spec.background_depth - origin.z()) / dir.z();
      if (s > 1e-6) {
        const Eigen::Vector3d hit = origin + s * dir;
        best_s = s;
        best_id = 0;
        best_local = {hit.x(), hit.y()};
      }
    }
    for (size_t i = 0; i < states.size(); ++i) {
      const ObjectState& st = states[i];
      const Eigen::Vector3d normal = st.rotation.col(2);
      const double denom = dir.dot(normal);
      if (std::abs(denom) < 1e-12) continue;
      const double s = (st.center - origin).dot(normal) / denom;
      if (s <= 1e-6 || s >= best_s) continue;
      const Eigen::Vector3d local = st.rotation.transpose() * (origin + s * dir - st.center);
      if (std::abs(local.x()) <= st.half_w && std::abs(local.y()) <= st.half_h) {
        best_s = s;
        best_id = static_cast<int>(i) + 1;
        best_local = {local.x(), local.y()};
      }
    }

    if (best_id < 0) {
      missed.store(true, std::memory_order_relaxed);
      return;
    }
    frame.gt_depth.values[idx] = best_s;
    frame.instance_ids[idx] = best_id;
    for (int c = 0; c < 3; ++c) {
      frame.image.at(c, y, x) = textures[best_id].eval(c, best_local.x(), best_local.y());
    }
  });

  if (missed.load()) {
    throw DegenerateInputError(
        "a camera ray escapes the scene; the background plane must cover the view");
  }
  return frame;
}

}  // namespace

std::vector<RenderedFrame> render_sequence(const SceneSpec& spec) {
  spec.validate();

  std::vector<Texture> textures;
  {
    Rng rng = stream_rng(spec.texture_seed, Stream::kTexture, {0});
    textures.push_back(make_texture(rng, 3, spec.waves_per_channel,
                                    kMinWavelengthPx * spec.background_depth / spec.intrinsics.fx));
  }
  for (size_t i = 0; i < spec.objects.size(); ++i) {
    Rng rng = stream_rng(spec.texture_seed, Stream::kTexture, {i + 1});
    textures.push_back(make_texture(rng, 3, spec.waves_per_channel,
                                    kMinWavelengthPx * spec.objects[i].depth / spec.intrinsics.fx));
  }

  std::vector<ObjectState> states;
  for (const ObjectSpec& o : spec.objects) {
    ObjectState st;
    st.center = o.depth * (spec.intrinsics.inverse_matrix() *
                           Eigen::Vector3d(o.center_u, o.center_v, 1.0));
    st.half_w = 0.5 * o.width_px * o.depth / spec.intrinsics.fx;
    st.half_h = 0.5 * o.height_px * o.depth / spec.intrinsics.fy;
    states.push_back(st);
  }

  std::vector<RenderedFrame> frames;
  frames.reserve(spec.camera_trajectory.size());
  for (const RigidMotion& pose : spec.camera_trajectory) {
    frames.push_back(render_frame(spec, textures, states, pose));
    for (size_t i = 0; i < states.size(); ++i) {
      // Spin about the current center, then translate it: constant angular
      // and linear velocity per frame.
      states[i].rotation =
          geometry::axis_angle_to_matrix(spec.objects[i].motion.rotation) * states[i].rotation;
      states[i].center += spec.objects[i].motion.translation;
    }
  }
  return frames;
}

RigidMotion relative_motion(const RigidMotion& target_pose, const RigidMotion& source_pose) {
  // X_source = C_source^-1 * C_target * X_target.
  return geometry::compose_motions(geometry::invert_motion(source_pose), target_pose);
}

WarpResiduals warp_residuals(const std::vector<RenderedFrame>& frames,
                             const CameraIntrinsics& intrinsics) {
  if (frames.size() < 2) throw ValidationError("warp residuals need at least two frames");

  double static_sum = 0.0, dynamic_sum = 0.0;
  std::int64_t static_count = 0, dynamic_count = 0;
  for (size_t t = 0; t < frames.size(); ++t) {
    for (size_t s : {t - 1, t + 1}) {
      if (s >= frames.size()) continue;  // size_t wrap covers t == 0
      const RenderedFrame& target = frames[t];
      const RenderedFrame& source = frames[s];
      const RigidMotion motion = relative_motion(target.camera_pose, source.camera_pose);
      const warp::SynthesisResult synth = warp::synthesize_view(
          source.image, source.gt_depth, target.gt_depth, motion, intrinsics);

      for (int y = 0; y < target.image.height; ++y)
        for (int x = 0; x < target.image.width; ++x) {
          if (!synth.valid.at(x, y)) continue;
          double residual = 0.0;
          for (int c = 0; c < 3; ++c) {
            residual += std::abs(synth.image.at(c, y, x) - target.image.at(c, y, x));
          }
          residual /= 3.0;
          const size_t idx = static_cast<size_t>(y) * target.image.width + x;
          if (target.instance_ids[idx] == 0) {
            static_sum += residual;
            ++static_count;
          } else {
            dynamic_sum += residual;
            ++dynamic_count;
          }
        }
    }
  }

  if (static_count == 0) throw DegenerateInputError("no valid static pixels to average");
  WarpResiduals out;
  out.static_mean = static_sum / static_count;
  if (dynamic_count > 0) out.dynamic_mean = dynamic_sum / dynamic_count;
  return out;
}

double gt_warp_residual(const std::vector<RenderedFrame>& frames,
                        const CameraIntrinsics& intrinsics) {
  return warp_residuals(frames, intrinsics).static_mean;
}

}  // namespace issl::synthdata
