#include "issl/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fmt/format.h"
#include "issl/errors.hpp"
#include "issl/gradcheck.hpp"
#include "issl/io.hpp"
#include "issl/model.hpp"
#include "issl/parallel.hpp"
#include "issl/random.hpp"
#include "issl/selfsample.hpp"
#include "issl/warp.hpp"

namespace issl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- config

/// Optional field with the file and key named on a type mismatch.
template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: field '{}': {}", context, key, e.what()));
  }
}

template <typename T>
T require_field(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) {
    throw ValidationError(fmt::format("{}: missing field '{}'", context, key));
  }
  T out{};
  read_field(j, key, out, context);
  return out;
}

void read_enum_field(const json& j, const char* key, selfsample::Distribution& out,
                     const std::string& context) {
  std::string s;
  read_field(j, key, s, context);
  if (s.empty()) return;
  if (s == "uniform") {
    out = selfsample::Distribution::kUniform;
  } else if (s == "gaussian") {
    out = selfsample::Distribution::kGaussian;
  } else {
    throw ValidationError(
        fmt::format("{}: field '{}' must be \"uniform\" or \"gaussian\", got \"{}\"", context,
                    key, s));
  }
}

void read_enum_field(const json& j, const char* key, selfsample::DepthSource& out,
                     const std::string& context) {
  std::string s;
  read_field(j, key, s, context);
  if (s.empty()) return;
  if (s == "sampled") {
    out = selfsample::DepthSource::kSampled;
  } else if (s == "transformed_z") {
    out = selfsample::DepthSource::kTransformedZ;
  } else {
    throw ValidationError(
        fmt::format("{}: field '{}' must be \"sampled\" or \"transformed_z\", got \"{}\"",
                    context, key, s));
  }
}

const char* distribution_name(selfsample::Distribution d) {
  return d == selfsample::Distribution::kUniform ? "uniform" : "gaussian";
}

const char* depth_source_name(selfsample::DepthSource d) {
  return d == selfsample::DepthSource::kSampled ? "sampled" : "transformed_z";
}

Eigen::Vector3d read_vec3(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(fmt::format("{}: expected an array of 3 numbers", context));
  }
  Eigen::Vector3d v;
  try {
    for (int i = 0; i < 3; ++i) v[i] = j.at(i).get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", context, e.what()));
  }
  return v;
}

json motion_to_json(const RigidMotion& m) {
  return {{"rotation", {m.rotation[0], m.rotation[1], m.rotation[2]}},
          {"translation", {m.translation[0], m.translation[1], m.translation[2]}}};
}

RigidMotion motion_from_json(const json& j, const std::string& context) {
  io::reject_unknown_keys(j, {"rotation", "translation"}, context);
  if (!j.contains("rotation") || !j.contains("translation")) {
    throw ValidationError(context + ": motion needs 'rotation' and 'translation'");
  }
  RigidMotion m;
  m.rotation = read_vec3(j.at("rotation"), context + ".rotation");
  m.translation = read_vec3(j.at("translation"), context + ".translation");
  return m;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (!(metrics.d_min > 0) || !(metrics.d_max > metrics.d_min)) {
    throw ValidationError("eval depth range needs 0 < d_min < d_max");
  }
  if (threads < 0) throw ValidationError("threads must be non-negative");
}

RunConfig parse_run_config(const json& j, const std::string& context) {
  io::reject_unknown_keys(
      j, {"seed", "threads", "dataset", "output_dir", "train", "loss", "sampler", "net", "eval"},
      context);
  RunConfig c;
  read_field(j, "seed", c.train.seed, context);
  read_field(j, "threads", c.threads, context);
  read_field(j, "dataset", c.dataset, context);
  read_field(j, "output_dir", c.output_dir, context);

  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string ctx = context + ": train";
    io::reject_unknown_keys(t,
                            {"epochs", "steps_per_epoch", "batch_size", "learning_rate",
                             "lr_decay_epoch", "lr_decay_factor", "source_frames", "holdout_eval",
                             "holdout_frame"},
                            ctx);
    read_field(t, "epochs", c.train.epochs, ctx);
    read_field(t, "steps_per_epoch", c.train.steps_per_epoch, ctx);
    read_field(t, "batch_size", c.train.batch_size, ctx);
    read_field(t, "learning_rate", c.train.learning_rate, ctx);
    read_field(t, "lr_decay_epoch", c.train.lr_decay_epoch, ctx);
    read_field(t, "lr_decay_factor", c.train.lr_decay_factor, ctx);
    read_field(t, "source_frames", c.train.source_frames, ctx);
    read_field(t, "holdout_eval", c.train.holdout_eval, ctx);
    read_field(t, "holdout_frame", c.train.holdout_frame, ctx);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    const std::string ctx = context + ": loss";
    io::reject_unknown_keys(l, {"lambda1", "lambda2", "lambda3", "alpha"}, ctx);
    read_field(l, "lambda1", c.train.loss_weights.lambda1, ctx);
    read_field(l, "lambda2", c.train.loss_weights.lambda2, ctx);
    read_field(l, "lambda3", c.train.loss_weights.lambda3, ctx);
    read_field(l, "alpha", c.train.loss_weights.alpha, ctx);
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    const std::string ctx = context + ": sampler";
    // No total_epochs here: the rotation schedule always spans train.epochs.
    io::reject_unknown_keys(
        s, {"theta_r_start", "theta_r_end", "theta_t", "n_k", "distribution", "depth_source"},
        ctx);
    read_field(s, "theta_r_start", c.train.sampler.theta_r_start, ctx);
    read_field(s, "theta_r_end", c.train.sampler.theta_r_end, ctx);
    read_field(s, "theta_t", c.train.sampler.theta_t, ctx);
    read_field(s, "n_k", c.train.sampler.n_k, ctx);
    read_enum_field(s, "distribution", c.train.sampler.distribution, ctx);
    read_enum_field(s, "depth_source", c.train.sampler.depth_source, ctx);
  }
  if (j.contains("net")) {
    const json& n = j.at("net");
    const std::string ctx = context + ": net";
    io::reject_unknown_keys(n, {"in_channels", "widths", "d_min", "d_max"}, ctx);
    read_field(n, "in_channels", c.train.net.in_channels, ctx);
    read_field(n, "widths", c.train.net.widths, ctx);
    read_field(n, "d_min", c.train.net.d_min, ctx);
    read_field(n, "d_max", c.train.net.d_max, ctx);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    const std::string ctx = context + ": eval";
    io::reject_unknown_keys(e, {"d_min", "d_max", "median_scale"}, ctx);
    read_field(e, "d_min", c.metrics.d_min, ctx);
    read_field(e, "d_max", c.metrics.d_max, ctx);
    read_field(e, "median_scale", c.metrics.median_scale, ctx);
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  return {
      {"seed", c.train.seed},
      {"threads", c.threads},
      {"dataset", c.dataset},
      {"output_dir", c.output_dir},
      {"train",
       {{"epochs", c.train.epochs},
        {"steps_per_epoch", c.train.steps_per_epoch},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"lr_decay_epoch", c.train.lr_decay_epoch},
        {"lr_decay_factor", c.train.lr_decay_factor},
        {"source_frames", c.train.source_frames},
        {"holdout_eval", c.train.holdout_eval},
        {"holdout_frame", c.train.holdout_frame}}},
      {"loss",
       {{"lambda1", c.train.loss_weights.lambda1},
        {"lambda2", c.train.loss_weights.lambda2},
        {"lambda3", c.train.loss_weights.lambda3},
        {"alpha", c.train.loss_weights.alpha}}},
      {"sampler",
       {{"theta_r_start", c.train.sampler.theta_r_start},
        {"theta_r_end", c.train.sampler.theta_r_end},
        {"theta_t", c.train.sampler.theta_t},
        {"n_k", c.train.sampler.n_k},
        {"distribution", distribution_name(c.train.sampler.distribution)},
        {"depth_source", depth_source_name(c.train.sampler.depth_source)}}},
      {"net",
       {{"in_channels", c.train.net.in_channels},
        {"widths", c.train.net.widths},
        {"d_min", c.train.net.d_min},
        {"d_max", c.train.net.d_max}}},
      {"eval",
       {{"d_min", c.metrics.d_min},
        {"d_max", c.metrics.d_max},
        {"median_scale", c.metrics.median_scale}}},
  };
}

// --------------------------------------------------------------- dataset

namespace {

std::string frame_path(const std::string& dir, const char* stem, int index, const char* ext) {
  return fmt::format("{}/{}_{:04d}.{}", dir, stem, index, ext);
}

/// Unwraps a run.json recorded by `command` into its config block, or
/// returns the document as-is when it is a plain config.
json load_config_document(const std::string& path, const std::string& command) {
  json j = io::read_json_file(path);
  if (j.is_object() && j.contains("command")) {
    io::reject_unknown_keys(j, {"command", "version", "config"}, path);
    const auto recorded = require_field<std::string>(j, "command", path);
    if (recorded != command) {
      throw ValidationError(
          fmt::format("'{}': records a '{}' run, not usable for '{}'", path, recorded, command));
    }
    return require_field<json>(j, "config", path);
  }
  return j;
}

void write_run_json(const std::string& dir, const std::string& command, const json& config) {
  io::write_json_file(dir + "/run.json",
                      {{"command", command}, {"version", kVersion}, {"config", config}});
}

/// RunConfig from a plain config file or from a recorded run.json (a train
/// run's config is the RunConfig itself; a selfsample run embeds it under
/// "run").
RunConfig load_run_config(const std::string& path) {
  json j = io::read_json_file(path);
  if (j.is_object() && j.contains("command")) {
    io::reject_unknown_keys(j, {"command", "version", "config"}, path);
    const auto command = require_field<std::string>(j, "command", path);
    json config = require_field<json>(j, "config", path);
    if (command == "train") {
      j = std::move(config);
    } else if (command == "selfsample") {
      j = require_field<json>(config, "run", path);
    } else {
      throw ValidationError(
          fmt::format("'{}': a '{}' run records no training configuration", path, command));
    }
  }
  return parse_run_config(j, path);
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<synthdata::RenderedFrame>& frames,
                   const CameraIntrinsics& intrinsics) {
  if (frames.empty()) throw ValidationError("write_dataset: no frames");
  fs::create_directories(dir);
  json poses = json::array();
  for (const auto& f : frames) poses.push_back(motion_to_json(f.camera_pose));
  io::write_json_file(dir + "/sequence.json",
                      {{"intrinsics",
                        {{"fx", intrinsics.fx},
                         {"fy", intrinsics.fy},
                         {"cx", intrinsics.cx},
                         {"cy", intrinsics.cy}}},
                       {"frame_count", frames.size()},
                       {"has_gt_depth", true},
                       {"has_instances", true},
                       {"poses", poses}});
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    io::write_png(frame_path(dir, "frame", static_cast<int>(i), "png"), f.image);
    io::write_pfm(frame_path(dir, "depth", static_cast<int>(i), "pfm"), f.gt_depth);
    io::write_label_png(frame_path(dir, "instances", static_cast<int>(i), "png"), f.instance_ids,
                        f.image.width, f.image.height);
  }
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest = dir + "/sequence.json";
  if (!fs::exists(manifest)) {
    throw ValidationError(fmt::format("'{}': missing sequence.json", dir));
  }
  json j = io::read_json_file(manifest);
  io::reject_unknown_keys(
      j, {"intrinsics", "frame_count", "has_gt_depth", "has_instances", "poses"}, manifest);

  if (!j.contains("intrinsics")) {
    throw ValidationError(fmt::format("{}: missing field 'intrinsics'", manifest));
  }
  const json& k = j.at("intrinsics");
  const std::string kctx = manifest + ": intrinsics";
  io::reject_unknown_keys(k, {"fx", "fy", "cx", "cy"}, kctx);
  Dataset ds;
  ds.sequence.intrinsics.fx = require_field<double>(k, "fx", kctx);
  ds.sequence.intrinsics.fy = require_field<double>(k, "fy", kctx);
  ds.sequence.intrinsics.cx = require_field<double>(k, "cx", kctx);
  ds.sequence.intrinsics.cy = require_field<double>(k, "cy", kctx);
  ds.sequence.intrinsics.validate();

  const int count = require_field<int>(j, "frame_count", manifest);
  if (count < 1) throw ValidationError(manifest + ": frame_count must be positive");
  bool has_gt = false, has_instances = false;
  read_field(j, "has_gt_depth", has_gt, manifest);
  read_field(j, "has_instances", has_instances, manifest);

  if (j.contains("poses")) {
    const json& p = j.at("poses");
    if (!p.is_array() || static_cast<int>(p.size()) != count) {
      throw ValidationError(
          fmt::format("{}: field 'poses' must list one pose per frame", manifest));
    }
    std::vector<RigidMotion> poses;
    for (int i = 0; i < count; ++i) {
      poses.push_back(motion_from_json(p.at(i), fmt::format("{}: poses[{}]", manifest, i)));
    }
    ds.poses = std::move(poses);
  }

  for (int i = 0; i < count; ++i) {
    training::Frame frame;
    frame.image = io::read_png(frame_path(dir, "frame", i, "png"));
    if (has_gt) {
      frame.gt_depth = io::read_pfm(frame_path(dir, "depth", i, "pfm"));
    }
    if (has_instances) {
      int w = 0, h = 0;
      frame.instance_ids = io::read_label_png(frame_path(dir, "instances", i, "png"), w, h);
      if (w != frame.image.width || h != frame.image.height) {
        throw ValidationError(
            fmt::format("'{}': instance labels of frame {} do not match the image size", dir, i));
      }
    }
    ds.sequence.frames.push_back(std::move(frame));
  }
  ds.sequence.validate();
  return ds;
}

DepthMap read_depth_auto(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pfm") return io::read_pfm(path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") {
    return io::read_depth_png(path);
  }
  throw ValidationError(
      fmt::format("'{}': depth files must be .pfm or 16-bit .png (meters * 256)", path));
}

// ----------------------------------------------------------- subcommands

namespace {

void apply_threads(int threads) {
  if (threads > 0) set_num_threads(threads);
}

int cmd_synth(const std::string& scene_path, const std::string& out_dir) {
  json doc = load_config_document(scene_path, "synth");
  if (doc.is_object() && doc.contains("scene")) {
    io::reject_unknown_keys(doc, {"scene", "output_dir"}, scene_path);
    doc = doc.at("scene");
  }
  const synthdata::SceneSpec spec = synthdata::parse_scene_spec(doc);
  const auto frames = synthdata::render_sequence(spec);
  write_dataset(out_dir, frames, spec.intrinsics);
  write_run_json(out_dir, "synth",
                 {{"scene", synthdata::scene_spec_to_json(spec)}, {"output_dir", out_dir}});
  fmt::print("wrote {} frames ({}x{}) to {}\n", frames.size(), spec.width, spec.height, out_dir);
  return 0;
}

int cmd_selfsample(const RunConfig& cfg, const std::string& dataset_dir, int frame, int epoch,
                   const std::string& checkpoint, const std::string& out_dir) {
  cfg.validate();
  const Dataset ds = load_dataset(dataset_dir);
  const int count = static_cast<int>(ds.sequence.frames.size());
  if (frame < 0 || frame >= count) {
    throw ValidationError(fmt::format("--frame {} out of range [0, {})", frame, count));
  }
  if (epoch < 0 || epoch >= std::max(cfg.train.epochs, 1)) {
    throw ValidationError(
        fmt::format("--epoch {} outside the schedule [0, {})", epoch, cfg.train.epochs));
  }
  const training::Frame& target = ds.sequence.frames[frame];

  DepthMap depth;
  if (!checkpoint.empty()) {
    const auto net = model::load_net(checkpoint);
    depth = model::predict_depth_map(net, target.image);
  } else if (target.gt_depth) {
    depth = *target.gt_depth;
  } else {
    throw ValidationError(
        fmt::format("'{}' declares no ground-truth depth; pass --checkpoint to sample from a "
                    "trained network",
                    dataset_dir));
  }

  selfsample::SamplerConfig sampler = cfg.train.sampler;
  sampler.total_epochs = std::max(cfg.train.epochs, 1);
  Rng rng = stream_rng(cfg.train.seed, Stream::kSelfSample, {static_cast<std::uint64_t>(frame)});
  const auto samples =
      selfsample::generate_batch(target.image, depth, ds.sequence.intrinsics, sampler, epoch, rng);

  fs::create_directories(out_dir);
  json index = json::array();
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    io::write_png(fmt::format("{}/sample_{}_image.png", out_dir, k), s.image);
    io::write_pfm(fmt::format("{}/sample_{}_depth.pfm", out_dir, k), s.depth);
    io::write_mask_png(fmt::format("{}/sample_{}_validity.png", out_dir, k), s.validity);
    index.push_back({{"motion", motion_to_json(s.motion)},
                     {"valid_pixels", s.validity.count()}});
  }
  io::write_json_file(out_dir + "/samples.json",
                      {{"frame", frame},
                       {"epoch", epoch},
                       {"theta_r", selfsample::theta_r_at(sampler, epoch)},
                       {"theta_t", sampler.theta_t},
                       {"samples", index}});
  write_run_json(out_dir, "selfsample",
                 {{"run", run_config_to_json(cfg)},
                  {"dataset", dataset_dir},
                  {"frame", frame},
                  {"epoch", epoch},
                  {"checkpoint", checkpoint.empty() ? json() : json(checkpoint)},
                  {"output_dir", out_dir}});
  fmt::print("wrote {} self-samples for frame {} to {}\n", samples.size(), frame, out_dir);
  return 0;
}

int cmd_warp(const std::string& dataset_dir, int target, int source, const std::string& out_dir) {
  const Dataset ds = load_dataset(dataset_dir);
  const int count = static_cast<int>(ds.sequence.frames.size());
  for (int idx : {target, source}) {
    if (idx < 0 || idx >= count) {
      throw ValidationError(fmt::format("frame index {} out of range [0, {})", idx, count));
    }
  }
  if (target == source) throw ValidationError("--target and --source must differ");
  if (!ds.poses) {
    throw ValidationError(
        fmt::format("{}/sequence.json: field 'poses' is required to warp between frames",
                    dataset_dir));
  }
  const training::Frame& tgt = ds.sequence.frames[target];
  const training::Frame& src = ds.sequence.frames[source];
  if (!tgt.gt_depth || !src.gt_depth) {
    throw ValidationError(
        fmt::format("'{}': warp needs ground-truth depth for frames {} and {}", dataset_dir,
                    target, source));
  }

  const RigidMotion motion =
      synthdata::relative_motion((*ds.poses)[target], (*ds.poses)[source]);
  const warp::SynthesisResult result = warp::synthesize_view(
      src.image, *src.gt_depth, *tgt.gt_depth, motion, ds.sequence.intrinsics);

  double overall_sum = 0, static_sum = 0, dynamic_sum = 0;
  std::int64_t overall_n = 0, static_n = 0, dynamic_n = 0;
  const int c = tgt.image.channels;
  for (size_t i = 0; i < result.valid.values.size(); ++i) {
    if (!result.valid.values[i]) continue;
    double diff = 0;
    for (int ch = 0; ch < c; ++ch) {
      const size_t at = static_cast<size_t>(ch) * result.valid.values.size() + i;
      diff += std::abs(result.image.values[at] - tgt.image.values[at]);
    }
    diff /= c;
    overall_sum += diff;
    ++overall_n;
    if (!tgt.instance_ids.empty()) {
      if (tgt.instance_ids[i] == 0) {
        static_sum += diff;
        ++static_n;
      } else {
        dynamic_sum += diff;
        ++dynamic_n;
      }
    }
  }
  if (overall_n == 0) {
    throw DegenerateInputError("warp produced no valid pixels (no overlap between the frames)");
  }

  fs::create_directories(out_dir);
  io::write_png(out_dir + "/warped.png", result.image);
  io::write_mask_png(out_dir + "/valid.png", result.valid);
  json report = {{"target", target},
                 {"source", source},
                 {"valid_pixels", overall_n},
                 {"mean_abs_residual", overall_sum / overall_n},
                 {"static_mean", static_n ? json(static_sum / static_n) : json()},
                 {"dynamic_mean", dynamic_n ? json(dynamic_sum / dynamic_n) : json()}};
  io::write_json_file(out_dir + "/residual.json", report);
  write_run_json(out_dir, "warp",
                 {{"dataset", dataset_dir},
                  {"target", target},
                  {"source", source},
                  {"output_dir", out_dir}});
  fmt::print("mean abs residual {:.6f} over {} valid pixels\n", overall_sum / overall_n,
             overall_n);
  return 0;
}

int cmd_train(RunConfig cfg, bool dry_run) {
  cfg.validate();
  if (dry_run) {
    fmt::print("{}\n", run_config_to_json(cfg).dump(2));
    fmt::print("config ok\n");
    return 0;
  }
  if (cfg.dataset.empty()) {
    throw ValidationError("no dataset: pass --dataset or set the 'dataset' config field");
  }
  if (cfg.output_dir.empty()) {
    throw ValidationError("no output directory: pass --out or set 'output_dir'");
  }
  const Dataset ds = load_dataset(cfg.dataset);
  const training::FitResult result = training::fit(cfg.train, ds.sequence);

  fs::create_directories(cfg.output_dir);
  training::save_state(result.state, cfg.output_dir + "/checkpoint.bin");
  model::save_net(training::extract_net(result.state), cfg.output_dir + "/net.bin");
  training::write_losses_csv(cfg.output_dir + "/losses.csv", result.state.history);
  training::write_epoch_metrics_json(cfg.output_dir + "/metrics.json", result.epoch_evals);
  write_run_json(cfg.output_dir, "train", run_config_to_json(cfg));

  fmt::print("trained {} epochs x {} steps on {} frames\n", cfg.train.epochs,
             cfg.train.steps_per_epoch, ds.sequence.frames.size());
  if (!result.epoch_evals.empty() && result.epoch_evals.back().holdout_metrics) {
    fmt::print("holdout abs_rel {:.4f}\n", result.epoch_evals.back().holdout_metrics->abs_rel);
  }
  return 0;
}

/// Shared by eval and decompose; `decompose` additionally requires
/// instances and emits the shape/translation split.
int cmd_eval(const RunConfig& cfg, const std::string& pred_path, const std::string& gt_path,
             const std::string& instances_path, const std::string& out_path, bool decompose) {
  cfg.validate();
  const DepthMap pred = read_depth_auto(pred_path);
  const DepthMap gt = read_depth_auto(gt_path);
  if (pred.width != gt.width || pred.height != gt.height) {
    throw ValidationError(fmt::format("'{}' ({}x{}) and '{}' ({}x{}) differ in size", pred_path,
                                      pred.width, pred.height, gt_path, gt.width, gt.height));
  }
  std::vector<int> instances;
  if (!instances_path.empty()) {
    int w = 0, h = 0;
    instances = io::read_label_png(instances_path, w, h);
    if (w != gt.width || h != gt.height) {
      throw ValidationError(
          fmt::format("'{}' ({}x{}) does not match the depth size {}x{}", instances_path, w, h,
                      gt.width, gt.height));
    }
  }
  const ValidityMask mask(gt.width, gt.height, 1);

  json out;
  out["version"] = kVersion;
  out["config"] = {{"d_min", cfg.metrics.d_min},
                   {"d_max", cfg.metrics.d_max},
                   {"median_scale", cfg.metrics.median_scale}};
  if (decompose) {
    const auto report = eval::decompose_errors(pred, gt, mask, instances, cfg.metrics);
    out["decomposition"] = eval::decomposition_to_json(report);
  } else {
    out["whole"] = eval::metrics_to_json(eval::compute_metrics(pred, gt, mask, cfg.metrics));
    if (!instances.empty()) {
      const auto regions = eval::static_dynamic_report(pred, gt, mask, instances, cfg.metrics);
      out["static"] =
          regions.static_region ? eval::metrics_to_json(*regions.static_region) : json();
      out["dynamic"] =
          regions.dynamic_region ? eval::metrics_to_json(*regions.dynamic_region) : json();
    }
  }
  if (out_path.empty()) {
    fmt::print("{}\n", out.dump(2));
  } else {
    io::write_json_file(out_path, out);
  }
  return 0;
}

int cmd_gradcheck(int seeds) {
  const auto reports = gradcheck::run_seeds(seeds);
  double worst = 0;
  for (const auto& r : reports) {
    fmt::print("{:<24} max rel err {:.3e}  ({} checked, {} skipped)\n", r.name,
               r.result.max_rel_err, r.result.checked, r.result.skipped);
    worst = std::max(worst, r.result.max_rel_err);
  }
  fmt::print("max relative error {:.3e} across {} checks, {} seeds\n", worst, reports.size(),
             seeds);
  if (worst >= 1e-4) {
    fmt::print(stderr, "gradient verification failed (tolerance 1e-4)\n");
    return 1;
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Self-supervised monocular depth with isometric self-samples"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic scene into a dataset directory");
  std::string scene_path, synth_out;
  int synth_threads = 0;
  synth->add_option("--scene", scene_path, "Scene description JSON")->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--threads", synth_threads, "Thread cap");
  synth->callback([&] {
    apply_threads(synth_threads);
    cmd_synth(scene_path, synth_out);
  });

  // selfsample
  auto* selfs = app.add_subcommand("selfsample", "Generate self-samples for one frame");
  std::string ss_dataset, ss_out, ss_config, ss_checkpoint;
  int ss_frame = 0, ss_epoch = 0, ss_threads = 0;
  std::uint64_t ss_seed = 0;
  selfs->add_option("--dataset", ss_dataset, "Dataset directory")->required();
  selfs->add_option("--frame", ss_frame, "Frame index")->required();
  selfs->add_option("--out", ss_out, "Output directory")->required();
  selfs->add_option("--epoch", ss_epoch, "Schedule position for the rotation bound");
  selfs->add_option("--config", ss_config, "Run configuration JSON");
  selfs->add_option("--checkpoint", ss_checkpoint, "Depth network to infer depth with");
  selfs->add_option("--seed", ss_seed, "Seed override");
  selfs->add_option("--threads", ss_threads, "Thread cap");
  selfs->callback([&] {
    apply_threads(ss_threads);
    RunConfig cfg = ss_config.empty() ? RunConfig{} : load_run_config(ss_config);
    if (selfs->count("--seed")) cfg.train.seed = ss_seed;
    cmd_selfsample(cfg, ss_dataset, ss_frame, ss_epoch, ss_checkpoint, ss_out);
  });

  // warp
  auto* warp_cmd = app.add_subcommand("warp", "Synthesize one frame from another with GT data");
  std::string w_dataset, w_out;
  int w_target = 0, w_source = 0, w_threads = 0;
  warp_cmd->add_option("--dataset", w_dataset, "Dataset directory")->required();
  warp_cmd->add_option("--target", w_target, "Target frame index")->required();
  warp_cmd->add_option("--source", w_source, "Source frame index")->required();
  warp_cmd->add_option("--out", w_out, "Output directory")->required();
  warp_cmd->add_option("--threads", w_threads, "Thread cap");
  warp_cmd->callback([&] {
    apply_threads(w_threads);
    cmd_warp(w_dataset, w_target, w_source, w_out);
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the depth network on a dataset");
  std::string t_config, t_dataset, t_out;
  std::uint64_t t_seed = 0;
  int t_epochs = 0, t_steps = 0, t_batch = 0, t_threads = 0;
  double t_lambda3 = 0;
  bool t_dry = false;
  train_cmd->add_option("--config", t_config, "Run configuration JSON (or a train run.json)");
  train_cmd->add_option("--dataset", t_dataset, "Dataset directory (overrides config)");
  train_cmd->add_option("--out", t_out, "Output directory (overrides config)");
  train_cmd->add_option("--seed", t_seed, "Seed (overrides config)");
  train_cmd->add_option("--epochs", t_epochs, "Epochs (overrides config)");
  train_cmd->add_option("--steps", t_steps, "Steps per epoch (overrides config)");
  train_cmd->add_option("--batch", t_batch, "Batch size (overrides config)");
  train_cmd->add_option("--lambda3", t_lambda3, "Self-sample loss weight (overrides config)");
  train_cmd->add_option("--threads", t_threads, "Thread cap (overrides config)");
  train_cmd->add_flag("--dry-run", t_dry, "Validate the configuration and exit");
  train_cmd->callback([&] {
    RunConfig cfg = t_config.empty() ? RunConfig{} : load_run_config(t_config);
    if (train_cmd->count("--dataset")) cfg.dataset = t_dataset;
    if (train_cmd->count("--out")) cfg.output_dir = t_out;
    if (train_cmd->count("--seed")) cfg.train.seed = t_seed;
    if (train_cmd->count("--epochs")) cfg.train.epochs = t_epochs;
    if (train_cmd->count("--steps")) cfg.train.steps_per_epoch = t_steps;
    if (train_cmd->count("--batch")) cfg.train.batch_size = t_batch;
    if (train_cmd->count("--lambda3")) cfg.train.loss_weights.lambda3 = t_lambda3;
    if (train_cmd->count("--threads")) cfg.threads = t_threads;
    apply_threads(cfg.threads);
    cmd_train(std::move(cfg), t_dry);
  });

  // eval / decompose share flags
  std::string e_pred, e_gt, e_instances, e_config, e_out;
  auto add_eval_options = [&](CLI::App* sub, bool instances_required) {
    sub->add_option("--pred", e_pred, "Predicted depth (.pfm or 16-bit .png)")->required();
    sub->add_option("--gt", e_gt, "Ground-truth depth")->required();
    auto* inst = sub->add_option("--instances", e_instances, "Instance label PNG");
    if (instances_required) inst->required();
    sub->add_option("--config", e_config, "Run configuration JSON (eval section)");
    sub->add_option("--out", e_out, "Write the report here instead of stdout");
  };
  auto* eval_cmd = app.add_subcommand("eval", "Depth error metrics against ground truth");
  add_eval_options(eval_cmd, false);
  eval_cmd->callback([&] {
    RunConfig cfg = e_config.empty() ? RunConfig{} : load_run_config(e_config);
    cmd_eval(cfg, e_pred, e_gt, e_instances, e_out, false);
  });
  auto* dec_cmd =
      app.add_subcommand("decompose", "Shape/translation error decomposition per region");
  add_eval_options(dec_cmd, true);
  dec_cmd->callback([&] {
    RunConfig cfg = e_config.empty() ? RunConfig{} : load_run_config(e_config);
    cmd_eval(cfg, e_pred, e_gt, e_instances, e_out, true);
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of all gradients");
  int gc_seeds = 10, gc_threads = 0;
  gc->add_option("--seeds", gc_seeds, "Number of input seeds")->check(CLI::PositiveNumber);
  gc->add_option("--threads", gc_threads, "Thread cap");
  int gc_rc = 0;
  gc->callback([&] {
    apply_threads(gc_threads);
    gc_rc = cmd_gradcheck(gc_seeds);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message; exit code contract is ours
    return 1;
  } catch (const DegenerateInputError& e) {
    fmt::print(stderr, "degenerate input: {}\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const FormatError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return gc_rc;
}

}  // namespace issl::cli
