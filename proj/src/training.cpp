#include "issl/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include "fmt/format.h"
#include "issl/errors.hpp"
#include "issl/graph.hpp"
#include "issl/io.hpp"
#include "issl/random.hpp"
#include "json.hpp"

namespace issl::training {

namespace {

constexpr float kAdamBeta1 = 0.9f;
constexpr float kAdamBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;
// Initial forward translation of every pose variable. Exactly zero poses
// would make the warped and unwarped photometric maps identical, and the
// strict auto-mask comparison would then discard every pixel of the first
// step.
constexpr float kPoseInitTz = 1e-3f;

std::string pose_name(int target, int source) {
  return fmt::format("pose.{}.{}", target, source);
}

int find_param(const TrainState& state, const std::string& name) {
  for (size_t i = 0; i < state.params.size(); ++i) {
    if (state.params[i].name == name) return static_cast<int>(i);
  }
  throw ValidationError(
      fmt::format("no parameter '{}'; state was initialized for a different tuple set", name));
}

std::vector<float> to_float(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

ad::Tensor<float> image_constant(ad::Tape<float>& tape, const Image& image) {
  return tape.constant({image.channels, image.height, image.width}, to_float(image.values));
}

void accumulate_grad(std::vector<float>& acc, const ad::Tensor<float>& t) {
  const std::vector<float>& g = t.grad();
  if (g.empty()) return;  // no gradient reached this variable
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

nlohmann::json net_config_to_json(const model::NetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"widths", c.widths},
          {"d_min", c.d_min},
          {"d_max", c.d_max}};
}

model::NetConfig net_config_from_json(const nlohmann::json& j) {
  model::NetConfig c;
  c.in_channels = j.at("in_channels");
  c.widths = j.at("widths");
  c.d_min = j.at("d_min");
  c.d_max = j.at("d_max");
  return c;
}

}  // namespace

void Sequence::validate() const {
  intrinsics.validate();
  if (frames.empty()) throw ValidationError("sequence has no frames");
  const Frame& first = frames.front();
  first.image.validate();
  for (size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    f.image.validate();
    if (f.image.width != first.image.width || f.image.height != first.image.height ||
        f.image.channels != first.image.channels) {
      throw ValidationError(fmt::format("frame {} differs in shape from frame 0", i));
    }
    if (f.gt_depth && (f.gt_depth->width != f.image.width || f.gt_depth->height != f.image.height)) {
      throw ValidationError(fmt::format("frame {}: ground-truth depth shape mismatch", i));
    }
    if (!f.instance_ids.empty() &&
        f.instance_ids.size() != static_cast<size_t>(f.image.width) * f.image.height) {
      throw ValidationError(fmt::format("frame {}: instance label shape mismatch", i));
    }
  }
}

Sequence sequence_from_rendered(const std::vector<synthdata::RenderedFrame>& frames,
                                const CameraIntrinsics& intrinsics) {
  Sequence seq;
  seq.intrinsics = intrinsics;
  seq.frames.reserve(frames.size());
  for (const synthdata::RenderedFrame& f : frames) {
    seq.frames.push_back(Frame{f.image, f.gt_depth, f.instance_ids});
  }
  return seq;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be nonnegative");
  if (steps_per_epoch <= 0) throw ValidationError("steps_per_epoch must be positive");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (learning_rate <= 0) throw ValidationError("learning_rate must be positive");
  if (lr_decay_epoch < 0) throw ValidationError("lr_decay_epoch must be nonnegative");
  if (lr_decay_factor < 1) throw ValidationError("lr_decay_factor must be at least 1");
  if (source_frames < 2 || source_frames % 2 != 0) {
    throw ValidationError("source_frames must be even and at least 2");
  }
  loss_weights.validate();
  selfsample::SamplerConfig sampler_copy = sampler;
  sampler_copy.total_epochs = epochs > 0 ? epochs : 1;
  sampler_copy.validate();
  net.validate();
}

std::vector<TrainingTuple> make_tuples(const Sequence& seq, int source_frames,
                                       std::optional<int> exclude_target) {
  if (source_frames < 2 || source_frames % 2 != 0) {
    throw ValidationError("source_frames must be even and at least 2");
  }
  const int half = source_frames / 2;
  const int n = static_cast<int>(seq.frames.size());
  std::vector<TrainingTuple> tuples;
  for (int i = half; i < n - half; ++i) {
    if (exclude_target && *exclude_target == i) continue;
    TrainingTuple t;
    t.target = i;
    for (int k = half; k >= 1; --k) t.sources.push_back(i - k);
    for (int k = 1; k <= half; ++k) t.sources.push_back(i + k);
    tuples.push_back(std::move(t));
  }
  return tuples;
}

TrainState init_state(const TrainConfig& config, const std::vector<TrainingTuple>& tuples) {
  config.validate();
  TrainState state;
  state.seed = config.seed;
  state.net_config = config.net;
  model::TinyDepthNet<float> net = model::make_net<float>(config.net, config.seed);
  state.params = std::move(net.params);
  for (const TrainingTuple& t : tuples) {
    for (int s : t.sources) {
      model::ParamArray<float> p;
      p.name = pose_name(t.target, s);
      p.shape = {6};
      p.values = {0, 0, 0, 0, 0, kPoseInitTz};
      state.params.push_back(std::move(p));
    }
  }
  state.adam_m.resize(state.params.size());
  state.adam_v.resize(state.params.size());
  for (size_t i = 0; i < state.params.size(); ++i) {
    state.adam_m[i].assign(state.params[i].values.size(), 0.f);
    state.adam_v[i].assign(state.params[i].values.size(), 0.f);
  }
  return state;
}

model::TinyDepthNet<float> extract_net(const TrainState& state) {
  if (state.params.size() < kNetParamCount) {
    throw ValidationError("state holds fewer arrays than the network layout");
  }
  model::TinyDepthNet<float> net;
  net.config = state.net_config;
  net.params.assign(state.params.begin(), state.params.begin() + kNetParamCount);
  return net;
}

double lr_at(const TrainConfig& config, int epoch) {
  if (epoch < 0) throw ValidationError("epoch must be nonnegative");
  return epoch < config.lr_decay_epoch ? config.learning_rate
                                       : config.learning_rate / config.lr_decay_factor;
}

std::vector<TrainingTuple> draw_batch(const std::vector<TrainingTuple>& tuples,
                                      const TrainConfig& config, int epoch, int step) {
  if (tuples.empty()) throw ValidationError("cannot draw a batch from an empty tuple set");
  Rng rng = stream_rng(config.seed, Stream::kBatchOrder,
                       {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step)});
  std::vector<TrainingTuple> batch;
  batch.reserve(config.batch_size);
  for (int j = 0; j < config.batch_size; ++j) {
    batch.push_back(tuples[rng.next_u64() % tuples.size()]);
  }
  return batch;
}

StepLosses train_step(TrainState& state, const TrainConfig& config, const Sequence& seq,
                      const std::vector<TrainingTuple>& batch) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  const int n_frames = static_cast<int>(seq.frames.size());
  for (const TrainingTuple& t : batch) {
    if (t.target < 0 || t.target >= n_frames) throw ValidationError("batch target out of range");
    for (int s : t.sources) {
      if (s < 0 || s >= n_frames) throw ValidationError("batch source out of range");
    }
  }

  const int width = seq.frames[0].image.width;
  const int height = seq.frames[0].image.height;
  const int channels = seq.frames[0].image.channels;
  const int batch_n = static_cast<int>(batch.size());

  selfsample::SamplerConfig sampler = config.sampler;
  sampler.total_epochs = config.epochs > 0 ? config.epochs : 1;

  std::vector<std::vector<float>> grad_acc(state.params.size());
  for (size_t i = 0; i < state.params.size(); ++i) {
    grad_acc[i].assign(state.params[i].values.size(), 0.f);
  }

  StepLosses step_losses;
  try {
    for (int item = 0; item < batch_n; ++item) {
      const TrainingTuple& tuple = batch[item];
      const Frame& target = seq.frames[tuple.target];

      ad::Tape<float> tape;
      std::vector<ad::Tensor<float>> net_vars;
      net_vars.reserve(kNetParamCount);
      for (int p = 0; p < kNetParamCount; ++p) {
        net_vars.push_back(tape.variable(state.params[p].shape, state.params[p].values));
      }
      ad::Tensor<float> target_t = image_constant(tape, target.image);
      ad::Tensor<float> depth_t = model::predict_depth(state.net_config, net_vars, target_t);

      // Warped photometric map per source, plus where the warp landed
      // inside the source raster at all.
      std::vector<ad::Tensor<float>> pose_vars;
      std::vector<int> pose_slots;
      std::vector<ad::Tensor<float>> photo_maps;
      std::vector<ValidityMask> valid_masks;
      for (int s : tuple.sources) {
        const int slot = find_param(state, pose_name(tuple.target, s));
        pose_slots.push_back(slot);
        pose_vars.push_back(tape.variable({6}, state.params[slot].values));
        ad::Tensor<float> source_t = image_constant(tape, seq.frames[s].image);
        graph::SynthesisGraph<float> synth =
            graph::synthesize(source_t, depth_t, pose_vars.back(), seq.intrinsics);
        photo_maps.push_back(
            losses::photometric_map(synth.image, target_t, config.loss_weights.alpha));
        valid_masks.push_back(std::move(synth.valid));
      }
      ad::Tensor<float> min_map = losses::min_reprojection(photo_maps);

      // Auto-mask from forward values; stationary pixels (unwarped source
      // already at least as close) drop out, as do pixels no source view
      // covers.
      std::vector<std::vector<float>> warped_values;
      warped_values.reserve(photo_maps.size());
      for (const auto& pm : photo_maps) warped_values.push_back(pm.values());
      std::vector<std::vector<float>> source_values;
      source_values.reserve(tuple.sources.size());
      for (int s : tuple.sources) source_values.push_back(to_float(seq.frames[s].image.values));
      const std::vector<std::vector<float>> unwarped = losses::unwarped_photometric_values(
          to_float(target.image.values), source_values, channels, height, width,
          config.loss_weights.alpha);
      std::vector<float> mask = losses::automask(warped_values, unwarped);
      for (size_t i = 0; i < mask.size(); ++i) {
        bool any_valid = false;
        for (const ValidityMask& vm : valid_masks) any_valid = any_valid || vm.values[i] != 0;
        if (!any_valid) mask[i] = 0.f;
      }

      ad::Tensor<float> mask_t = tape.constant({height, width}, std::move(mask));
      ad::Tensor<float> l_photo = ad::masked_reduce(min_map, mask_t, ad::MaskedReduce::kMean);
      ad::Tensor<float> l_smooth = losses::smoothness_loss(depth_t, target_t);

      ad::Tensor<float> l_issl;  // stays undefined when the term is off
      if (config.loss_weights.lambda3 > 0) {
        // The samples are data: generation runs on detached forward values
        // and only re-inference contributes gradients.
        DepthMap detached(width, height);
        const std::vector<float>& dv = depth_t.values();
        for (size_t i = 0; i < dv.size(); ++i) detached.values[i] = dv[i];
        Rng sample_rng = stream_rng(state.seed, Stream::kSelfSample,
                                    {static_cast<std::uint64_t>(state.epoch),
                                     static_cast<std::uint64_t>(state.step),
                                     static_cast<std::uint64_t>(item)});
        const std::vector<selfsample::SelfSample> samples = selfsample::generate_batch(
            target.image, detached, seq.intrinsics, sampler, state.epoch, sample_rng);
        ad::Tensor<float> acc;
        for (const selfsample::SelfSample& sample : samples) {
          ad::Tensor<float> self_t = image_constant(tape, sample.image);
          ad::Tensor<float> d_hat = model::predict_depth(state.net_config, net_vars, self_t);
          ad::Tensor<float> term = losses::issl_loss(d_hat, to_float(sample.depth.values),
                                                     sample.validity.values, true,
                                                     losses::IsslReduction::kMean);
          acc = acc.defined() ? acc + term : term;
        }
        l_issl = acc / static_cast<float>(samples.size());
      }

      ad::Tensor<float> total =
          losses::total_loss(tape, config.loss_weights, l_photo, l_smooth, l_issl);
      tape.backward(total);

      step_losses.photometric += l_photo.value();
      step_losses.smoothness += l_smooth.value();
      if (l_issl.defined()) step_losses.issl += l_issl.value();
      step_losses.total += total.value();
      for (int p = 0; p < kNetParamCount; ++p) accumulate_grad(grad_acc[p], net_vars[p]);
      for (size_t k = 0; k < pose_vars.size(); ++k) {
        accumulate_grad(grad_acc[pose_slots[k]], pose_vars[k]);
      }
    }
  } catch (const DegenerateInputError& e) {
    fmt::print(stderr, "warning: skipping step {} of epoch {}: {}\n", state.step, state.epoch,
               e.what());
    const float nan = std::numeric_limits<float>::quiet_NaN();
    StepLosses skipped{nan, nan, nan, nan, false};
    state.step += 1;
    state.history.push_back(skipped);
    return skipped;
  }

  const float inv_batch = 1.0f / static_cast<float>(batch_n);
  step_losses.photometric *= inv_batch;
  step_losses.smoothness *= inv_batch;
  step_losses.issl *= inv_batch;
  step_losses.total *= inv_batch;
  step_losses.updated = true;

  // One Adam update over every parameter, batch-mean gradients.
  state.adam_updates += 1;
  const float corr1 =
      static_cast<float>(1.0 - std::pow(static_cast<double>(kAdamBeta1), state.adam_updates));
  const float corr2 =
      static_cast<float>(1.0 - std::pow(static_cast<double>(kAdamBeta2), state.adam_updates));
  const float lr = static_cast<float>(lr_at(config, state.epoch));
  for (size_t i = 0; i < state.params.size(); ++i) {
    std::vector<float>& p = state.params[i].values;
    std::vector<float>& m = state.adam_m[i];
    std::vector<float>& v = state.adam_v[i];
    for (size_t e = 0; e < p.size(); ++e) {
      const float g = grad_acc[i][e] * inv_batch;
      m[e] = kAdamBeta1 * m[e] + (1.0f - kAdamBeta1) * g;
      v[e] = kAdamBeta2 * v[e] + (1.0f - kAdamBeta2) * g * g;
      const float m_hat = m[e] / corr1;
      const float v_hat = v[e] / corr2;
      p[e] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
  }

  state.step += 1;
  state.history.push_back(step_losses);
  return step_losses;
}

namespace {

EpochEval evaluate_epoch(const TrainState& state, const TrainConfig& config, const Sequence& seq,
                         std::optional<int> holdout, int epoch) {
  EpochEval out;
  out.epoch = epoch;
  out.lr = lr_at(config, epoch);
  selfsample::SamplerConfig sampler = config.sampler;
  sampler.total_epochs = config.epochs > 0 ? config.epochs : 1;
  out.theta_r = selfsample::theta_r_at(sampler, epoch);
  if (!holdout) return out;

  out.holdout_frame = *holdout;
  const Frame& frame = seq.frames[*holdout];
  if (!frame.gt_depth) return out;  // nothing to score against

  const DepthMap pred = model::predict_depth_map(extract_net(state), frame.image);
  const ValidityMask all(frame.image.width, frame.image.height, 1);
  out.holdout_metrics = eval::compute_metrics(pred, *frame.gt_depth, all, eval::MetricOptions{});
  return out;
}

}  // namespace

FitResult fit(const TrainConfig& config, const Sequence& seq) {
  config.validate();
  seq.validate();

  std::optional<int> holdout;
  if (config.holdout_eval) {
    holdout = config.holdout_frame < 0 ? static_cast<int>(seq.frames.size()) / 2
                                       : config.holdout_frame;
    if (*holdout >= static_cast<int>(seq.frames.size())) {
      throw ValidationError(fmt::format("holdout frame {} outside the {}-frame sequence",
                                        *holdout, seq.frames.size()));
    }
  }
  const std::vector<TrainingTuple> tuples = make_tuples(seq, config.source_frames, holdout);
  if (tuples.empty()) {
    throw ValidationError("no training tuples: sequence too short for the source window");
  }

  FitResult result;
  result.state = init_state(config, tuples);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    result.state.epoch = epoch;
    result.state.step = 0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      const std::vector<TrainingTuple> batch = draw_batch(tuples, config, epoch, step);
      train_step(result.state, config, seq, batch);
    }
    result.epoch_evals.push_back(evaluate_epoch(result.state, config, seq, holdout, epoch));
  }
  return result;
}

void save_state(const TrainState& state, const std::string& path) {
  nlohmann::json manifest;
  manifest["kind"] = "train_state";
  manifest["epoch"] = state.epoch;
  manifest["step"] = state.step;
  manifest["adam_updates"] = state.adam_updates;
  manifest["seed"] = state.seed;
  manifest["net"] = net_config_to_json(state.net_config);
  nlohmann::json arrays = nlohmann::json::array();
  for (const model::ParamArray<float>& p : state.params) {
    arrays.push_back({{"name", p.name}, {"shape", p.shape}});
  }
  manifest["arrays"] = std::move(arrays);
  manifest["history_rows"] = state.history.size();

  std::vector<float> blob;
  for (const model::ParamArray<float>& p : state.params) {
    blob.insert(blob.end(), p.values.begin(), p.values.end());
  }
  for (const std::vector<float>& m : state.adam_m) blob.insert(blob.end(), m.begin(), m.end());
  for (const std::vector<float>& v : state.adam_v) blob.insert(blob.end(), v.begin(), v.end());
  for (const StepLosses& row : state.history) {
    blob.insert(blob.end(), {row.photometric, row.smoothness, row.issl, row.total,
                             row.updated ? 1.0f : 0.0f});
  }
  io::write_blob(path, manifest, blob);
}

TrainState load_state(const std::string& path) {
  auto [manifest, blob] = io::read_blob(path);
  TrainState state;
  try {
    if (manifest.at("kind") != "train_state") {
      throw FormatError(fmt::format("'{}': not a training state (kind = {})", path,
                                    manifest.at("kind").dump()));
    }
    state.epoch = manifest.at("epoch");
    state.step = manifest.at("step");
    state.adam_updates = manifest.at("adam_updates");
    state.seed = manifest.at("seed");
    state.net_config = net_config_from_json(manifest.at("net"));

    size_t offset = 0;
    auto take = [&](size_t count) {
      if (offset + count > blob.size()) {
        throw FormatError(fmt::format("'{}': state blob shorter than its manifest", path));
      }
      std::vector<float> out(blob.begin() + offset, blob.begin() + offset + count);
      offset += count;
      return out;
    };

    for (const nlohmann::json& entry : manifest.at("arrays")) {
      model::ParamArray<float> p;
      p.name = entry.at("name");
      p.shape = entry.at("shape").get<ad::Shape>();
      p.values = take(static_cast<size_t>(ad::numel(p.shape)));
      state.params.push_back(std::move(p));
    }
    for (const model::ParamArray<float>& p : state.params) {
      state.adam_m.push_back(take(p.values.size()));
    }
    for (const model::ParamArray<float>& p : state.params) {
      state.adam_v.push_back(take(p.values.size()));
    }
    const size_t rows = manifest.at("history_rows");
    for (size_t r = 0; r < rows; ++r) {
      std::vector<float> row = take(5);
      state.history.push_back(StepLosses{row[0], row[1], row[2], row[3], row[4] != 0.0f});
    }
    if (offset != blob.size()) {
      throw FormatError(fmt::format("'{}': {} trailing floats after the declared layout", path,
                                    blob.size() - offset));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("'{}': malformed state manifest: {}", path, e.what()));
  }
  if (state.params.size() < kNetParamCount) {
    throw FormatError(fmt::format("'{}': fewer arrays than the network layout", path));
  }
  return state;
}

void write_losses_csv(const std::string& path, const std::vector<StepLosses>& history) {
  std::string text = "step,L_p,L_s,L_issl,total\n";
  for (size_t i = 0; i < history.size(); ++i) {
    const StepLosses& row = history[i];
    text += fmt::format("{},{},{},{},{}\n", i, row.photometric, row.smoothness, row.issl,
                        row.total);
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw ValidationError(fmt::format("cannot open '{}' for writing", path));
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

void write_epoch_metrics_json(const std::string& path, const std::vector<EpochEval>& evals) {
  nlohmann::json rows = nlohmann::json::array();
  for (const EpochEval& e : evals) {
    nlohmann::json row;
    row["epoch"] = e.epoch;
    row["lr"] = e.lr;
    row["theta_r"] = e.theta_r;
    row["holdout_frame"] = e.holdout_frame ? nlohmann::json(*e.holdout_frame) : nullptr;
    row["metrics"] = e.holdout_metrics ? eval::metrics_to_json(*e.holdout_metrics) : nullptr;
    rows.push_back(std::move(row));
  }
  io::write_json_file(path, rows);
}

}  // namespace issl::training
