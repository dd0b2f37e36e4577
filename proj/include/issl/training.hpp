// The optimization loop: per-step view synthesis against neighboring
// frames, self-sample generation with re-inference, loss assembly, and an
// Adam update of network parameters and per-pair pose variables.
//
// Randomness is drawn from streams derived from (seed, purpose, epoch,
// step), never from a shared mutable engine. Two consequences the tests
// rely on: disabling one concern (say, self-sampling) cannot shift the
// draws of another, and a serialized state resumes bitwise because the
// stream position is a pure function of the loop counters.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "issl/eval.hpp"
#include "issl/losses.hpp"
#include "issl/model.hpp"
#include "issl/selfsample.hpp"
#include "issl/synthdata.hpp"
#include "issl/types.hpp"

namespace issl::training {

struct Frame {
  Image image;
  std::optional<DepthMap> gt_depth;  // present for synthetic or annotated data
  std::vector<int> instance_ids;     // empty when unknown
};

struct Sequence {
  CameraIntrinsics intrinsics;
  std::vector<Frame> frames;

  void validate() const;
};

/// Adapts renderer output (which carries poses the trainer must not see)
/// into a training sequence.
Sequence sequence_from_rendered(const std::vector<synthdata::RenderedFrame>& frames,
                                const CameraIntrinsics& intrinsics);

struct TrainConfig {
  int epochs = 20;
  int steps_per_epoch = 200;
  int batch_size = 2;
  double learning_rate = 1e-4;
  int lr_decay_epoch = 15;
  double lr_decay_factor = 10.0;
  // Source frames per target, split evenly between preceding and
  // succeeding neighbors; 2 means (i-1, i+1).
  int source_frames = 2;
  std::uint64_t seed = 0;
  losses::LossWeights loss_weights;
  // The sampler's rotation schedule always spans this config's `epochs`;
  // its own total_epochs field is ignored here.
  selfsample::SamplerConfig sampler;
  model::NetConfig net;
  // Per-epoch evaluation frame. -1 picks the middle frame; the chosen
  // frame is excluded from training targets.
  bool holdout_eval = true;
  int holdout_frame = -1;

  void validate() const;
};

/// Target frame index plus its source frame indices in ascending order.
struct TrainingTuple {
  int target = 0;
  std::vector<int> sources;
};

/// All sliding-window tuples of a sequence; the first and last
/// source_frames/2 frames never serve as targets, and neither does
/// `exclude_target` when set.
std::vector<TrainingTuple> make_tuples(const Sequence& seq, int source_frames,
                                       std::optional<int> exclude_target = std::nullopt);

struct StepLosses {
  float photometric = 0;
  float smoothness = 0;
  float issl = 0;
  float total = 0;
  bool updated = false;  // false when the step was skipped as degenerate
};

/// Everything needed to continue training: counters, parameters (network
/// arrays first, then one 6-vector per (target,source) pose), Adam
/// moments, and the loss history. The rng needs no serialized position;
/// streams are re-derived from (seed, epoch, step).
struct TrainState {
  int epoch = 0;
  int step = 0;  // within the current epoch
  std::int64_t adam_updates = 0;
  std::uint64_t seed = 0;
  model::NetConfig net_config;
  std::vector<model::ParamArray<float>> params;
  std::vector<std::vector<float>> adam_m;
  std::vector<std::vector<float>> adam_v;
  std::vector<StepLosses> history;
};

inline constexpr int kNetParamCount = 10;

/// Network weights from the weight-init stream of config.seed, plus one
/// zero-rotation pose per (target,source) pair with a small forward
/// translation so warped and unwarped photometric errors differ from the
/// first step (the auto-mask is a strict comparison).
TrainState init_state(const TrainConfig& config, const std::vector<TrainingTuple>& tuples);

/// The network slice of the parameter list.
model::TinyDepthNet<float> extract_net(const TrainState& state);

/// Learning rate for an epoch: the configured rate, divided once by
/// lr_decay_factor from lr_decay_epoch onward.
double lr_at(const TrainConfig& config, int epoch);

/// The batch of tuple draws for (epoch, step), sampled with replacement
/// from the batch-order stream.
std::vector<TrainingTuple> draw_batch(const std::vector<TrainingTuple>& tuples,
                                      const TrainConfig& config, int epoch, int step);

/// One optimization step over a batch: predict target depth, synthesize
/// each source under its pose variables, assemble the masked photometric
/// minimum, smoothness, and (when weighted) the self-sample consistency
/// term from re-inference on detached samples, then apply one Adam update
/// (beta1 0.9, beta2 0.999, eps 1e-8) to every parameter. A batch whose
/// losses are undefined (no valid pixels anywhere) is skipped with a
/// warning on stderr; the step counter still advances so loss curves stay
/// aligned with the schedule.
StepLosses train_step(TrainState& state, const TrainConfig& config, const Sequence& seq,
                      const std::vector<TrainingTuple>& batch);

struct EpochEval {
  int epoch = 0;
  double lr = 0;
  double theta_r = 0;
  std::optional<int> holdout_frame;
  std::optional<eval::DepthMetrics> holdout_metrics;  // needs ground truth
};

struct FitResult {
  TrainState state;
  std::vector<EpochEval> epoch_evals;
};

/// Runs epochs x steps_per_epoch train_steps with the rotation schedule
/// advanced per epoch, evaluating the held-out frame after each epoch.
/// Zero epochs returns the freshly initialized state untouched.
FitResult fit(const TrainConfig& config, const Sequence& seq);

/// Serialized as a manifest line (counters, config, array layout) plus one
/// float32 blob holding parameters, both moment sets, and the loss
/// history. Round-trips bitwise.
void save_state(const TrainState& state, const std::string& path);
TrainState load_state(const std::string& path);

/// "step,L_p,L_s,L_issl,total" rows, one per recorded step.
void write_losses_csv(const std::string& path, const std::vector<StepLosses>& history);
void write_epoch_metrics_json(const std::string& path, const std::vector<EpochEval>& evals);

}  // namespace issl::training
