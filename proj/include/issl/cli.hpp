// Command-line entry point: configuration loading with strict schemas,
// dataset directory ingestion, and the subcommands that tie the modules
// into reproducible runs. Everything lives behind run() so tests can drive
// the binary's behavior in-process.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "issl/eval.hpp"
#include "issl/synthdata.hpp"
#include "issl/training.hpp"
#include "issl/types.hpp"
#include "json.hpp"

namespace issl::cli {

inline constexpr const char* kVersion = "0.3.0";

/// Resolved settings for a run: the training configuration (which carries
/// loss weights, sampler bounds, and network shape), metric options,
/// dataset location, output directory, and the thread cap.
struct RunConfig {
  training::TrainConfig train;
  eval::MetricOptions metrics;
  std::string dataset;
  std::string output_dir;
  int threads = 0;  // 0 keeps the process-wide default

  void validate() const;
};

/// Strict parse: unknown keys at any level are rejected, naming the key
/// and `context` (normally the config file path). Every field is optional
/// and defaults as the structs do.
RunConfig parse_run_config(const nlohmann::json& j, const std::string& context);
nlohmann::json run_config_to_json(const RunConfig& config);

/// A dataset directory: numbered frames plus sequence.json. Camera poses
/// are carried separately from the training sequence, which must not see
/// them.
struct Dataset {
  training::Sequence sequence;
  std::optional<std::vector<RigidMotion>> poses;  // camera-to-world per frame
};

Dataset load_dataset(const std::string& dir);

/// Writes rendered frames in the dataset layout: frame_%04d.png,
/// depth_%04d.pfm, instances_%04d.png, and sequence.json with intrinsics
/// and poses.
void write_dataset(const std::string& dir, const std::vector<synthdata::RenderedFrame>& frames,
                   const CameraIntrinsics& intrinsics);

/// Reads a depth file by extension: .pfm, or 16-bit .png storing
/// meters * 256.
DepthMap read_depth_auto(const std::string& path);

/// Dispatches argv to a subcommand. Returns the process exit code:
/// 0 success, 1 validation/format error, 2 degenerate input.
int run(int argc, const char* const* argv);

}  // namespace issl::cli
