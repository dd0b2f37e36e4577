// File formats: PFM float depth, PNG images/masks, and the checkpoint
// container (one-line JSON manifest + float32 blob). All multi-byte payloads
// are little-endian on disk except PNG's own 16-bit samples, which follow
// the PNG convention (big-endian) and are packed explicitly.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "issl/types.hpp"
#include "json.hpp"

namespace issl::io {

/// Grayscale PFM ("Pf"), float32, negative scale (little-endian), rows
/// stored bottom-up per the format. Color ("PF") files are rejected.
void write_pfm(const std::string& path, const DepthMap& depth);
DepthMap read_pfm(const std::string& path);

/// 8-bit PNG; image values in [0,1], 1 or 3 channels.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

/// 16-bit grayscale PNG with depth = stored / 256 meters. Values beyond
/// the representable range saturate; zero reads back as zero (missing).
void write_depth_png(const std::string& path, const DepthMap& depth);
DepthMap read_depth_png(const std::string& path);

/// 8-bit grayscale PNG holding small integer labels verbatim (0 =
/// background). Rejects labels outside [0, 255].
void write_label_png(const std::string& path, const std::vector<int>& labels, int width,
                     int height);
std::vector<int> read_label_png(const std::string& path, int& width, int& height);

/// Binary mask as a label PNG with values 0/1.
void write_mask_png(const std::string& path, const ValidityMask& mask);
ValidityMask read_mask_png(const std::string& path);

/// Checkpoint container: manifest serialized compactly on the first line,
/// then raw float32 payload. The reader checks the byte count divides
/// evenly; semantic shape checks belong to the caller.
void write_blob(const std::string& path, const nlohmann::json& manifest,
                const std::vector<float>& blob);
std::pair<nlohmann::json, std::vector<float>> read_blob(const std::string& path);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

/// Strict-schema guard: `j` must be an object and every key must appear in
/// `allowed`. Violations name the offending key and its context.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

}  // namespace issl::io
