#include "issl/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "issl/errors.hpp"

// The float blob formats below memcpy host floats straight to disk.
static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

namespace issl::io {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot open '{}' for writing", path));
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open '{}'", path));
  return in;
}

}  // namespace

void write_pfm(const std::string& path, const DepthMap& depth) {
  if (depth.width <= 0 || depth.height <= 0) throw ValidationError("write_pfm: empty depth map");
  std::ofstream out = open_out(path);
  out << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(depth.width));
  for (int y = depth.height - 1; y >= 0; --y) {  // bottom row first
    for (int x = 0; x < depth.width; ++x) row[x] = static_cast<float>(depth.at(x, y));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw FormatError(fmt::format("short write to '{}'", path));
}

DepthMap read_pfm(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string magic;
  in >> magic;
  if (magic == "PF") throw FormatError(fmt::format("'{}': color PFM is not supported", path));
  if (magic != "Pf") throw FormatError(fmt::format("'{}': not a PFM file", path));
  int w = 0, h = 0;
  double scale = 0.0;
  in >> w >> h >> scale;
  if (!in || w <= 0 || h <= 0) throw FormatError(fmt::format("'{}': bad PFM header", path));
  if (scale >= 0.0) {
    throw FormatError(fmt::format("'{}': big-endian PFM (scale {}) not supported", path, scale));
  }
  in.get();  // single whitespace byte terminating the header

  DepthMap depth(w, h);
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw FormatError(fmt::format("'{}': truncated PFM payload", path));
    for (int x = 0; x < w; ++x) depth.at(x, y) = row[x];
  }
  return depth;
}

namespace {

// libpng error handling: route both read and write failures into the
// longjmp target and surface them as FormatError afterwards.

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;

  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, &info);
    if (file) std::fclose(file);
  }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;

  ~PngReader() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    if (file) std::fclose(file);
  }
};

void write_png_rows(const std::string& path, int width, int height, int channels, int bit_depth,
                    const std::vector<std::uint8_t>& bytes) {
  PngWriter ctx;
  ctx.file = std::fopen(path.c_str(), "wb");
  if (!ctx.file) throw FormatError(fmt::format("cannot open '{}' for writing", path));
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw FormatError("png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw FormatError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw FormatError(fmt::format("PNG write to '{}' failed", path));

  png_init_io(ctx.png, ctx.file);
  const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(ctx.png, ctx.info, width, height, bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  const size_t stride = static_cast<size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(ctx.png, const_cast<png_bytep>(bytes.data() + y * stride));
  }
  png_write_end(ctx.png, nullptr);
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // row-major, 16-bit samples big-endian
};

DecodedPng read_png_rows(const std::string& path) {
  PngReader ctx;
  ctx.file = std::fopen(path.c_str(), "rb");
  if (!ctx.file) throw FormatError(fmt::format("cannot open '{}'", path));
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw FormatError("png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw FormatError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw FormatError(fmt::format("'{}': PNG decode failed", path));

  png_init_io(ctx.png, ctx.file);
  png_read_info(ctx.png, ctx.info);

  // Normalize palettes and sub-byte depths; drop alpha. Keeps the decode
  // paths down to 8/16-bit gray or RGB.
  png_set_palette_to_rgb(ctx.png);
  png_set_expand_gray_1_2_4_to_8(ctx.png);
  png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  DecodedPng out;
  out.width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
  out.height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
  out.channels = static_cast<int>(png_get_channels(ctx.png, ctx.info));
  out.bit_depth = static_cast<int>(png_get_bit_depth(ctx.png, ctx.info));
  if (out.channels != 1 && out.channels != 3) {
    throw FormatError(fmt::format("'{}': unsupported channel count {}", path, out.channels));
  }

  const size_t stride = png_get_rowbytes(ctx.png, ctx.info);
  out.bytes.resize(stride * out.height);
  for (int y = 0; y < out.height; ++y) png_read_row(ctx.png, out.bytes.data() + y * stride, nullptr);
  return out;
}

std::uint8_t quantize8(double v) {
  const double scaled = std::round(v * 255.0);
  return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, scaled)));
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  image.validate();
  std::vector<std::uint8_t> bytes(static_cast<size_t>(image.width) * image.height *
                                  image.channels);
  size_t i = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) bytes[i++] = quantize8(image.at(c, y, x));
  write_png_rows(path, image.width, image.height, image.channels, 8, bytes);
}

Image read_png(const std::string& path) {
  DecodedPng png = read_png_rows(path);
  if (png.bit_depth != 8) {
    throw FormatError(fmt::format("'{}': expected an 8-bit image, got {}-bit", path, png.bit_depth));
  }
  Image image(png.width, png.height, png.channels);
  size_t i = 0;
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x)
      for (int c = 0; c < png.channels; ++c) image.at(c, y, x) = png.bytes[i++] / 255.0;
  return image;
}

void write_depth_png(const std::string& path, const DepthMap& depth) {
  std::vector<std::uint8_t> bytes(static_cast<size_t>(depth.width) * depth.height * 2);
  size_t i = 0;
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const double scaled = std::round(depth.at(x, y) * 256.0);
      const auto stored =
          static_cast<std::uint16_t>(std::min(65535.0, std::max(0.0, scaled)));
      bytes[i++] = static_cast<std::uint8_t>(stored >> 8);  // PNG samples are big-endian
      bytes[i++] = static_cast<std::uint8_t>(stored & 0xff);
    }
  write_png_rows(path, depth.width, depth.height, 1, 16, bytes);
}

DepthMap read_depth_png(const std::string& path) {
  DecodedPng png = read_png_rows(path);
  if (png.bit_depth != 16 || png.channels != 1) {
    throw FormatError(fmt::format("'{}': expected 16-bit grayscale depth, got {}-bit x{}", path,
                                  png.bit_depth, png.channels));
  }
  DepthMap depth(png.width, png.height);
  size_t i = 0;
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      const std::uint16_t stored =
          static_cast<std::uint16_t>((png.bytes[i] << 8) | png.bytes[i + 1]);
      i += 2;
      depth.at(x, y) = stored / 256.0;
    }
  return depth;
}

void write_label_png(const std::string& path, const std::vector<int>& labels, int width,
                     int height) {
  if (static_cast<size_t>(width) * height != labels.size()) {
    throw ValidationError("write_label_png: label count does not match dimensions");
  }
  std::vector<std::uint8_t> bytes(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 255) {
      throw ValidationError(fmt::format("label {} outside [0, 255]", labels[i]));
    }
    bytes[i] = static_cast<std::uint8_t>(labels[i]);
  }
  write_png_rows(path, width, height, 1, 8, bytes);
}

std::vector<int> read_label_png(const std::string& path, int& width, int& height) {
  DecodedPng png = read_png_rows(path);
  if (png.bit_depth != 8 || png.channels != 1) {
    throw FormatError(fmt::format("'{}': expected 8-bit grayscale labels", path));
  }
  width = png.width;
  height = png.height;
  return std::vector<int>(png.bytes.begin(), png.bytes.end());
}

void write_mask_png(const std::string& path, const ValidityMask& mask) {
  std::vector<int> labels(mask.values.size());
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = mask.values[i] ? 1 : 0;
  write_label_png(path, labels, mask.width, mask.height);
}

ValidityMask read_mask_png(const std::string& path) {
  int w = 0, h = 0;
  std::vector<int> labels = read_label_png(path, w, h);
  ValidityMask mask(w, h);
  for (size_t i = 0; i < labels.size(); ++i) mask.values[i] = labels[i] ? 1 : 0;
  return mask;
}

void write_blob(const std::string& path, const nlohmann::json& manifest,
                const std::vector<float>& blob) {
  std::ofstream out = open_out(path);
  out << manifest.dump() << "\n";
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw FormatError(fmt::format("short write to '{}'", path));
}

std::pair<nlohmann::json, std::vector<float>> read_blob(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(fmt::format("'{}': missing manifest line", path));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("'{}': bad manifest: {}", path, e.what()));
  }

  std::vector<char> payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (payload.size() % sizeof(float) != 0) {
    throw FormatError(fmt::format("'{}': payload of {} bytes is not float32-aligned", path,
                                  payload.size()));
  }
  std::vector<float> blob(payload.size() / sizeof(float));
  std::memcpy(blob.data(), payload.data(), payload.size());
  return {std::move(manifest), std::move(blob)};
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("'{}': {}", path, e.what()));
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw FormatError(fmt::format("short write to '{}'", path));
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) throw ValidationError(fmt::format("{}: expected a JSON object", context));
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ValidationError(fmt::format("{}: unknown key '{}'", context, key));
  }
}

}  // namespace issl::io
