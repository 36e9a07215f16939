#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cnerv/tensor.hpp"

namespace cnerv {

struct Frame {
  Index id = 0;
  std::filesystem::path path;  // empty for synthesized frames
  Tensor<double> image;        // (C, H, W) in [0, 1]
};

/// Ordered frames sharing one (C,H,W) shape; ids are dense 0..n-1.
struct FrameDataset {
  std::vector<Frame> frames;
  std::string manifest;

  Index size() const { return static_cast<Index>(frames.size()); }
  Shape frame_shape() const { return frames.at(0).image.shape(); }
  /// Digest of the manifest and the 8-bit quantized pixels.
  std::uint64_t digest() const;
};

/// Reads 8-bit PNG (gray/RGB, alpha dropped) or binary PGM/PPM into a (C,H,W) tensor in [0,1].
Tensor<double> read_image(const std::filesystem::path& path);
/// Writes PNG or PPM/PGM by extension; values are clamped to [0,1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const Tensor<double>& image);

/// Loads all .png/.ppm/.pgm files of `dir`, ordered by the number embedded in the file stem.
FrameDataset load_frames(const std::filesystem::path& dir);
void write_frames(const std::filesystem::path& dir, const std::vector<Tensor<double>>& frames,
                  const std::string& extension = ".png");

/// Center crop to (crop_h, crop_w), then box-filter downsample by an integer factor.
FrameDataset preprocess(const FrameDataset& data, Index crop_h, Index crop_w, Index factor);
Tensor<double> center_crop(const Tensor<double>& image, Index crop_h, Index crop_w);
Tensor<double> box_downsample(const Tensor<double>& image, Index factor);
/// Keys cubic (a = -0.5) resampling with half-pixel centers and clamped borders.
Tensor<double> resize_bicubic(const Tensor<double>& image, Index height, Index width);

enum class ToyKind { kMovingGradient, kBouncingRect, kStatic };
ToyKind toy_kind_from_string(const std::string& s);
std::string to_string(ToyKind kind);

struct BouncingRectGeometry {
  Index rect_h = 0;
  Index rect_w = 0;
  Index vy = 0;  // rows per frame before bouncing
  Index vx = 0;
};
BouncingRectGeometry bouncing_rect_geometry(Index height, Index width, std::uint64_t seed);

/// Deterministic procedural RGB video.
FrameDataset synth_toy_video(ToyKind kind, Index n, Index height, Index width, std::uint64_t seed);

}  // namespace cnerv
