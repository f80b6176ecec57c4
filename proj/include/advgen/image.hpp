#pragma once

#include "advgen/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace advgen {

/// Pixels in [0,1] with shape (N, C, H, W) and optional int64 labels of length N.
struct ImageBatch {
  torch::Tensor pixels;
  std::optional<torch::Tensor> labels;

  std::int64_t size() const { return pixels.defined() ? pixels.size(0) : 0; }
  ImageShape shape() const;
  bool has_labels() const { return labels.has_value(); }

  /// Throws ValidationError unless pixels are 4-D, finite, in [0,1], and labels
  /// (when present) are 1-D, length N, in [0, class_count).
  void validate(std::int64_t class_count) const;

  ImageBatch slice(std::int64_t begin, std::int64_t end) const;
  ImageBatch index_select(const torch::Tensor& indices) const;
  static ImageBatch concat(std::span<const ImageBatch> parts);
};

/// Bit-exact ImageBatch persistence via Archive.
void save_batch(const ImageBatch& batch, const std::filesystem::path& path);
ImageBatch load_batch(const std::filesystem::path& path);

/// 8-bit PNG codec for a single (C,H,W) image with C in {1,3}. Values are rounded to k/255.
std::vector<std::uint8_t> encode_png(const torch::Tensor& image);
torch::Tensor decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_png(const std::filesystem::path& path);

/// RGB byte buffer (H, W, 3) to PNG; used by the grid exporter.
std::vector<std::uint8_t> encode_rgb_png(std::span<const std::uint8_t> rgb, std::int64_t height, std::int64_t width);

/// Rounds pixel values to the nearest multiple of 1/255.
torch::Tensor quantize_8bit(const torch::Tensor& pixels);

}  // namespace advgen
