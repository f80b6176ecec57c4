#include "advgen/image.hpp"

#include "advgen/archive.hpp"
#include "advgen/error.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace advgen {

ImageShape ImageBatch::shape() const {
  if (!pixels.defined() || pixels.dim() != 4) return {};
  return {pixels.size(1), pixels.size(2), pixels.size(3)};
}

void ImageBatch::validate(std::int64_t class_count) const {
  if (!pixels.defined() || pixels.dim() != 4) throw ValidationError("image batch must be (N,C,H,W)");
  if (pixels.numel() > 0) {
    if (!all_finite(pixels)) throw ValidationError("image batch has non-finite pixels");
    const double lo = pixels.min().item<double>();
    const double hi = pixels.max().item<double>();
    if (lo < 0.0 || hi > 1.0) {
      throw ValidationError("pixels outside [0,1]: min " + std::to_string(lo) + " max " + std::to_string(hi));
    }
  }
  if (labels) {
    if (labels->dim() != 1 || labels->size(0) != pixels.size(0)) {
      throw ValidationError("labels must be a vector of length N");
    }
    if (labels->numel() > 0) {
      const auto lo = labels->min().item<std::int64_t>();
      const auto hi = labels->max().item<std::int64_t>();
      if (lo < 0 || hi >= class_count) {
        throw ValidationError("label outside [0," + std::to_string(class_count) + ")");
      }
    }
  }
}

ImageBatch ImageBatch::slice(std::int64_t begin, std::int64_t end) const {
  ImageBatch out{pixels.slice(0, begin, end), std::nullopt};
  if (labels) out.labels = labels->slice(0, begin, end);
  return out;
}

ImageBatch ImageBatch::index_select(const torch::Tensor& indices) const {
  ImageBatch out{pixels.index_select(0, indices), std::nullopt};
  if (labels) out.labels = labels->index_select(0, indices);
  return out;
}

ImageBatch ImageBatch::concat(std::span<const ImageBatch> parts) {
  if (parts.empty()) throw ValidationError("cannot concatenate zero batches");
  std::vector<torch::Tensor> pix, lab;
  const bool labeled = parts.front().has_labels();
  for (const auto& p : parts) {
    if (p.has_labels() != labeled) throw ValidationError("mixing labeled and unlabeled batches");
    pix.push_back(p.pixels);
    if (labeled) lab.push_back(*p.labels);
  }
  ImageBatch out{torch::cat(pix, 0), std::nullopt};
  if (labeled) out.labels = torch::cat(lab, 0);
  return out;
}

void save_batch(const ImageBatch& batch, const std::filesystem::path& path) {
  Archive archive("image_batch");
  archive.put("pixels", batch.pixels);
  if (batch.labels) archive.put("labels", *batch.labels);
  archive.save(path);
}

ImageBatch load_batch(const std::filesystem::path& path) {
  const auto archive = Archive::load(path, "image_batch");
  ImageBatch batch{archive.tensor("pixels"), std::nullopt};
  if (archive.contains("labels")) batch.labels = archive.tensor("labels");
  return batch;
}

torch::Tensor quantize_8bit(const torch::Tensor& pixels) {
  return torch::round(pixels.clamp(0.0, 1.0) * 255.0) / 255.0;
}

namespace {

std::vector<std::uint8_t> write_png_image(png_image& image, const void* buffer) {
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, buffer, 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, buffer, 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const torch::Tensor& image) {
  if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
    throw DimensionError("encode_png expects (C,H,W) with C in {1,3}");
  }
  const auto c = image.size(0), h = image.size(1), w = image.size(2);
  // (C,H,W) -> interleaved (H,W,C) bytes.
  auto bytes = torch::round(image.detach().to(kReal).clamp(0.0, 1.0) * 255.0)
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  return write_png_image(png, bytes.data_ptr());
}

std::vector<std::uint8_t> encode_rgb_png(std::span<const std::uint8_t> rgb, std::int64_t height, std::int64_t width) {
  if (static_cast<std::int64_t>(rgb.size()) != height * width * 3) throw DimensionError("rgb buffer size mismatch");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  return write_png_image(png, rgb.data());
}

torch::Tensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ValidationError(std::string("png decode failed: ") + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::int64_t c = color ? 3 : 1;
  auto buffer = torch::empty({static_cast<std::int64_t>(png.height), static_cast<std::int64_t>(png.width), c},
                             torch::kUInt8);
  if (!png_image_finish_read(&png, nullptr, buffer.data_ptr(), 0, nullptr)) {
    png_image_free(&png);
    throw ValidationError(std::string("png decode failed: ") + png.message);
  }
  return buffer.permute({2, 0, 1}).contiguous().to(kReal) / 255.0;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  const auto bytes = encode_png(image);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

torch::Tensor read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace advgen
