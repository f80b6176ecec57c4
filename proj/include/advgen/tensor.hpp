#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <mutex>
#include <vector>

namespace advgen {

// All numerics run in double precision so that finite-difference oracles are meaningful.
inline constexpr auto kReal = torch::kFloat64;

inline torch::TensorOptions real_options() { return torch::TensorOptions().dtype(kReal); }
inline torch::TensorOptions index_options() { return torch::TensorOptions().dtype(torch::kInt64); }

/// (channels, height, width) of a single image.
struct ImageShape {
  std::int64_t channels = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t numel() const { return channels * height * width; }
  std::vector<std::int64_t> dims() const { return {channels, height, width}; }
  std::vector<std::int64_t> batch_dims(std::int64_t n) const { return {n, channels, height, width}; }
  bool operator==(const ImageShape&) const = default;
};

/// Deterministic CPU generator seeded from a 64-bit value.
inline torch::Generator make_generator(std::uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Module constructors draw initial weights from torch's global generator; hold
/// this while seeding it and building a network.
inline std::mutex& global_rng_mutex() {
  static std::mutex m;
  return m;
}

inline bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace advgen
