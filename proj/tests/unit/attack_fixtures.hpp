#pragma once

#include "advgen/attack.hpp"

namespace advgen::test {

/// g(z, y) = sigmoid(A z + b_y) on a 1x4x4 image.
class LinearGenerator final : public attack::LatentGenerator {
 public:
  LinearGenerator(std::int64_t m, std::int64_t k, std::uint64_t seed) : m_(m), k_(k) {
    auto gen = make_generator(seed);
    a_ = torch::randn({16, m}, gen, real_options()) * 0.5;
    b_ = torch::randn({k, 16}, gen, real_options());
  }
  std::int64_t latent_dim() const override { return m_; }
  std::int64_t class_count() const override { return k_; }
  ImageShape image_shape() const override { return {1, 4, 4}; }
  torch::Tensor generate(const torch::Tensor& z, std::int64_t y) const override {
    return torch::sigmoid(a_.matmul(z) + b_[y]).view({1, 4, 4});
  }

 private:
  std::int64_t m_, k_;
  torch::Tensor a_, b_;
};

/// Softmax regression on 1x4x4 images.
inline clf::FunctionClassifier logistic_classifier(std::int64_t k, std::uint64_t seed, double scale = 1.0) {
  auto gen = make_generator(seed);
  auto w = torch::randn({k, 16}, gen, real_options()) * scale;
  auto b = torch::randn({k}, gen, real_options()) * 0.1;
  return clf::FunctionClassifier(
      [w, b](const torch::Tensor& x) { return torch::log_softmax(x.flatten(1).matmul(w.t()) + b, 1); }, k, {1, 4, 4});
}

}  // namespace advgen::test
