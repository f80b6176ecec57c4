#pragma once

#include "advgen/image.hpp"
#include "advgen/tensor.hpp"

#include <json.hpp>
#include <torch/script.h>

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace advgen::clf {

/// Probabilistic classifier f(y|x). Implementations must be differentiable in x
/// and pure once frozen, so concurrent inference is safe.
class Classifier {
 public:
  virtual ~Classifier() = default;

  /// (N,C,H,W) -> (N,K) log-probabilities.
  virtual torch::Tensor log_probs(const torch::Tensor& x) const = 0;
  virtual std::int64_t class_count() const = 0;
  virtual ImageShape input_shape() const = 0;

  torch::Tensor probabilities(const torch::Tensor& x) const { return log_probs(x).exp(); }
  /// Hard prediction argmax_y f(y|x), (N) int64.
  torch::Tensor predict(const torch::Tensor& x) const { return log_probs(x).argmax(1); }
};

using ClassifierPtr = std::shared_ptr<const Classifier>;

enum class Architecture { madry_cnn, resnet, mlp, logistic, external };
enum class Regime { standard, adversarial };

std::string to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

struct ClassifierSpec {
  Architecture arch = Architecture::mlp;
  std::int64_t class_count = 2;
  ImageShape input{1, 8, 8};
  Regime regime = Regime::standard;
  /// Base feature maps of the residual network: 4 for MNIST, 16 for SVHN/CelebA.
  std::int64_t base_maps = 16;
  /// Residual blocks per stage, separated by the two resize blocks.
  std::array<std::int64_t, 3> resnet_blocks{10, 9, 9};
  std::int64_t hidden = 64;
  std::int64_t depth = 1;
  /// TorchScript module for external classifiers. A sidecar `<path>.json` declares
  /// {"class_count", "input_shape": [C,H,W], "output": "logits"|"probabilities"}.
  std::filesystem::path checkpoint;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierSpec from_json(const nlohmann::json& j);
};

/// Backbone returning logits.
class NetImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

class MadryCnnImpl : public NetImpl {
 public:
  MadryCnnImpl(ImageShape input, std::int64_t class_count);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};

/// Pre-activation residual network with three stages (m, 2m, 4m maps).
class ResNetImpl : public NetImpl {
 public:
  ResNetImpl(ImageShape input, std::int64_t class_count, std::int64_t base_maps,
             std::array<std::int64_t, 3> blocks);
  torch::Tensor forward(const torch::Tensor& x) override;

  std::int64_t residual_block_count() const noexcept { return residual_blocks_; }
  std::int64_t resize_block_count() const noexcept { return resize_blocks_; }

 private:
  torch::nn::Conv2d initial_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::BatchNorm2d final_bn_{nullptr};
  torch::nn::Linear output_{nullptr};
  std::int64_t residual_blocks_ = 0;
  std::int64_t resize_blocks_ = 0;
};

class MlpImpl : public NetImpl {
 public:
  MlpImpl(ImageShape input, std::int64_t class_count, std::int64_t hidden, std::int64_t depth);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  torch::nn::Sequential net_{nullptr};
};

class LogisticImpl : public NetImpl {
 public:
  LogisticImpl(ImageShape input, std::int64_t class_count);
  torch::Tensor forward(const torch::Tensor& x) override;
  torch::nn::Linear& linear() { return linear_; }

 private:
  torch::nn::Linear linear_{nullptr};
};

std::shared_ptr<NetImpl> make_network(const ClassifierSpec& spec);

/// A trainable network behind the Classifier interface.
class NetworkClassifier : public Classifier {
 public:
  NetworkClassifier(ClassifierSpec spec, std::shared_ptr<NetImpl> net);

  torch::Tensor log_probs(const torch::Tensor& x) const override;
  std::int64_t class_count() const override { return spec_.class_count; }
  ImageShape input_shape() const override { return spec_.input; }

  const ClassifierSpec& spec() const noexcept { return spec_; }
  NetImpl& network() const { return *net_; }
  std::shared_ptr<NetImpl> network_ptr() const { return net_; }

 private:
  ClassifierSpec spec_;
  std::shared_ptr<NetImpl> net_;
};

/// Externally supplied model loaded from TorchScript; only the declared adapter
/// contract (input tensor -> logits or probabilities) is assumed.
class ExternalClassifier : public Classifier {
 public:
  explicit ExternalClassifier(const ClassifierSpec& spec);

  torch::Tensor log_probs(const torch::Tensor& x) const override;
  std::int64_t class_count() const override { return class_count_; }
  ImageShape input_shape() const override { return input_; }

 private:
  mutable torch::jit::script::Module module_;
  std::int64_t class_count_ = 0;
  ImageShape input_;
  bool outputs_probabilities_ = false;
};

/// Wraps a log-probability function; handy for analytic models in tests.
class FunctionClassifier : public Classifier {
 public:
  using Fn = std::function<torch::Tensor(const torch::Tensor&)>;
  FunctionClassifier(Fn log_probs, std::int64_t class_count, ImageShape input)
      : fn_(std::move(log_probs)), class_count_(class_count), input_(input) {}

  torch::Tensor log_probs(const torch::Tensor& x) const override { return fn_(x); }
  std::int64_t class_count() const override { return class_count_; }
  ImageShape input_shape() const override { return input_; }

 private:
  Fn fn_;
  std::int64_t class_count_;
  ImageShape input_;
};

struct TrainConfig {
  std::int64_t steps = 500;
  std::int64_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainedClassifier {
  std::shared_ptr<NetworkClassifier> classifier;
  double heldout_accuracy = 0;
  std::vector<double> loss_curve;
};

/// Trains from the training partition only; the adversarial regime replaces each
/// batch with PGD examples at a schedule-drawn radius. Throws NonFiniteError
/// carrying the step index on divergence.
TrainedClassifier build_and_train(const ClassifierSpec& spec, const ImageBatch& train, const ImageBatch& heldout,
                                  const TrainConfig& config);

std::shared_ptr<NetworkClassifier> build_untrained(const ClassifierSpec& spec, std::uint64_t seed);

inline constexpr std::uint32_t kClassifierFormatVersion = 1;

void save_classifier(const NetworkClassifier& classifier, const std::filesystem::path& path);
/// Loads a NetworkClassifier checkpoint, or an external model when the path has a
/// TorchScript sidecar declaration.
ClassifierPtr load_classifier(const std::filesystem::path& path);

/// |correct| / N. Throws ValidationError for an empty or unlabeled set.
double accuracy(const Classifier& f, const ImageBatch& batch, std::int64_t chunk = 512);

}  // namespace advgen::clf
