#pragma once

#include "advgen/image.hpp"
#include "advgen/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace advgen::gan {

enum class Architecture { mlp, resnet };

struct GanArchitecture {
  Architecture kind = Architecture::mlp;
  std::int64_t hidden = 128;     ///< MLP width, or base channel count for resnet
  std::int64_t depth = 2;        ///< MLP hidden layers (ignored for resnet)
  std::int64_t embed_dim = 8;    ///< learned class embedding concatenated to z
  bool shared_aux_trunk = true;  ///< auxiliary classifier reuses the critic trunk

  nlohmann::json to_json() const;
  static GanArchitecture from_json(const nlohmann::json& j);
};

/// Number of upsampling residual blocks the resnet generator uses for a given
/// output height: the largest b with height % 2^b == 0 and height / 2^b >= 4.
/// 32 -> 3 (the CIFAR-style template), 28 -> 2, 64 -> 4.
std::int64_t generator_upsample_blocks(std::int64_t height);

class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(const GanArchitecture& arch, std::int64_t latent_dim, std::int64_t class_count, ImageShape shape);

  /// z: (N, m), y: (N) int64 -> (N, C, H, W) squashed into [0,1] by a sigmoid.
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& y);

  std::int64_t upsample_blocks() const noexcept { return upsample_blocks_; }

 private:
  GanArchitecture arch_;
  std::int64_t latent_dim_;
  ImageShape shape_;
  std::int64_t start_size_ = 0;
  std::int64_t upsample_blocks_ = 0;
  torch::nn::Embedding embed_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::Linear project_{nullptr};
  torch::nn::Sequential blocks_{nullptr};
  torch::nn::Sequential head_{nullptr};
};
TORCH_MODULE(Generator);

struct CriticOutput {
  torch::Tensor critic;      ///< (N)
  torch::Tensor aux_logits;  ///< (N, K)
};

/// WGAN critic d_phi with the auxiliary classifier c_psi either sharing its trunk
/// or owning a separate one.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(const GanArchitecture& arch, std::int64_t class_count, ImageShape shape);

  CriticOutput forward(const torch::Tensor& x);
  torch::Tensor critic(const torch::Tensor& x);
  torch::Tensor aux_log_probs(const torch::Tensor& x);

 private:
  torch::Tensor trunk_features(torch::nn::Sequential& trunk, const torch::Tensor& x);

  GanArchitecture arch_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear critic_head_{nullptr};
  torch::nn::Sequential aux_trunk_{nullptr};
  torch::nn::Linear aux_head_{nullptr};
};
TORCH_MODULE(Discriminator);

struct GanBundle {
  GanArchitecture arch;
  std::int64_t latent_dim = 0;
  std::int64_t class_count = 0;
  ImageShape shape;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  std::int64_t step = 0;
  std::string config_hash;

  static GanBundle create(const GanArchitecture& arch, std::int64_t latent_dim, std::int64_t class_count,
                          ImageShape shape, std::uint64_t init_seed);

  /// Single image (C,H,W) from z of length m. Differentiable in z. Throws
  /// DimensionError for a wrong latent length or class index.
  torch::Tensor generate(const torch::Tensor& z, std::int64_t y) const;
  /// (N,m) latents with (N) labels -> (N,C,H,W).
  torch::Tensor generate_batch(const torch::Tensor& z, const torch::Tensor& y) const;
  /// c_psi(. | x) as log-probabilities, (N,K).
  torch::Tensor aux_log_probs(const torch::Tensor& x) const;

  void set_training(bool on) const;
  GanBundle clone() const;
};

inline constexpr std::uint32_t kBundleFormatVersion = 1;

void save_bundle(const GanBundle& bundle, const std::filesystem::path& path);
/// Throws CheckpointVersionError when the stored format version differs.
GanBundle load_bundle(const std::filesystem::path& path);

// -- objectives ---------------------------------------------------------------

using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// E[(||grad_x d(x_mix)||_2 - 1)^2] with x_mix = mix * real + (1 - mix) * fake,
/// one coefficient per pair. Built with create_graph so it can be differentiated
/// with respect to the critic parameters.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& mix);
torch::Tensor gradient_penalty(const GanBundle& bundle, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& mix);
/// Draws mix ~ U[0,1] per pair from `gen`.
torch::Tensor sample_mix(std::int64_t pairs, torch::Generator& gen);

struct DiscriminatorLoss {
  torch::Tensor total;
  double fake_term = 0;  ///< E[d(g(z,y))]
  double real_term = 0;  ///< E[d(x)]
  double aux_term = 0;   ///< -E[log c(y|x)]
  double penalty = 0;    ///< gradient penalty before weighting
};

struct GeneratorLoss {
  torch::Tensor total;
  double adversarial_term = 0;  ///< -E[d(g(z,y))]
  double aux_term = 0;          ///< -E[log c(y|g(z,y))]
};

/// E[d(g(z,y))] - E[d(x)] - E[log c(y_real|x)] + lambda * GP. Throws
/// NonFiniteError listing the components when the result is not finite.
DiscriminatorLoss discriminator_step_loss(const GanBundle& bundle, const ImageBatch& real, const torch::Tensor& z,
                                          const torch::Tensor& y, double lambda_gp, const torch::Tensor& mix);

/// -E[d(g(z,y))] - E[log c(y|g(z,y))].
GeneratorLoss generator_step_loss(const GanBundle& bundle, const torch::Tensor& z, const torch::Tensor& y);

// -- training -----------------------------------------------------------------

struct GanTrainConfig {
  double lambda_gp = 10.0;
  std::int64_t critic_steps = 5;
  std::int64_t batch_size = 64;
  double learning_rate = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  std::int64_t total_steps = 2000;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static GanTrainConfig from_json(const nlohmann::json& j);
};

struct LossCurves {
  std::vector<double> discriminator;
  std::vector<double> generator;
  std::vector<double> penalty;
  std::vector<double> aux_accuracy;  ///< c_psi accuracy on the real batch
};

/// Owns the bundle, both optimizers and the RNG stream. A checkpoint captures all
/// of them, so resuming continues the exact same trajectory.
class GanTrainer {
 public:
  GanTrainer(GanBundle bundle, GanTrainConfig config, ImageBatch data);

  static GanTrainer resume(const std::filesystem::path& checkpoint, ImageBatch data);

  /// One generator update preceded by `critic_steps` critic updates.
  void step();
  void run_until(std::int64_t step);

  void save_checkpoint(const std::filesystem::path& path) const;

  const GanBundle& bundle() const noexcept { return bundle_; }
  const LossCurves& curves() const noexcept { return curves_; }
  const GanTrainConfig& config() const noexcept { return config_; }

 private:
  GanBundle bundle_;
  GanTrainConfig config_;
  ImageBatch data_;
  torch::Generator rng_;
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
  LossCurves curves_;
};

struct GanTrainResult {
  GanBundle bundle;
  LossCurves curves;
};

GanTrainResult train_acgan(const GanTrainConfig& config, const GanArchitecture& arch, std::int64_t latent_dim,
                           std::int64_t class_count, const ImageBatch& data);

/// Fraction of fresh samples g(z,y) on which argmax c_psi equals the conditioning label.
double conditioning_agreement(const GanBundle& bundle, std::int64_t samples, std::uint64_t seed);

}  // namespace advgen::gan
