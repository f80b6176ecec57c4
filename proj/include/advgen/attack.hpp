#pragma once

#include "advgen/acgan.hpp"
#include "advgen/classifier.hpp"
#include "advgen/image.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advgen::attack {

/// Anything the attack can search over: g(z, y) with a latent anchor law.
class LatentGenerator {
 public:
  virtual ~LatentGenerator() = default;

  virtual std::int64_t latent_dim() const = 0;
  virtual std::int64_t class_count() const = 0;
  virtual ImageShape image_shape() const = 0;
  /// Discrete latents cannot be moved by gradient steps; the attack keeps them at z0.
  virtual bool discrete_latent() const { return false; }

  /// z0 for class y. Continuous generators draw i.i.d. N(0,1).
  virtual torch::Tensor sample_anchor(std::int64_t y, torch::Generator& gen) const;
  /// (C,H,W) image for a latent of length latent_dim(), differentiable in z when continuous.
  virtual torch::Tensor generate(const torch::Tensor& z, std::int64_t y) const = 0;
};

/// Adapts the AC-GAN generator and exposes its auxiliary classifier.
class BundleGenerator final : public LatentGenerator {
 public:
  explicit BundleGenerator(const gan::GanBundle& bundle) : bundle_(bundle) {}

  std::int64_t latent_dim() const override { return bundle_.latent_dim; }
  std::int64_t class_count() const override { return bundle_.class_count; }
  ImageShape image_shape() const override { return bundle_.shape; }
  torch::Tensor generate(const torch::Tensor& z, std::int64_t y) const override;

 private:
  const gan::GanBundle& bundle_;
};

/// c_psi of an AC-GAN bundle behind the Classifier interface.
class AuxClassifier final : public clf::Classifier {
 public:
  explicit AuxClassifier(const gan::GanBundle& bundle) : bundle_(bundle) {}

  torch::Tensor log_probs(const torch::Tensor& x) const override { return bundle_.aux_log_probs(x); }
  std::int64_t class_count() const override { return bundle_.class_count; }
  ImageShape input_shape() const override { return bundle_.shape; }

 private:
  const gan::GanBundle& bundle_;
};

/// g(z, y) = z-th test image of class y. The latent is a one-element tensor holding
/// the index; anchors are uniform over the class.
class DatasetGenerator final : public LatentGenerator {
 public:
  /// Throws ValidationError when any requested class has no images; classes are
  /// checked lazily on use, see `class_size`.
  DatasetGenerator(ImageBatch test_partition, std::int64_t class_count);

  std::int64_t latent_dim() const override { return 1; }
  std::int64_t class_count() const override { return class_count_; }
  ImageShape image_shape() const override { return data_.shape(); }
  bool discrete_latent() const override { return true; }

  torch::Tensor sample_anchor(std::int64_t y, torch::Generator& gen) const override;
  torch::Tensor generate(const torch::Tensor& z, std::int64_t y) const override;

  std::int64_t class_size(std::int64_t y) const;

 private:
  ImageBatch data_;
  std::int64_t class_count_;
  std::vector<std::vector<std::int64_t>> by_class_;
};

/// Builds the generator-like adapter for class y; throws ValidationError when the
/// partition holds no image of that class.
DatasetGenerator dataset_generator_adapter(const ImageBatch& test_partition, std::int64_t class_count,
                                           std::int64_t y);

enum class TauInit { normal, zero };
enum class LatentMode { free, frozen };
enum class AttackStatus { success, budget_exhausted };

std::string to_string(AttackStatus status);

struct AttackConfig {
  std::int64_t y_source = 0;
  std::optional<std::int64_t> y_target;  ///< nullopt = untargeted
  double lambda1 = 50.0;
  double lambda2 = 0.0;
  double epsilon = 0.1;
  double epsilon_attack = 0.0;  ///< 0 disables noise augmentation
  double alpha = 1.0;
  std::int64_t steps = 500;
  std::int64_t max_restarts = 100;
  std::uint64_t seed = 0;
  bool normalize_latent_grad = false;
  bool normalize_noise_grad = true;
  TauInit tau_init = TauInit::normal;
  /// frozen emulates lambda1 -> infinity as a hard projection z = z0.
  LatentMode latent_mode = LatentMode::free;

  bool targeted() const { return y_target.has_value(); }
  bool noise_enabled() const { return epsilon_attack > 0; }
  void validate(std::int64_t class_count) const;

  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;
};

struct LossTerms {
  double total = 0;
  double l0 = 0;
  double l1 = 0;
  double l2 = 0;
};

struct AttackResult {
  torch::Tensor image;  ///< (C,H,W)
  torch::Tensor z;
  torch::Tensor z0;
  std::optional<torch::Tensor> tau;
  std::int64_t restarts_used = 0;
  std::vector<LossTerms> trace;  ///< one entry per iteration of the final restart
  std::int64_t prediction = -1;
  double confidence = 0;
  AttackStatus status = AttackStatus::budget_exhausted;
  std::vector<std::string> diagnostics;  ///< non-finite restarts, in order
};

inline constexpr double kConfidenceFloor = 1e-12;

/// -log max(f(y_target | x), floor) for a single image (C,H,W) or a batch (mean).
torch::Tensor loss_l0(const clf::Classifier& f, const torch::Tensor& image, std::int64_t y_target);
/// -max_{y != y_source} log f(y | x), by enumeration over the competitors.
torch::Tensor loss_l0_untargeted(const clf::Classifier& f, const torch::Tensor& image, std::int64_t y_source);
/// (1/m) sum_i max(|z_i - z0_i| - eps, 0).
torch::Tensor loss_l1(const torch::Tensor& z, const torch::Tensor& z0, double epsilon);
/// -log max(c(y_source | x), floor).
torch::Tensor loss_l2(const clf::Classifier& aux, const torch::Tensor& image, std::int64_t y_source);
/// clip(image + eps_attack * tanh(tau), 0, 1).
torch::Tensor noise_augment(const torch::Tensor& image, const torch::Tensor& tau, double epsilon_attack);

struct LatentState {
  torch::Tensor z;
  torch::Tensor z0;
  std::optional<torch::Tensor> tau;
};

struct TotalLoss {
  torch::Tensor total;  ///< differentiable
  torch::Tensor image;  ///< the (possibly noise-augmented) image the losses saw
  LossTerms terms;
};

/// L0 + lambda1 * L1 + lambda2 * L2 on g(z, y_source), with noise augmentation when
/// enabled. `aux` may be null only when lambda2 == 0.
TotalLoss total_loss(const LatentState& state, const AttackConfig& config, const LatentGenerator& generator,
                     const clf::Classifier& f, const clf::Classifier* aux);

/// Success predicate: argmax f = y_target (targeted) or != y_source (untargeted).
bool is_success(const AttackConfig& config, std::int64_t prediction);

/// Restarting latent-space search. Each restart samples tau and z0, runs T
/// gradient iterations (z then tau, tau's step normalized), and accepts the image
/// when the success predicate holds. Never throws on budget exhaustion.
AttackResult run_attack(const AttackConfig& config, const LatentGenerator& generator, const clf::Classifier& f,
                        const clf::Classifier* aux);

struct AttackTask {
  std::int64_t y_source = 0;
  std::optional<std::int64_t> y_target;
  std::int64_t replicate = 0;
};

/// Runs every task on `workers` threads. Task i uses `base` with its labels and
/// seed = mix_seed(base.seed, i); results are returned in task order.
std::vector<AttackResult> run_attacks(const AttackConfig& base, const std::vector<AttackTask>& tasks,
                                      const LatentGenerator& generator, const clf::Classifier& f,
                                      const clf::Classifier* aux, std::int64_t workers);

/// Targeted tasks for every ordered (source, target) pair, or untargeted per source.
std::vector<AttackTask> make_tasks(std::int64_t class_count, bool targeted, std::int64_t per_cell);

struct ManifestEntry {
  std::string id;
  std::int64_t y_source = 0;
  std::optional<std::int64_t> y_target;
  std::int64_t prediction = -1;
  double confidence = 0;
  std::int64_t restarts = 0;
  AttackStatus status = AttackStatus::budget_exhausted;
  std::string config_hash;

  nlohmann::json to_json() const;
  static ManifestEntry from_json(const nlohmann::json& j);
};

/// Writes `<dir>/<id>.png` per result plus `<dir>/results.jsonl`, and a bit-exact
/// `<dir>/images.bin` batch for downstream numeric checks.
std::vector<ManifestEntry> write_results(const std::filesystem::path& dir, const std::vector<AttackTask>& tasks,
                                         const std::vector<AttackResult>& results, const std::string& config_hash);

struct StoredResults {
  std::vector<ManifestEntry> entries;
  ImageBatch images;  ///< aligned with entries
};
StoredResults read_results(const std::filesystem::path& dir);

}  // namespace advgen::attack
