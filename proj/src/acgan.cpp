#include "advgen/acgan.hpp"

#include "advgen/archive.hpp"
#include "advgen/error.hpp"
#include "advgen/hash.hpp"

#include <sstream>

namespace advgen::gan {

namespace nn = torch::nn;

// -- architecture description -----------------------------------------------------

nlohmann::json GanArchitecture::to_json() const {
  return {{"kind", kind == Architecture::mlp ? "mlp" : "resnet"},
          {"hidden", hidden},
          {"depth", depth},
          {"embed_dim", embed_dim},
          {"shared_aux_trunk", shared_aux_trunk}};
}

GanArchitecture GanArchitecture::from_json(const nlohmann::json& j) {
  GanArchitecture a;
  const auto kind = j.value("kind", std::string("mlp"));
  if (kind == "mlp") {
    a.kind = Architecture::mlp;
  } else if (kind == "resnet") {
    a.kind = Architecture::resnet;
  } else {
    throw ValidationError("unknown GAN architecture '" + kind + "'");
  }
  a.hidden = j.value("hidden", a.hidden);
  a.depth = j.value("depth", a.depth);
  a.embed_dim = j.value("embed_dim", a.embed_dim);
  a.shared_aux_trunk = j.value("shared_aux_trunk", a.shared_aux_trunk);
  if (a.hidden < 1 || a.depth < 1 || a.embed_dim < 1) throw ValidationError("GAN widths must be positive");
  return a;
}

std::int64_t generator_upsample_blocks(std::int64_t height) {
  std::int64_t blocks = 0;
  while (height % (std::int64_t{2} << blocks) == 0 && height / (std::int64_t{2} << blocks) >= 4) ++blocks;
  return blocks;
}

namespace {

/// Upsampling residual block: BN-ReLU-up-conv-BN-ReLU-conv with an up+1x1 shortcut.
class UpBlockImpl : public nn::Module {
 public:
  UpBlockImpl(std::int64_t in, std::int64_t out)
      : bn1_(register_module("bn1", nn::BatchNorm2d(in))),
        conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)))),
        bn2_(register_module("bn2", nn::BatchNorm2d(out))),
        conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)))),
        shortcut_(register_module("shortcut", nn::Conv2d(nn::Conv2dOptions(in, out, 1)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    namespace F = nn::functional;
    const auto up = [](const torch::Tensor& t) {
      return F::interpolate(t, F::InterpolateFuncOptions()
                                   .scale_factor(std::vector<double>{2.0, 2.0})
                                   .mode(torch::kNearest));
    };
    auto h = conv1_(up(torch::relu(bn1_(x))));
    h = conv2_(torch::relu(bn2_(h)));
    return h + shortcut_(up(x));
  }

 private:
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d conv2_;
  nn::Conv2d shortcut_;
};
TORCH_MODULE(UpBlock);

/// Critic residual block without normalization; optionally halves the resolution.
class DownBlockImpl : public nn::Module {
 public:
  DownBlockImpl(std::int64_t in, std::int64_t out, bool downsample, bool first)
      : downsample_(downsample),
        first_(first),
        conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)))),
        conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)))),
        shortcut_(register_module("shortcut", nn::Conv2d(nn::Conv2dOptions(in, out, 1)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto pool = [&](const torch::Tensor& t) { return downsample_ ? torch::avg_pool2d(t, 2) : t; };
    auto h = first_ ? conv1_(x) : conv1_(torch::relu(x));
    h = pool(conv2_(torch::relu(h)));
    auto s = first_ ? shortcut_(pool(x)) : pool(shortcut_(x));
    return h + s;
  }

 private:
  bool downsample_;
  bool first_;
  nn::Conv2d conv1_;
  nn::Conv2d conv2_;
  nn::Conv2d shortcut_;
};
TORCH_MODULE(DownBlock);

nn::Sequential mlp_trunk(std::int64_t in, std::int64_t hidden, std::int64_t depth) {
  nn::Sequential seq;
  seq->push_back(nn::Flatten());
  for (std::int64_t i = 0; i < depth; ++i) {
    seq->push_back(nn::Linear(i == 0 ? in : hidden, hidden));
    seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  }
  return seq;
}

nn::Sequential resnet_trunk(const ImageShape& shape, std::int64_t channels) {
  nn::Sequential seq;
  seq->push_back(DownBlock(shape.channels, channels, true, true));
  std::int64_t size = shape.height / 2;
  while (size > 8) {
    seq->push_back(DownBlock(channels, channels, true, false));
    size /= 2;
  }
  seq->push_back(DownBlock(channels, channels, false, false));
  seq->push_back(DownBlock(channels, channels, false, false));
  return seq;
}

}  // namespace

// -- generator ----------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const GanArchitecture& arch, std::int64_t latent_dim, std::int64_t class_count,
                             ImageShape shape)
    : arch_(arch), latent_dim_(latent_dim), shape_(shape) {
  embed_ = register_module("embed", nn::Embedding(class_count, arch.embed_dim));
  const auto in = latent_dim + arch.embed_dim;
  if (arch.kind == Architecture::mlp) {
    body_ = nn::Sequential();
    for (std::int64_t i = 0; i < arch.depth; ++i) {
      body_->push_back(nn::Linear(i == 0 ? in : arch.hidden, arch.hidden));
      body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    body_->push_back(nn::Linear(arch.hidden, shape.numel()));
    register_module("body", body_);
    return;
  }
  if (shape.height != shape.width) throw ValidationError("resnet generator needs square images");
  upsample_blocks_ = generator_upsample_blocks(shape.height);
  if (upsample_blocks_ == 0) throw ValidationError("resolution too small for the resnet generator");
  start_size_ = shape.height >> upsample_blocks_;
  const auto ch = arch.hidden;
  project_ = register_module("project", nn::Linear(in, start_size_ * start_size_ * ch));
  blocks_ = nn::Sequential();
  for (std::int64_t i = 0; i < upsample_blocks_; ++i) blocks_->push_back(UpBlock(ch, ch));
  register_module("blocks", blocks_);
  head_ = nn::Sequential(nn::BatchNorm2d(ch), nn::ReLU(),
                         nn::Conv2d(nn::Conv2dOptions(ch, shape.channels, 3).padding(1)));
  register_module("head", head_);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z, const torch::Tensor& y) {
  auto h = torch::cat({z, embed_(y)}, 1);
  torch::Tensor logits;
  if (arch_.kind == Architecture::mlp) {
    logits = body_->forward(h);
  } else {
    h = project_(h).view({-1, arch_.hidden, start_size_, start_size_});
    logits = head_->forward(blocks_->forward(h));
  }
  return torch::sigmoid(logits).view({-1, shape_.channels, shape_.height, shape_.width});
}

// -- discriminator ------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const GanArchitecture& arch, std::int64_t class_count, ImageShape shape)
    : arch_(arch) {
  auto make_trunk = [&] {
    return arch.kind == Architecture::mlp ? mlp_trunk(shape.numel(), arch.hidden, arch.depth)
                                          : resnet_trunk(shape, arch.hidden);
  };
  trunk_ = register_module("trunk", make_trunk());
  critic_head_ = register_module("critic_head", nn::Linear(arch.hidden, 1));
  if (!arch.shared_aux_trunk) aux_trunk_ = register_module("aux_trunk", make_trunk());
  aux_head_ = register_module("aux_head", nn::Linear(arch.hidden, class_count));
}

torch::Tensor DiscriminatorImpl::trunk_features(nn::Sequential& trunk, const torch::Tensor& x) {
  auto h = trunk->forward(x);
  if (arch_.kind == Architecture::resnet) h = torch::relu(h).mean({2, 3});
  return h;
}

CriticOutput DiscriminatorImpl::forward(const torch::Tensor& x) {
  auto features = trunk_features(trunk_, x);
  auto aux_features = arch_.shared_aux_trunk ? features : trunk_features(aux_trunk_, x);
  return {critic_head_(features).squeeze(1), aux_head_(aux_features)};
}

torch::Tensor DiscriminatorImpl::critic(const torch::Tensor& x) {
  return critic_head_(trunk_features(trunk_, x)).squeeze(1);
}

torch::Tensor DiscriminatorImpl::aux_log_probs(const torch::Tensor& x) {
  auto features = trunk_features(arch_.shared_aux_trunk ? trunk_ : aux_trunk_, x);
  return torch::log_softmax(aux_head_(features), 1);
}

// -- bundle -------------------------------------------------------------------------

GanBundle GanBundle::create(const GanArchitecture& arch, std::int64_t latent_dim, std::int64_t class_count,
                            ImageShape shape, std::uint64_t init_seed) {
  if (latent_dim < 1) throw ValidationError("latent_dim must be positive");
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  GanBundle b;
  b.arch = arch;
  b.latent_dim = latent_dim;
  b.class_count = class_count;
  b.shape = shape;
  {
    std::lock_guard lock(global_rng_mutex());
    torch::manual_seed(init_seed);
    b.generator = Generator(arch, latent_dim, class_count, shape);
    b.discriminator = Discriminator(arch, class_count, shape);
  }
  b.generator->to(kReal);
  b.discriminator->to(kReal);
  b.set_training(false);
  return b;
}

torch::Tensor GanBundle::generate(const torch::Tensor& z, std::int64_t y) const {
  if (z.numel() != latent_dim) {
    throw DimensionError("latent has " + std::to_string(z.numel()) + " entries, expected " +
                         std::to_string(latent_dim));
  }
  if (y < 0 || y >= class_count) throw DimensionError("class index " + std::to_string(y) + " out of range");
  auto labels = torch::full({1}, y, index_options());
  return generator.ptr()->forward(z.to(kReal).reshape({1, latent_dim}), labels)[0];
}

torch::Tensor GanBundle::generate_batch(const torch::Tensor& z, const torch::Tensor& y) const {
  if (z.dim() != 2 || z.size(1) != latent_dim) throw DimensionError("latent batch must be (N, latent_dim)");
  if (y.dim() != 1 || y.size(0) != z.size(0)) throw DimensionError("label batch must be (N)");
  if (y.numel() > 0 && (y.min().item<std::int64_t>() < 0 || y.max().item<std::int64_t>() >= class_count)) {
    throw DimensionError("class index out of range");
  }
  return generator.ptr()->forward(z.to(kReal), y);
}

torch::Tensor GanBundle::aux_log_probs(const torch::Tensor& x) const {
  return discriminator.ptr()->aux_log_probs(x);
}

void GanBundle::set_training(bool on) const {
  generator.ptr()->train(on);
  discriminator.ptr()->train(on);
}

namespace {

Archive bundle_archive(const GanBundle& b) {
  Archive archive("gan_bundle");
  archive.meta() = {{"format_version", kBundleFormatVersion},
                    {"latent_dim", b.latent_dim},
                    {"class_count", b.class_count},
                    {"channels", b.shape.channels},
                    {"resolution", {b.shape.height, b.shape.width}},
                    {"arch", b.arch.to_json()},
                    {"step", b.step},
                    {"config_hash", b.config_hash}};
  put_module(archive, "generator.", *b.generator);
  put_module(archive, "discriminator.", *b.discriminator);
  return archive;
}

GanBundle bundle_from_archive(const Archive& archive) {
  const auto& meta = archive.meta();
  const auto version = meta.value("format_version", 0u);
  if (version != kBundleFormatVersion) {
    throw CheckpointVersionError("GAN bundle format version " + std::to_string(version) + " != supported " +
                                 std::to_string(kBundleFormatVersion));
  }
  const auto res = meta.at("resolution").get<std::vector<std::int64_t>>();
  ImageShape shape{meta.at("channels").get<std::int64_t>(), res.at(0), res.at(1)};
  auto b = GanBundle::create(GanArchitecture::from_json(meta.at("arch")), meta.at("latent_dim").get<std::int64_t>(),
                             meta.at("class_count").get<std::int64_t>(), shape, 0);
  load_module(archive, "generator.", *b.generator);
  load_module(archive, "discriminator.", *b.discriminator);
  b.step = meta.at("step").get<std::int64_t>();
  b.config_hash = meta.at("config_hash").get<std::string>();
  return b;
}

}  // namespace

GanBundle GanBundle::clone() const {
  auto copy = bundle_from_archive(Archive::from_bytes(bundle_archive(*this).to_bytes()));
  copy.generator->train(generator->is_training());
  copy.discriminator->train(discriminator->is_training());
  return copy;
}

void save_bundle(const GanBundle& bundle, const std::filesystem::path& path) { bundle_archive(bundle).save(path); }

GanBundle load_bundle(const std::filesystem::path& path) {
  return bundle_from_archive(Archive::load(path, "gan_bundle"));
}

// -- objectives -----------------------------------------------------------------------

torch::Tensor sample_mix(std::int64_t pairs, torch::Generator& gen) { return torch::rand({pairs}, gen, real_options()); }

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& mix) {
  if (real.sizes() != fake.sizes()) throw DimensionError("real and fake batches differ in shape");
  if (real.dim() < 1 || real.size(0) < 1) throw DimensionError("gradient penalty needs at least one pair");
  if (mix.dim() != 1 || mix.size(0) != real.size(0)) throw DimensionError("one mixing coefficient per pair");
  std::vector<std::int64_t> view(static_cast<std::size_t>(real.dim()), 1);
  view[0] = -1;
  const auto m = mix.view(view);
  auto interp = (m * real.detach() + (1.0 - m) * fake.detach()).requires_grad_(true);
  auto out = critic(interp);
  auto grad = torch::autograd::grad({out.sum()}, {interp}, {}, /*retain_graph=*/true, /*create_graph=*/true)[0];
  auto norms = grad.flatten(1).norm(2, 1);
  return (norms - 1.0).pow(2).mean();
}

torch::Tensor gradient_penalty(const GanBundle& bundle, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& mix) {
  auto disc = bundle.discriminator.ptr();
  return gradient_penalty([disc](const torch::Tensor& x) { return disc->critic(x); }, real, fake, mix);
}

namespace {

std::string describe(std::initializer_list<std::pair<const char*, double>> parts) {
  std::ostringstream ss;
  for (const auto& [name, value] : parts) ss << ' ' << name << '=' << value;
  return ss.str();
}

}  // namespace

DiscriminatorLoss discriminator_step_loss(const GanBundle& bundle, const ImageBatch& real, const torch::Tensor& z,
                                          const torch::Tensor& y, double lambda_gp, const torch::Tensor& mix) {
  if (!real.labels) throw ValidationError("discriminator loss needs labeled real images");
  if (lambda_gp < 0) throw ValidationError("lambda_gp must be non-negative");
  if (real.pixels.size(0) != z.size(0)) throw DimensionError("real and latent batches differ in size");
  auto disc = bundle.discriminator.ptr();
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = bundle.generate_batch(z, y);
  }
  auto real_out = disc->forward(real.pixels);
  auto fake_critic = disc->critic(fake);
  auto fake_term = fake_critic.mean();
  auto real_term = real_out.critic.mean();
  auto aux_term = torch::nll_loss(torch::log_softmax(real_out.aux_logits, 1), *real.labels);
  auto penalty = gradient_penalty(bundle, real.pixels, fake, mix);
  DiscriminatorLoss loss;
  loss.total = fake_term - real_term + aux_term + lambda_gp * penalty;
  loss.fake_term = fake_term.item<double>();
  loss.real_term = real_term.item<double>();
  loss.aux_term = aux_term.item<double>();
  loss.penalty = penalty.item<double>();
  if (!all_finite(loss.total)) {
    throw NonFiniteError("non-finite discriminator loss:" +
                         describe({{"fake", loss.fake_term}, {"real", loss.real_term}, {"aux", loss.aux_term},
                                   {"penalty", loss.penalty}}));
  }
  return loss;
}

GeneratorLoss generator_step_loss(const GanBundle& bundle, const torch::Tensor& z, const torch::Tensor& y) {
  auto fake = bundle.generate_batch(z, y);
  auto out = bundle.discriminator.ptr()->forward(fake);
  auto adversarial = -out.critic.mean();
  auto aux = torch::nll_loss(torch::log_softmax(out.aux_logits, 1), y);
  GeneratorLoss loss;
  loss.total = adversarial + aux;
  loss.adversarial_term = adversarial.item<double>();
  loss.aux_term = aux.item<double>();
  if (!all_finite(loss.total)) {
    throw NonFiniteError("non-finite generator loss:" +
                         describe({{"adversarial", loss.adversarial_term}, {"aux", loss.aux_term}}));
  }
  return loss;
}

// -- training -----------------------------------------------------------------------

void GanTrainConfig::validate() const {
  if (lambda_gp < 0) throw ValidationError("lambda_gp must be non-negative");
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (critic_steps < 1) throw ValidationError("critic_steps must be at least 1");
  if (learning_rate <= 0) throw ValidationError("learning_rate must be positive");
  if (total_steps < 0) throw ValidationError("total_steps must be non-negative");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be non-negative");
}

nlohmann::json GanTrainConfig::to_json() const {
  return {{"lambda_gp", lambda_gp},         {"critic_steps", critic_steps},   {"batch_size", batch_size},
          {"learning_rate", learning_rate}, {"beta1", beta1},                 {"beta2", beta2},
          {"total_steps", total_steps},     {"seed", seed},                   {"checkpoint_every", checkpoint_every},
          {"checkpoint_dir", checkpoint_dir.string()}};
}

GanTrainConfig GanTrainConfig::from_json(const nlohmann::json& j) {
  GanTrainConfig c;
  c.lambda_gp = j.value("lambda_gp", c.lambda_gp);
  c.critic_steps = j.value("critic_steps", c.critic_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_dir = j.value("checkpoint_dir", std::string());
  c.validate();
  return c;
}

GanTrainer::GanTrainer(GanBundle bundle, GanTrainConfig config, ImageBatch data)
    : bundle_(std::move(bundle)), config_(std::move(config)), data_(std::move(data)), rng_(make_generator(config_.seed)) {
  config_.validate();
  data_.validate(bundle_.class_count);
  if (!data_.labels) throw ValidationError("AC-GAN training needs labeled images");
  if (data_.shape() != bundle_.shape) throw DimensionError("dataset resolution differs from the bundle");
  bundle_.config_hash = sha256_hex(config_.to_json().dump());
  auto adam = [&](std::vector<torch::Tensor> params) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params),
        torch::optim::AdamOptions(config_.learning_rate).betas({config_.beta1, config_.beta2}));
  };
  gen_opt_ = adam(bundle_.generator->parameters());
  disc_opt_ = adam(bundle_.discriminator->parameters());
}

void GanTrainer::step() {
  bundle_.set_training(true);
  const auto n = data_.size();
  const auto batch = config_.batch_size;
  const auto m = bundle_.latent_dim;
  const auto k = bundle_.class_count;
  DiscriminatorLoss d_loss;
  double aux_acc = 0;
  for (std::int64_t c = 0; c < config_.critic_steps; ++c) {
    auto idx = torch::randint(n, {batch}, rng_, index_options());
    auto real = data_.index_select(idx);
    auto z = torch::randn({batch, m}, rng_, real_options());
    auto y = torch::randint(k, {batch}, rng_, index_options());
    auto mix = sample_mix(batch, rng_);
    disc_opt_->zero_grad();
    d_loss = discriminator_step_loss(bundle_, real, z, y, config_.lambda_gp, mix);
    d_loss.total.backward();
    disc_opt_->step();
    if (c + 1 == config_.critic_steps) {
      torch::NoGradGuard no_grad;
      aux_acc = bundle_.aux_log_probs(real.pixels).argmax(1).eq(*real.labels).to(kReal).mean().item<double>();
    }
  }
  auto z = torch::randn({batch, m}, rng_, real_options());
  auto y = torch::randint(k, {batch}, rng_, index_options());
  gen_opt_->zero_grad();
  auto g_loss = generator_step_loss(bundle_, z, y);
  g_loss.total.backward();
  gen_opt_->step();
  ++bundle_.step;
  bundle_.set_training(false);

  curves_.discriminator.push_back(d_loss.total.item<double>());
  curves_.generator.push_back(g_loss.total.item<double>());
  curves_.penalty.push_back(d_loss.penalty);
  curves_.aux_accuracy.push_back(aux_acc);

  if (config_.checkpoint_every > 0 && bundle_.step % config_.checkpoint_every == 0 && !config_.checkpoint_dir.empty()) {
    save_checkpoint(config_.checkpoint_dir / ("step-" + std::to_string(bundle_.step) + ".ckpt"));
  }
}

void GanTrainer::run_until(std::int64_t step) {
  while (bundle_.step < step) this->step();
}

void GanTrainer::save_checkpoint(const std::filesystem::path& path) const {
  auto archive = bundle_archive(bundle_);
  archive.meta()["train_config"] = config_.to_json();
  put_optimizer(archive, "optim.generator", *gen_opt_);
  put_optimizer(archive, "optim.discriminator", *disc_opt_);
  archive.put("rng_state", rng_.get_state());
  archive.put("curves.discriminator", torch::tensor(curves_.discriminator, real_options()));
  archive.put("curves.generator", torch::tensor(curves_.generator, real_options()));
  archive.put("curves.penalty", torch::tensor(curves_.penalty, real_options()));
  archive.put("curves.aux_accuracy", torch::tensor(curves_.aux_accuracy, real_options()));
  archive.save(path);
}

GanTrainer GanTrainer::resume(const std::filesystem::path& checkpoint, ImageBatch data) {
  const auto archive = Archive::load(checkpoint, "gan_bundle");
  if (!archive.meta().contains("train_config")) throw CheckpointError("checkpoint carries no trainer state");
  auto bundle = bundle_from_archive(archive);
  auto config = GanTrainConfig::from_json(archive.meta().at("train_config"));
  const auto hash = bundle.config_hash;
  GanTrainer trainer(std::move(bundle), config, std::move(data));
  trainer.bundle_.config_hash = hash;
  load_optimizer(archive, "optim.generator", *trainer.gen_opt_);
  load_optimizer(archive, "optim.discriminator", *trainer.disc_opt_);
  trainer.rng_.set_state(archive.tensor("rng_state"));
  auto to_vec = [&](const char* name) {
    auto t = archive.tensor(name).contiguous();
    return std::vector<double>(t.data_ptr<double>(), t.data_ptr<double>() + t.numel());
  };
  trainer.curves_.discriminator = to_vec("curves.discriminator");
  trainer.curves_.generator = to_vec("curves.generator");
  trainer.curves_.penalty = to_vec("curves.penalty");
  trainer.curves_.aux_accuracy = to_vec("curves.aux_accuracy");
  return trainer;
}

GanTrainResult train_acgan(const GanTrainConfig& config, const GanArchitecture& arch, std::int64_t latent_dim,
                           std::int64_t class_count, const ImageBatch& data) {
  auto bundle = GanBundle::create(arch, latent_dim, class_count, data.shape(), config.seed);
  GanTrainer trainer(std::move(bundle), config, data);
  trainer.run_until(config.total_steps);
  return {trainer.bundle(), trainer.curves()};
}

double conditioning_agreement(const GanBundle& bundle, std::int64_t samples, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  auto z = torch::randn({samples, bundle.latent_dim}, gen, real_options());
  auto y = torch::randint(bundle.class_count, {samples}, gen, index_options());
  auto pred = bundle.aux_log_probs(bundle.generate_batch(z, y)).argmax(1);
  return pred.eq(y).to(kReal).mean().item<double>();
}

}  // namespace advgen::gan
