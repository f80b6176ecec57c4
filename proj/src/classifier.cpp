#include "advgen/classifier.hpp"

#include "advgen/archive.hpp"
#include "advgen/error.hpp"
#include "advgen/perturb.hpp"

#include <fstream>

namespace advgen::clf {

namespace nn = torch::nn;

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::madry_cnn: return "madry-cnn";
    case Architecture::resnet: return "resnet";
    case Architecture::mlp: return "mlp";
    case Architecture::logistic: return "logistic";
    case Architecture::external: return "external";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view text) {
  for (auto a : {Architecture::madry_cnn, Architecture::resnet, Architecture::mlp, Architecture::logistic,
                 Architecture::external}) {
    if (text == to_string(a)) return a;
  }
  throw ValidationError("unknown classifier architecture '" + std::string(text) + "'");
}

namespace {

std::string regime_name(Regime r) { return r == Regime::adversarial ? "adversarial" : "standard"; }

Regime parse_regime(const std::string& text) {
  if (text == "standard") return Regime::standard;
  if (text == "adversarial") return Regime::adversarial;
  throw ValidationError("unknown training regime '" + text + "'");
}

}  // namespace

void ClassifierSpec::validate() const {
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  if (input.channels < 1 || input.height < 1 || input.width < 1) throw ValidationError("input shape must be positive");
  if (arch == Architecture::resnet) {
    if (base_maps < 1) throw ValidationError("resnet base_maps must be positive");
    for (auto b : resnet_blocks) {
      if (b < 0) throw ValidationError("resnet stage sizes must be non-negative");
    }
  }
  if (arch == Architecture::mlp && (hidden < 1 || depth < 1)) throw ValidationError("mlp widths must be positive");
  if (arch == Architecture::madry_cnn && (input.height < 4 || input.width < 4)) {
    throw ValidationError("madry-cnn needs at least 4x4 inputs");
  }
  if (arch == Architecture::external && checkpoint.empty()) {
    throw ValidationError("external classifiers need a checkpoint path");
  }
}

nlohmann::json ClassifierSpec::to_json() const {
  nlohmann::json j{{"arch", to_string(arch)},
                   {"class_count", class_count},
                   {"input_shape", input.dims()},
                   {"regime", regime_name(regime)},
                   {"base_maps", base_maps},
                   {"resnet_blocks", resnet_blocks},
                   {"hidden", hidden},
                   {"depth", depth}};
  if (!checkpoint.empty()) j["checkpoint"] = checkpoint.string();
  return j;
}

ClassifierSpec ClassifierSpec::from_json(const nlohmann::json& j) {
  ClassifierSpec s;
  s.arch = parse_architecture(j.value("arch", to_string(s.arch)));
  s.class_count = j.value("class_count", s.class_count);
  if (j.contains("input_shape")) {
    const auto dims = j.at("input_shape").get<std::vector<std::int64_t>>();
    if (dims.size() != 3) throw ValidationError("input_shape must be [C,H,W]");
    s.input = {dims[0], dims[1], dims[2]};
  }
  s.regime = parse_regime(j.value("regime", regime_name(s.regime)));
  s.base_maps = j.value("base_maps", s.base_maps);
  if (j.contains("resnet_blocks")) s.resnet_blocks = j.at("resnet_blocks").get<std::array<std::int64_t, 3>>();
  s.hidden = j.value("hidden", s.hidden);
  s.depth = j.value("depth", s.depth);
  s.checkpoint = j.value("checkpoint", std::string());
  s.validate();
  return s;
}

// -- networks -----------------------------------------------------------------------

MadryCnnImpl::MadryCnnImpl(ImageShape input, std::int64_t class_count) {
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(input.channels, 32, 5).padding(2)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(32, 64, 5).padding(2)));
  const auto flat = 64 * (input.height / 4) * (input.width / 4);
  fc1_ = register_module("fc1", nn::Linear(flat, 1024));
  fc2_ = register_module("fc2", nn::Linear(1024, class_count));
}

torch::Tensor MadryCnnImpl::forward(const torch::Tensor& x) {
  auto h = torch::max_pool2d(torch::relu(conv1_(x)), 2);
  h = torch::max_pool2d(torch::relu(conv2_(h)), 2);
  return fc2_(torch::relu(fc1_(h.flatten(1))));
}

namespace {

constexpr double kLeakySlope = 0.1;

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

class ResidualBlockImpl : public nn::Module {
 public:
  explicit ResidualBlockImpl(std::int64_t maps)
      : bn1_(register_module("bn1", nn::BatchNorm2d(maps))),
        conv1_(register_module("conv1", nn::Conv2d(nn::Conv2dOptions(maps, maps, 3).padding(1).bias(false)))),
        bn2_(register_module("bn2", nn::BatchNorm2d(maps))),
        conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(maps, maps, 3).padding(1).bias(false)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = conv1_(lrelu(bn1_(x)));
    h = conv2_(lrelu(bn2_(h)));
    return x + h;
  }

 private:
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d conv2_;
};
TORCH_MODULE(ResidualBlock);

/// Doubles the maps and halves the resolution; the shortcut average-pools and
/// zero-pads the new channels.
class ResizeBlockImpl : public nn::Module {
 public:
  ResizeBlockImpl(std::int64_t in, std::int64_t out)
      : in_(in),
        out_(out),
        bn1_(register_module("bn1", nn::BatchNorm2d(in))),
        conv1_(register_module("conv1",
                               nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1).bias(false)))),
        bn2_(register_module("bn2", nn::BatchNorm2d(out))),
        conv2_(register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = conv1_(lrelu(bn1_(x)));
    h = conv2_(lrelu(bn2_(h)));
    auto s = torch::avg_pool2d(x, 2, 2, 0, /*ceil_mode=*/true, /*count_include_pad=*/false);
    s = torch::constant_pad_nd(s, {0, 0, 0, 0, 0, out_ - in_});
    return s + h;
  }

 private:
  std::int64_t in_;
  std::int64_t out_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d conv2_;
};
TORCH_MODULE(ResizeBlock);

}  // namespace

ResNetImpl::ResNetImpl(ImageShape input, std::int64_t class_count, std::int64_t base_maps,
                       std::array<std::int64_t, 3> blocks) {
  initial_ = register_module("initial",
                             nn::Conv2d(nn::Conv2dOptions(input.channels, base_maps, 3).padding(1).bias(false)));
  body_ = nn::Sequential();
  std::int64_t maps = base_maps;
  for (std::size_t stage = 0; stage < blocks.size(); ++stage) {
    if (stage > 0) {
      body_->push_back(ResizeBlock(maps, 2 * maps));
      maps *= 2;
      ++resize_blocks_;
    }
    for (std::int64_t i = 0; i < blocks[stage]; ++i) {
      body_->push_back(ResidualBlock(maps));
      ++residual_blocks_;
    }
  }
  register_module("body", body_);
  final_bn_ = register_module("final_bn", nn::BatchNorm2d(maps));
  output_ = register_module("output", nn::Linear(maps, class_count));
}

torch::Tensor ResNetImpl::forward(const torch::Tensor& x) {
  auto h = body_->forward(initial_(x));
  h = lrelu(final_bn_(h)).mean({2, 3});
  return output_(h);
}

MlpImpl::MlpImpl(ImageShape input, std::int64_t class_count, std::int64_t hidden, std::int64_t depth) {
  net_ = nn::Sequential(nn::Flatten());
  for (std::int64_t i = 0; i < depth; ++i) {
    net_->push_back(nn::Linear(i == 0 ? input.numel() : hidden, hidden));
    net_->push_back(nn::ReLU());
  }
  net_->push_back(nn::Linear(hidden, class_count));
  register_module("net", net_);
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

LogisticImpl::LogisticImpl(ImageShape input, std::int64_t class_count) {
  linear_ = register_module("linear", nn::Linear(input.numel(), class_count));
}

torch::Tensor LogisticImpl::forward(const torch::Tensor& x) { return linear_(x.flatten(1)); }

std::shared_ptr<NetImpl> make_network(const ClassifierSpec& spec) {
  spec.validate();
  std::shared_ptr<NetImpl> net;
  switch (spec.arch) {
    case Architecture::madry_cnn: net = std::make_shared<MadryCnnImpl>(spec.input, spec.class_count); break;
    case Architecture::resnet:
      net = std::make_shared<ResNetImpl>(spec.input, spec.class_count, spec.base_maps, spec.resnet_blocks);
      break;
    case Architecture::mlp: net = std::make_shared<MlpImpl>(spec.input, spec.class_count, spec.hidden, spec.depth); break;
    case Architecture::logistic: net = std::make_shared<LogisticImpl>(spec.input, spec.class_count); break;
    case Architecture::external: throw ValidationError("external classifiers are loaded, not built");
  }
  net->to(kReal);
  net->eval();
  return net;
}

// -- classifier wrappers ------------------------------------------------------------

namespace {

void check_input(const torch::Tensor& x, const ImageShape& shape) {
  if (x.dim() != 4 || x.size(1) != shape.channels || x.size(2) != shape.height || x.size(3) != shape.width) {
    throw DimensionError("classifier expects (N," + std::to_string(shape.channels) + "," +
                         std::to_string(shape.height) + "," + std::to_string(shape.width) + ") input");
  }
}

}  // namespace

NetworkClassifier::NetworkClassifier(ClassifierSpec spec, std::shared_ptr<NetImpl> net)
    : spec_(std::move(spec)), net_(std::move(net)) {
  spec_.validate();
  if (!net_) throw ValidationError("classifier network is null");
}

torch::Tensor NetworkClassifier::log_probs(const torch::Tensor& x) const {
  check_input(x, spec_.input);
  return torch::log_softmax(net_->forward(x.to(kReal)), 1);
}

ExternalClassifier::ExternalClassifier(const ClassifierSpec& spec) {
  auto sidecar_path = spec.checkpoint;
  sidecar_path += ".json";
  std::ifstream in(sidecar_path);
  if (!in) throw CheckpointError("missing adapter declaration " + sidecar_path.string());
  nlohmann::json decl;
  try {
    in >> decl;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed adapter declaration: " + std::string(e.what()));
  }
  class_count_ = decl.at("class_count").get<std::int64_t>();
  const auto dims = decl.at("input_shape").get<std::vector<std::int64_t>>();
  if (dims.size() != 3 || class_count_ < 2) throw CheckpointError("adapter declaration has invalid shapes");
  input_ = {dims[0], dims[1], dims[2]};
  const auto output = decl.value("output", std::string("logits"));
  if (output != "logits" && output != "probabilities") {
    throw CheckpointError("adapter output must be 'logits' or 'probabilities'");
  }
  outputs_probabilities_ = output == "probabilities";
  try {
    module_ = torch::jit::load(spec.checkpoint.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot load TorchScript model " + spec.checkpoint.string() + ": " + e.what_without_backtrace());
  }
  module_.eval();
}

torch::Tensor ExternalClassifier::log_probs(const torch::Tensor& x) const {
  check_input(x, input_);
  auto dtype = torch::kFloat32;
  for (const auto& p : module_.parameters()) {
    dtype = p.scalar_type();
    break;
  }
  auto out = module_.forward({x.to(dtype)}).toTensor().to(kReal);
  if (out.dim() != 2 || out.size(1) != class_count_) throw DimensionError("external model returned unexpected shape");
  if (outputs_probabilities_) return out.clamp_min(1e-300).log();
  return torch::log_softmax(out, 1);
}

// -- training -----------------------------------------------------------------------

void TrainConfig::validate() const {
  if (steps < 0) throw ValidationError("steps must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (learning_rate <= 0) throw ValidationError("learning_rate must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"learning_rate", learning_rate}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::shared_ptr<NetworkClassifier> build_untrained(const ClassifierSpec& spec, std::uint64_t seed) {
  std::lock_guard lock(global_rng_mutex());
  torch::manual_seed(seed);
  return std::make_shared<NetworkClassifier>(spec, make_network(spec));
}

TrainedClassifier build_and_train(const ClassifierSpec& spec, const ImageBatch& train, const ImageBatch& heldout,
                                  const TrainConfig& config) {
  config.validate();
  train.validate(spec.class_count);
  if (!train.labels || train.size() == 0) throw ValidationError("training set must be labeled and non-empty");
  if (train.shape() != spec.input) throw DimensionError("training images do not match the classifier input shape");
  TrainedClassifier result;
  result.classifier = build_untrained(spec, config.seed);
  auto net = result.classifier->network_ptr();
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  auto rng = make_generator(mix_seed(config.seed, 1));
  const auto batch = std::min(config.batch_size, train.size());
  for (std::int64_t step = 0; step < config.steps; ++step) {
    auto idx = torch::randint(train.size(), {batch}, rng, index_options());
    auto data = train.index_select(idx);
    auto x = data.pixels;
    if (spec.regime == Regime::adversarial) {
      const auto draw = adversarial_train_schedule(rng);
      if (draw.iterations > 0) {
        PgdOptions opts;
        opts.epsilon = draw.epsilon_unit();
        opts.steps = draw.iterations;
        opts.step_size = 1.0 / 255.0;
        opts.seed = mix_seed(config.seed, static_cast<std::uint64_t>(step) + 2);
        x = pgd(*result.classifier, x, *data.labels, opts).detach();
      }
    }
    net->train();
    optimizer.zero_grad();
    auto loss = torch::nll_loss(torch::log_softmax(net->forward(x), 1), *data.labels);
    const auto value = loss.item<double>();
    if (!std::isfinite(value)) {
      net->eval();
      throw NonFiniteError("classifier loss diverged", step);
    }
    loss.backward();
    optimizer.step();
    net->eval();
    result.loss_curve.push_back(value);
  }
  net->eval();
  if (heldout.size() > 0) result.heldout_accuracy = accuracy(*result.classifier, heldout);
  return result;
}

void save_classifier(const NetworkClassifier& classifier, const std::filesystem::path& path) {
  Archive archive("classifier");
  archive.meta() = {{"format_version", kClassifierFormatVersion}, {"spec", classifier.spec().to_json()}};
  put_module(archive, "net.", classifier.network());
  archive.save(path);
}

ClassifierPtr load_classifier(const std::filesystem::path& path) {
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open classifier " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof magic);
    if (std::string_view(magic, static_cast<std::size_t>(in.gcount())) != "ADVGARCH") {
      ClassifierSpec spec;
      spec.arch = Architecture::external;
      spec.checkpoint = path;
      return std::make_shared<ExternalClassifier>(spec);
    }
  }
  const auto archive = Archive::load(path, "classifier");
  const auto version = archive.meta().value("format_version", 0u);
  if (version != kClassifierFormatVersion) {
    throw CheckpointVersionError("classifier format version " + std::to_string(version) + " != supported " +
                                 std::to_string(kClassifierFormatVersion));
  }
  auto spec = ClassifierSpec::from_json(archive.meta().at("spec"));
  auto classifier = build_untrained(spec, 0);
  load_module(archive, "net.", classifier->network());
  return classifier;
}

double accuracy(const Classifier& f, const ImageBatch& batch, std::int64_t chunk) {
  if (batch.size() == 0) throw ValidationError("accuracy of an empty set is undefined");
  if (!batch.labels) throw ValidationError("accuracy needs labels");
  batch.validate(f.class_count());
  torch::NoGradGuard no_grad;
  std::int64_t correct = 0;
  for (std::int64_t begin = 0; begin < batch.size(); begin += chunk) {
    const auto end = std::min(begin + chunk, batch.size());
    auto pred = f.predict(batch.pixels.slice(0, begin, end));
    correct += pred.eq(batch.labels->slice(0, begin, end)).sum().item<std::int64_t>();
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

}  // namespace advgen::clf
