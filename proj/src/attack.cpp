#include "advgen/attack.hpp"

#include "advgen/error.hpp"
#include "advgen/hash.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

namespace advgen::attack {

torch::Tensor LatentGenerator::sample_anchor(std::int64_t, torch::Generator& gen) const {
  return torch::randn({latent_dim()}, gen, real_options());
}

torch::Tensor BundleGenerator::generate(const torch::Tensor& z, std::int64_t y) const { return bundle_.generate(z, y); }

// -- dataset-indexed generator --------------------------------------------------------

DatasetGenerator::DatasetGenerator(ImageBatch test_partition, std::int64_t class_count)
    : data_(std::move(test_partition)), class_count_(class_count) {
  if (!data_.labels) throw ValidationError("dataset generator needs a labeled partition");
  data_.validate(class_count_);
  by_class_.resize(static_cast<std::size_t>(class_count_));
  auto labels = data_.labels->contiguous();
  const auto* l = labels.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < data_.size(); ++i) by_class_[static_cast<std::size_t>(l[i])].push_back(i);
}

std::int64_t DatasetGenerator::class_size(std::int64_t y) const {
  if (y < 0 || y >= class_count_) throw DimensionError("class index " + std::to_string(y) + " out of range");
  return static_cast<std::int64_t>(by_class_[static_cast<std::size_t>(y)].size());
}

torch::Tensor DatasetGenerator::sample_anchor(std::int64_t y, torch::Generator& gen) const {
  const auto size = class_size(y);
  if (size == 0) throw ValidationError("test partition has no image of class " + std::to_string(y));
  auto index = torch::randint(size, {1}, gen, index_options());
  return index.to(kReal);
}

torch::Tensor DatasetGenerator::generate(const torch::Tensor& z, std::int64_t y) const {
  if (z.numel() != 1) throw DimensionError("dataset latent is a single index");
  const auto size = class_size(y);
  const auto index = static_cast<std::int64_t>(std::llround(z.item<double>()));
  if (index < 0 || index >= size) {
    throw DimensionError("index " + std::to_string(index) + " outside class " + std::to_string(y) + " of size " +
                         std::to_string(size));
  }
  return data_.pixels[by_class_[static_cast<std::size_t>(y)][static_cast<std::size_t>(index)]];
}

DatasetGenerator dataset_generator_adapter(const ImageBatch& test_partition, std::int64_t class_count,
                                           std::int64_t y) {
  DatasetGenerator gen(test_partition, class_count);
  if (gen.class_size(y) == 0) throw ValidationError("test partition has no image of class " + std::to_string(y));
  return gen;
}

// -- configuration ------------------------------------------------------------------

std::string to_string(AttackStatus status) {
  return status == AttackStatus::success ? "success" : "budget_exhausted";
}

namespace {

AttackStatus parse_status(const std::string& s) {
  if (s == "success") return AttackStatus::success;
  if (s == "budget_exhausted") return AttackStatus::budget_exhausted;
  throw ValidationError("unknown attack status '" + s + "'");
}

}  // namespace

void AttackConfig::validate(std::int64_t class_count) const {
  if (y_source < 0 || y_source >= class_count) throw ValidationError("y_source out of range");
  if (y_target) {
    if (*y_target < 0 || *y_target >= class_count) throw ValidationError("y_target out of range");
    if (*y_target == y_source) throw ValidationError("y_target must differ from y_source");
  }
  for (auto [name, v] : {std::pair{"lambda1", lambda1}, {"lambda2", lambda2}, {"epsilon", epsilon},
                         {"epsilon_attack", epsilon_attack}, {"alpha", alpha}}) {
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be finite and non-negative");
  }
  if (steps < 1) throw ValidationError("steps must be at least 1");
  if (max_restarts < 1) throw ValidationError("max_restarts must be at least 1");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"y_source", y_source},
          {"y_target", y_target ? nlohmann::json(*y_target) : nlohmann::json(nullptr)},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"epsilon", epsilon},
          {"epsilon_attack", epsilon_attack},
          {"alpha", alpha},
          {"steps", steps},
          {"max_restarts", max_restarts},
          {"seed", seed},
          {"normalize_latent_grad", normalize_latent_grad},
          {"normalize_noise_grad", normalize_noise_grad},
          {"tau_init", tau_init == TauInit::normal ? "normal" : "zero"},
          {"latent_mode", latent_mode == LatentMode::free ? "free" : "frozen"}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"y_source", "y_target",   "lambda1",     "lambda2",
                                           "epsilon",  "epsilon_attack", "alpha",   "steps",
                                           "max_restarts", "seed",   "normalize_latent_grad",
                                           "normalize_noise_grad", "tau_init", "latent_mode"};
  if (!j.is_object()) throw ValidationError("attack config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown attack config key '" + key + "'");
  }
  AttackConfig c;
  try {
    c.y_source = j.value("y_source", c.y_source);
    if (j.contains("y_target") && !j.at("y_target").is_null()) c.y_target = j.at("y_target").get<std::int64_t>();
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.epsilon_attack = j.value("epsilon_attack", c.epsilon_attack);
    c.alpha = j.value("alpha", c.alpha);
    c.steps = j.value("steps", c.steps);
    c.max_restarts = j.value("max_restarts", c.max_restarts);
    c.seed = j.value("seed", c.seed);
    c.normalize_latent_grad = j.value("normalize_latent_grad", c.normalize_latent_grad);
    c.normalize_noise_grad = j.value("normalize_noise_grad", c.normalize_noise_grad);
    const auto tau = j.value("tau_init", std::string("normal"));
    if (tau != "normal" && tau != "zero") throw ValidationError("tau_init must be 'normal' or 'zero'");
    c.tau_init = tau == "normal" ? TauInit::normal : TauInit::zero;
    const auto mode = j.value("latent_mode", std::string("free"));
    if (mode != "free" && mode != "frozen") throw ValidationError("latent_mode must be 'free' or 'frozen'");
    c.latent_mode = mode == "free" ? LatentMode::free : LatentMode::frozen;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad attack config value: ") + e.what());
  }
  return c;
}

std::string AttackConfig::hash() const { return sha256_hex(to_json().dump()); }

// -- losses -------------------------------------------------------------------------

namespace {

torch::Tensor as_batch(const torch::Tensor& image) { return image.dim() == 3 ? image.unsqueeze(0) : image; }

const double kLogFloor = std::log(kConfidenceFloor);

void check_class(const clf::Classifier& f, std::int64_t y) {
  if (y < 0 || y >= f.class_count()) throw DimensionError("class index " + std::to_string(y) + " out of range");
}

}  // namespace

torch::Tensor loss_l0(const clf::Classifier& f, const torch::Tensor& image, std::int64_t y_target) {
  check_class(f, y_target);
  auto lp = f.log_probs(as_batch(image)).select(1, y_target);
  return -lp.clamp_min(kLogFloor).mean();
}

torch::Tensor loss_l0_untargeted(const clf::Classifier& f, const torch::Tensor& image, std::int64_t y_source) {
  check_class(f, y_source);
  auto lp = f.log_probs(as_batch(image));
  std::vector<torch::Tensor> competitors;
  for (std::int64_t y = 0; y < f.class_count(); ++y) {
    if (y != y_source) competitors.push_back(lp.select(1, y));
  }
  auto best = std::get<0>(torch::stack(competitors, 1).max(1));
  return -best.clamp_min(kLogFloor).mean();
}

torch::Tensor loss_l1(const torch::Tensor& z, const torch::Tensor& z0, double epsilon) {
  if (z.sizes() != z0.sizes()) throw DimensionError("z and z0 differ in shape");
  return ((z - z0).abs() - epsilon).clamp_min(0.0).mean();
}

torch::Tensor loss_l2(const clf::Classifier& aux, const torch::Tensor& image, std::int64_t y_source) {
  return loss_l0(aux, image, y_source);
}

torch::Tensor noise_augment(const torch::Tensor& image, const torch::Tensor& tau, double epsilon_attack) {
  if (image.sizes() != tau.sizes()) throw DimensionError("tau must match the image shape");
  return (image + epsilon_attack * torch::tanh(tau)).clamp(0.0, 1.0);
}

TotalLoss total_loss(const LatentState& state, const AttackConfig& config, const LatentGenerator& generator,
                     const clf::Classifier& f, const clf::Classifier* aux) {
  if (config.lambda2 > 0 && aux == nullptr) throw ValidationError("lambda2 > 0 needs an auxiliary classifier");
  TotalLoss out;
  out.image = generator.generate(state.z, config.y_source);
  if (config.noise_enabled()) {
    if (!state.tau) throw ValidationError("noise augmentation needs tau");
    out.image = noise_augment(out.image, *state.tau, config.epsilon_attack);
  }
  auto l0 = config.targeted() ? loss_l0(f, out.image, *config.y_target)
                              : loss_l0_untargeted(f, out.image, config.y_source);
  auto l1 = loss_l1(state.z, state.z0, config.epsilon);
  auto l2 = aux ? loss_l2(*aux, out.image, config.y_source) : torch::zeros({}, real_options());
  out.total = l0 + config.lambda1 * l1 + config.lambda2 * l2;
  out.terms.l0 = l0.item<double>();
  out.terms.l1 = l1.item<double>();
  out.terms.l2 = l2.item<double>();
  out.terms.total = out.total.item<double>();
  return out;
}

bool is_success(const AttackConfig& config, std::int64_t prediction) {
  return config.targeted() ? prediction == *config.y_target : prediction != config.y_source;
}

// -- search -------------------------------------------------------------------------

namespace {

/// Gradient of the total loss with respect to one variable; zeros when the loss
/// does not depend on it.
torch::Tensor loss_gradient(const LatentState& state, const AttackConfig& config, const LatentGenerator& generator,
                            const clf::Classifier& f, const clf::Classifier* aux, bool wrt_tau, LossTerms* terms) {
  LatentState s{state.z.detach(), state.z0, std::nullopt};
  if (state.tau) s.tau = state.tau->detach();
  auto& var = wrt_tau ? *s.tau : s.z;
  var.requires_grad_(true);
  auto loss = total_loss(s, config, generator, f, aux);
  if (terms) *terms = loss.terms;
  if (!std::isfinite(loss.terms.total)) throw NonFiniteError("non-finite attack loss");
  if (!loss.total.requires_grad()) return torch::zeros_like(var);
  auto g = torch::autograd::grad({loss.total}, {var}, {}, false, false, /*allow_unused=*/true)[0];
  if (!g.defined()) return torch::zeros_like(var);
  if (!all_finite(g)) throw NonFiniteError("non-finite attack gradient");
  return g;
}

torch::Tensor normalized(const torch::Tensor& g) {
  const auto norm = g.norm().item<double>();
  return norm > 0 ? g / norm : g;
}

}  // namespace

AttackResult run_attack(const AttackConfig& config, const LatentGenerator& generator, const clf::Classifier& f,
                        const clf::Classifier* aux) {
  config.validate(generator.class_count());
  if (f.class_count() != generator.class_count()) throw DimensionError("classifier and generator class counts differ");
  if (config.lambda2 > 0 && aux == nullptr) throw ValidationError("lambda2 > 0 needs an auxiliary classifier");
  auto gen = make_generator(config.seed);
  const bool move_latent = config.latent_mode == LatentMode::free && !generator.discrete_latent();
  const auto shape = generator.image_shape();

  AttackResult result;
  for (std::int64_t restart = 0; restart < config.max_restarts; ++restart) {
    LatentState state;
    if (config.noise_enabled()) {
      state.tau = config.tau_init == TauInit::normal ? torch::randn(shape.dims(), gen, real_options())
                                                     : torch::zeros(shape.dims(), real_options());
    }
    state.z0 = generator.sample_anchor(config.y_source, gen);
    state.z = state.z0.clone();
    result.trace.clear();
    result.restarts_used = restart + 1;
    try {
      for (std::int64_t t = 0; t < config.steps; ++t) {
        LossTerms terms;
        if (move_latent) {
          auto g = loss_gradient(state, config, generator, f, aux, false, &terms);
          if (config.normalize_latent_grad) g = normalized(g);
          state.z = (state.z - config.alpha * g).detach();
        }
        if (state.tau) {
          auto g = loss_gradient(state, config, generator, f, aux, true, move_latent ? nullptr : &terms);
          if (config.normalize_noise_grad) g = normalized(g);
          state.tau = (*state.tau - config.alpha * g).detach();
        }
        if (!move_latent && !state.tau) {
          torch::NoGradGuard no_grad;
          terms = total_loss(state, config, generator, f, aux).terms;
        }
        result.trace.push_back(terms);
      }
      torch::NoGradGuard no_grad;
      auto image = generator.generate(state.z, config.y_source);
      if (state.tau) image = noise_augment(image, *state.tau, config.epsilon_attack);
      if (!all_finite(image)) throw NonFiniteError("non-finite attack image");
      auto probs = f.probabilities(image.unsqueeze(0))[0];
      const auto prediction = probs.argmax().item<std::int64_t>();
      result.image = image.detach();
      result.z = state.z;
      result.z0 = state.z0;
      result.tau = state.tau;
      result.prediction = prediction;
      result.confidence = probs[prediction].item<double>();
      if (is_success(config, prediction)) {
        result.status = AttackStatus::success;
        return result;
      }
    } catch (const NonFiniteError& e) {
      result.diagnostics.push_back("restart " + std::to_string(restart) + ": " + e.what());
    }
  }
  result.status = AttackStatus::budget_exhausted;
  return result;
}

std::vector<AttackResult> run_attacks(const AttackConfig& base, const std::vector<AttackTask>& tasks,
                                      const LatentGenerator& generator, const clf::Classifier& f,
                                      const clf::Classifier* aux, std::int64_t workers) {
  std::vector<AttackConfig> configs;
  configs.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto c = base;
    c.y_source = tasks[i].y_source;
    c.y_target = tasks[i].y_target;
    c.seed = mix_seed(base.seed, i);
    c.validate(generator.class_count());
    configs.push_back(std::move(c));
  }
  std::vector<AttackResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        results[i] = run_attack(configs[i], generator, f, aux);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = static_cast<std::size_t>(std::max<std::int64_t>(1, workers));
  if (count == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < count; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<AttackTask> make_tasks(std::int64_t class_count, bool targeted, std::int64_t per_cell) {
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  if (per_cell < 1) throw ValidationError("per_cell must be positive");
  std::vector<AttackTask> tasks;
  for (std::int64_t s = 0; s < class_count; ++s) {
    if (targeted) {
      for (std::int64_t t = 0; t < class_count; ++t) {
        if (t == s) continue;
        for (std::int64_t r = 0; r < per_cell; ++r) tasks.push_back({s, t, r});
      }
    } else {
      for (std::int64_t r = 0; r < per_cell; ++r) tasks.push_back({s, std::nullopt, r});
    }
  }
  return tasks;
}

// -- persistence ----------------------------------------------------------------------

nlohmann::json ManifestEntry::to_json() const {
  return {{"id", id},
          {"y_source", y_source},
          {"y_target", y_target ? nlohmann::json(*y_target) : nlohmann::json(nullptr)},
          {"prediction", prediction},
          {"confidence", confidence},
          {"restarts", restarts},
          {"status", to_string(status)},
          {"config_hash", config_hash}};
}

ManifestEntry ManifestEntry::from_json(const nlohmann::json& j) {
  ManifestEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.y_source = j.at("y_source").get<std::int64_t>();
    if (!j.at("y_target").is_null()) e.y_target = j.at("y_target").get<std::int64_t>();
    e.prediction = j.at("prediction").get<std::int64_t>();
    e.confidence = j.at("confidence").get<double>();
    e.restarts = j.at("restarts").get<std::int64_t>();
    e.status = parse_status(j.at("status").get<std::string>());
    e.config_hash = j.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed manifest entry: ") + ex.what());
  }
  return e;
}

std::vector<ManifestEntry> write_results(const std::filesystem::path& dir, const std::vector<AttackTask>& tasks,
                                         const std::vector<AttackResult>& results, const std::string& config_hash) {
  if (tasks.size() != results.size()) throw ValidationError("one result per task expected");
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  std::ofstream manifest(dir / "results.jsonl", std::ios::trunc);
  if (!manifest) throw Error("cannot write " + (dir / "results.jsonl").string());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (!r.image.defined()) throw ValidationError("result " + std::to_string(i) + " has no image");
    char id[32];
    std::snprintf(id, sizeof id, "adv-%06zu", i);
    ManifestEntry e{id,          tasks[i].y_source, tasks[i].y_target, r.prediction, r.confidence,
                    r.restarts_used, r.status,     config_hash};
    write_png(dir / (e.id + ".png"), r.image);
    manifest << e.to_json().dump() << '\n';
    images.push_back(r.image);
    labels.push_back(e.y_source);
    entries.push_back(std::move(e));
  }
  if (!images.empty()) {
    save_batch({torch::stack(images), torch::tensor(labels, index_options())}, dir / "images.bin");
  }
  return entries;
}

StoredResults read_results(const std::filesystem::path& dir) {
  std::ifstream in(dir / "results.jsonl");
  if (!in) throw ValidationError("missing " + (dir / "results.jsonl").string());
  StoredResults out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.entries.push_back(ManifestEntry::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(std::string("malformed results.jsonl: ") + e.what());
    }
  }
  if (!out.entries.empty()) {
    out.images = load_batch(dir / "images.bin");
    if (out.images.size() != static_cast<std::int64_t>(out.entries.size())) {
      throw ValidationError("images.bin does not match results.jsonl");
    }
  }
  return out;
}

}  // namespace advgen::attack
