#include "advgen/pipeline.hpp"

#include "advgen/annotation.hpp"
#include "advgen/error.hpp"
#include "advgen/evaluation.hpp"
#include "advgen/hash.hpp"

#include <torch/version.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace advgen::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// -- strict parsing -------------------------------------------------------------

StrictObject::StrictObject(const json& j, std::string context) : j_(j), context_(std::move(context)) {
  if (!j_.is_object()) throw ValidationError(context_ + " must be an object");
}

bool StrictObject::has(const std::string& key) const { return j_.contains(key); }

const json& StrictObject::at(const std::string& key) {
  used_.insert(key);
  return j_.at(key);
}

void StrictObject::finish() const {
  std::string unknown;
  for (const auto& [key, _] : j_.items()) {
    if (!used_.contains(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ValidationError("unknown key(s) in " + context_ + ": " + unknown);
}

void StrictObject::throw_missing(const std::string& key) const {
  throw ValidationError(context_ + " is missing required key '" + key + "'");
}

void StrictObject::throw_type_error(const std::string& key, const std::string& detail) const {
  throw ValidationError(context_ + "." + key + " has the wrong type: " + detail);
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw ValidationError(context + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ValidationError("unknown key in " + context + ": " + key);
    }
  }
}

template <class Fn>
auto wrap_json(const std::string& context, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ValidationError(context + ": " + e.what());
  }
}

attack::AttackConfig table_row(double lambda1, double lambda2, double epsilon, double epsilon_attack, double alpha,
                               std::int64_t steps) {
  attack::AttackConfig c;
  c.lambda1 = lambda1;
  c.lambda2 = lambda2;
  c.epsilon = epsilon;
  c.epsilon_attack = epsilon_attack;
  c.alpha = alpha;
  c.steps = steps;
  return c;
}

Preset make_preset(std::string name, std::string dataset, std::string classifier, bool targeted,
                   attack::AttackConfig config, std::string note = {}) {
  Preset p;
  p.name = std::move(name);
  p.dataset = std::move(dataset);
  p.classifier = std::move(classifier);
  p.targeted = targeted;
  p.noise = config.epsilon_attack > 0;
  p.config = config;
  p.note = std::move(note);
  return p;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    std::vector<Preset> v;
    v.push_back(make_preset("mnist-madry-targeted", "mnist", "madry-cnn", true, table_row(50, 0, 0.1, 0, 1, 500)));
    v.push_back(
        make_preset("mnist-madry-targeted-noise", "mnist", "madry-cnn", true, table_row(50, 0, 0.1, 0.3, 1, 500)));
    v.push_back(make_preset("mnist-raghunathan-untargeted", "mnist", "external", false,
                            table_row(100, 0, 0.1, 0, 10, 100), "certified defense supplied as an external model"));
    v.push_back(make_preset("mnist-kolter-untargeted", "mnist", "external", false, table_row(100, 0, 0.1, 0, 1, 100),
                            "certified defense supplied as an external model"));
    v.push_back(make_preset("svhn-resnet-targeted", "svhn", "resnet", true, table_row(100, 100, 0.01, 0, 0.1, 200)));
    v.push_back(
        make_preset("svhn-resnet-targeted-noise", "svhn", "resnet", true, table_row(100, 100, 0.01, 0.03, 0.5, 300)));
    auto celeba = [&](std::string name, std::int64_t target, attack::AttackConfig c) {
      c.y_source = 1 - target;
      c.y_target = target;
      v.push_back(make_preset(std::move(name), "celeba-gender", "resnet", true, c,
                              target == 1 ? "female source, male target" : "male source, female target"));
    };
    celeba("celeba-target-male", 1, table_row(100, 100, 0.001, 0, 1, 200));
    celeba("celeba-target-male-noise", 1, table_row(100, 100, 0.001, 0.03, 1, 200));
    celeba("celeba-target-female", 0, table_row(100, 100, 0.1, 0, 0.1, 200));
    celeba("celeba-target-female-noise", 0, table_row(100, 100, 0.1, 0.03, 0.1, 200));
    auto toy = [] {
      auto c = table_row(0.1, 0, 2.0, 0, 0.3, 100);
      c.normalize_latent_grad = true;
      return c;
    };
    auto toy_noise = toy();
    toy_noise.epsilon_attack = 0.1;
    v.push_back(make_preset("toy-targeted", "synthetic", "mlp", true, toy(), "desk-scale toy"));
    v.push_back(make_preset("toy-targeted-noise", "synthetic", "mlp", true, toy_noise, "desk-scale toy"));
    v.push_back(make_preset("toy-untargeted", "synthetic", "mlp", false, toy(), "desk-scale toy"));
    return v;
  }();
  return all;
}

const Preset& find_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ValidationError("unknown preset '" + std::string(name) + "'; known presets: " + known);
}

// -- run configuration ---------------------------------------------------------------

namespace {

DataSection parse_data(const json& j, std::uint64_t seed) {
  StrictObject o(j, "data");
  DataSection d;
  d.name = data::parse_dataset_name(o.get<std::string>("name", "synthetic"));
  d.root = o.get<std::string>("root", "");
  d.synthetic.seed = seed;
  if (o.has("synthetic")) {
    StrictObject s(o.at("synthetic"), "data.synthetic");
    auto& syn = d.synthetic;
    syn.seed = s.get<std::uint64_t>("seed", syn.seed);
    syn.class_count = s.get<std::int64_t>("class_count", syn.class_count);
    syn.height = s.get<std::int64_t>("height", syn.height);
    syn.width = s.get<std::int64_t>("width", syn.width);
    syn.channels = s.get<std::int64_t>("channels", syn.channels);
    syn.per_class = s.get<std::int64_t>("per_class", syn.per_class);
    syn.test_fraction = s.get<double>("test_fraction", syn.test_fraction);
    s.finish();
  }
  o.finish();
  return d;
}

GanSection parse_gan(const json& j, std::uint64_t seed) {
  StrictObject o(j, "gan");
  GanSection g;
  g.latent_dim = o.get<std::int64_t>("latent_dim", g.latent_dim);
  if (g.latent_dim < 1) throw ValidationError("gan.latent_dim must be positive");
  if (o.has("arch")) {
    const auto& a = o.at("arch");
    check_keys(a, {"kind", "hidden", "depth", "embed_dim", "shared_aux_trunk"}, "gan.arch");
    g.arch = wrap_json("gan.arch", [&] { return gan::GanArchitecture::from_json(a); });
  }
  g.train.seed = seed;
  if (o.has("train")) {
    auto t = o.at("train");
    check_keys(t, {"lambda_gp", "critic_steps", "batch_size", "learning_rate", "beta1", "beta2", "total_steps", "seed",
                   "checkpoint_every", "checkpoint_dir"},
               "gan.train");
    if (!t.contains("seed")) t["seed"] = seed;
    g.train = wrap_json("gan.train", [&] { return gan::GanTrainConfig::from_json(t); });
  }
  o.finish();
  return g;
}

ClassifierSection parse_classifier(const json& j, std::uint64_t seed) {
  StrictObject o(j, "classifier");
  ClassifierSection c;
  if (o.has("spec")) {
    const auto& s = o.at("spec");
    check_keys(s, {"arch", "class_count", "input_shape", "regime", "base_maps", "resnet_blocks", "hidden", "depth",
                   "checkpoint"},
               "classifier.spec");
    c.spec = wrap_json("classifier.spec", [&] { return clf::ClassifierSpec::from_json(s); });
  }
  c.train.seed = seed;
  if (o.has("train")) {
    auto t = o.at("train");
    check_keys(t, {"steps", "batch_size", "learning_rate", "seed"}, "classifier.train");
    if (!t.contains("seed")) t["seed"] = seed;
    c.train = wrap_json("classifier.train", [&] { return clf::TrainConfig::from_json(t); });
  }
  o.finish();
  return c;
}

AttackSection parse_attack(const json& j, std::uint64_t seed) {
  StrictObject o(j, "attack");
  AttackSection a;
  json base = attack::AttackConfig{}.to_json();
  if (o.has("preset")) {
    const auto& preset = find_preset(o.get<std::string>("preset", ""));
    a.preset = preset.name;
    a.targeted = preset.targeted;
    base = preset.config.to_json();
  }
  base["seed"] = seed;
  if (o.has("config")) {
    const auto& overrides = o.at("config");
    if (!overrides.is_object()) throw ValidationError("attack.config must be an object");
    base.merge_patch(overrides);
    // merge_patch drops keys set to null; an explicit null target means untargeted.
    if (overrides.contains("y_target") && overrides.at("y_target").is_null()) base["y_target"] = nullptr;
  }
  a.config = attack::AttackConfig::from_json(base);
  a.targeted = o.get<bool>("targeted", a.targeted);
  a.per_cell = o.get<std::int64_t>("per_cell", a.per_cell);
  a.workers = o.get<std::int64_t>("workers", a.workers);
  if (a.per_cell < 1) throw ValidationError("attack.per_cell must be positive");
  if (a.workers < 1) throw ValidationError("attack.workers must be positive");
  o.finish();
  return a;
}

json normalized(const RunConfig& c) {
  json syn{{"seed", c.data.synthetic.seed},
           {"class_count", c.data.synthetic.class_count},
           {"height", c.data.synthetic.height},
           {"width", c.data.synthetic.width},
           {"channels", c.data.synthetic.channels},
           {"per_class", c.data.synthetic.per_class},
           {"test_fraction", c.data.synthetic.test_fraction}};
  return {{"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"data", {{"name", data::to_string(c.data.name)}, {"root", c.data.root.string()}, {"synthetic", syn}}},
          {"gan", {{"latent_dim", c.gan.latent_dim}, {"arch", c.gan.arch.to_json()}, {"train", c.gan.train.to_json()}}},
          {"classifier", {{"spec", c.classifier.spec.to_json()}, {"train", c.classifier.train.to_json()}}},
          {"attack",
           {{"preset", c.attack.preset ? json(*c.attack.preset) : json(nullptr)},
            {"config", c.attack.config.to_json()},
            {"targeted", c.attack.targeted},
            {"per_cell", c.attack.per_cell},
            {"workers", c.attack.workers}}}};
}

}  // namespace

RunConfig RunConfig::parse(const json& j) {
  StrictObject o(j, "config");
  RunConfig c;
  c.source = j;
  c.seed = o.get<std::uint64_t>("seed", 0);
  c.output_dir = o.get<std::string>("output_dir", "");
  c.data = parse_data(o.has("data") ? o.at("data") : json::object(), c.seed);
  c.gan = parse_gan(o.has("gan") ? o.at("gan") : json::object(), c.seed);
  c.classifier = parse_classifier(o.has("classifier") ? o.at("classifier") : json::object(), c.seed);
  c.attack = parse_attack(o.has("attack") ? o.at("attack") : json::object(), c.seed);
  o.finish();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse(j);
}

std::string RunConfig::hash() const { return sha256_hex(normalized(*this).dump()); }

// -- manifests and data ----------------------------------------------------------------

namespace {

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return sha256_hex(bytes);
}

json input_entry(const fs::path& path) {
  json j{{"path", path.string()}};
  if (fs::is_regular_file(path)) {
    j["sha256"] = file_sha256(path);
  } else if (fs::is_regular_file(path / "dataset.json")) {
    j["dataset_sha256"] = file_sha256(path / "dataset.json");
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

void write_curve_csv(const fs::path& path, const std::vector<std::pair<std::string, const std::vector<double>*>>& cols) {
  std::ostringstream out;
  out << std::setprecision(17) << "step";
  for (const auto& [name, _] : cols) out << ',' << name;
  out << '\n';
  const auto n = cols.empty() ? 0 : cols.front().second->size();
  for (std::size_t i = 0; i < n; ++i) {
    out << i + 1;
    for (const auto& [_, v] : cols) out << ',' << (*v)[i];
    out << '\n';
  }
  write_text(path, out.str());
}

}  // namespace

void write_manifest(const fs::path& dir, const std::string& command, const json& inputs, const json& config,
                    std::uint64_t seed) {
  fs::create_directories(dir);
  json manifest{{"command", command},
                {"inputs", inputs},
                {"config", config},
                {"config_hash", sha256_hex(config.dump())},
                {"seed", seed},
                {"versions",
                 {{"advgen", "0.1.0"},
                  {"torch", std::to_string(TORCH_VERSION_MAJOR) + "." + std::to_string(TORCH_VERSION_MINOR) + "." +
                                std::to_string(TORCH_VERSION_PATCH)},
                  {"gan_bundle_format", gan::kBundleFormatVersion},
                  {"classifier_format", clf::kClassifierFormatVersion}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

fs::path data_root_for(const DataSection& section) {
  if (!section.root.empty()) return section.root;
  if (const char* env = std::getenv("ADVGEN_DATA_ROOT"); env && *env) {
    return fs::path(env) / data::to_string(section.name);
  }
  throw ValidationError("no data root: set data.root or ADVGEN_DATA_ROOT");
}

ImageBatch load_prepared(const fs::path& dir, const std::string& partition) {
  const auto path = dir / (partition + ".bin");
  if (!fs::exists(path)) throw MissingFilesError(partition, path.string() + " not found; run data prepare first");
  return load_batch(path);
}

int data_prepare(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  json counts = json::object();
  data::DatasetSpec spec;
  json inputs = json::object();
  if (config.data.name == data::DatasetName::synthetic) {
    const auto ds = data::make_synthetic_dataset(config.data.synthetic);
    spec = ds.spec;
    data::materialize_dataset(out, spec, {{"train", ds.train}, {"test", ds.test}});
    save_batch(ds.train, out / "train.bin");
    save_batch(ds.test, out / "test.bin");
    counts = {{"train", ds.train.size()}, {"test", ds.test.size()}};
  } else {
    switch (config.data.name) {
      case data::DatasetName::mnist: spec = data::DatasetSpec::mnist(); break;
      case data::DatasetName::svhn: spec = data::DatasetSpec::svhn(); break;
      default: spec = data::DatasetSpec::celeba_gender(); break;
    }
    const auto root = data_root_for(config.data);
    inputs["data_root"] = root.string();
    for (const auto& [partition, _] : spec.splits) {
      auto batch = data::load_dataset(spec, root, partition).data();
      save_batch(batch, out / (partition + ".bin"));
      counts[partition] = batch.size();
    }
    json meta{{"name", data::to_string(spec.name)},
              {"class_count", spec.class_count},
              {"shape", spec.shape.dims()},
              {"splits", counts}};
    write_text(out / "dataset.json", meta.dump(2) + "\n");
  }
  write_manifest(out, "data prepare", inputs, normalized(config), config.seed);
  std::printf("prepared %s: %s\n", data::to_string(spec.name).c_str(), counts.dump().c_str());
  return kExitOk;
}

int gan_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out,
              const std::optional<fs::path>& resume) {
  const auto spec = data::read_materialized_spec(data_dir);
  std::vector<ImageBatch> parts;
  for (const auto& [partition, _] : spec.splits) parts.push_back(load_prepared(data_dir, partition));
  auto data = ImageBatch::concat(parts);
  fs::create_directories(out);
  auto train = config.gan.train;
  if (train.checkpoint_every > 0 && train.checkpoint_dir.empty()) train.checkpoint_dir = out / "checkpoints";
  if (!train.checkpoint_dir.empty()) fs::create_directories(train.checkpoint_dir);
  auto trainer = resume ? gan::GanTrainer::resume(*resume, data)
                        : gan::GanTrainer(gan::GanBundle::create(config.gan.arch, config.gan.latent_dim,
                                                                 spec.class_count, spec.shape, train.seed),
                                          train, data);
  trainer.run_until(trainer.config().total_steps);
  trainer.save_checkpoint(out / "gan.ckpt");
  const auto& curves = trainer.curves();
  write_curve_csv(out / "curves.csv", {{"discriminator", &curves.discriminator},
                                       {"generator", &curves.generator},
                                       {"penalty", &curves.penalty},
                                       {"aux_accuracy", &curves.aux_accuracy}});
  const auto agreement = gan::conditioning_agreement(trainer.bundle(), 1000, mix_seed(train.seed, 7));
  write_text(out / "metrics.json",
             json{{"steps", trainer.bundle().step}, {"conditioning_agreement", agreement}}.dump(2) + "\n");
  json inputs{{"data", input_entry(data_dir)}};
  if (resume) inputs["resume"] = input_entry(*resume);
  write_manifest(out, "gan train", inputs, normalized(config), config.seed);
  std::printf("trained %lld steps; conditioning agreement %.4f\n", static_cast<long long>(trainer.bundle().step),
              agreement);
  return kExitOk;
}

int clf_train(const RunConfig& config, const fs::path& data_dir, const fs::path& out) {
  const auto spec = data::read_materialized_spec(data_dir);
  auto clf_spec = config.classifier.spec;
  clf_spec.class_count = spec.class_count;
  clf_spec.input = spec.shape;
  const auto train = load_prepared(data_dir, "train");
  const auto test = spec.splits.contains("test") ? load_prepared(data_dir, "test") : ImageBatch{};
  auto trained = clf::build_and_train(clf_spec, train, test, config.classifier.train);
  fs::create_directories(out);
  clf::save_classifier(*trained.classifier, out / "classifier.ckpt");
  write_curve_csv(out / "loss.csv", {{"loss", &trained.loss_curve}});
  write_text(out / "metrics.json", json{{"heldout_accuracy", trained.heldout_accuracy}}.dump(2) + "\n");
  write_manifest(out, "clf train", {{"data", input_entry(data_dir)}}, normalized(config), config.seed);
  std::printf("held-out accuracy %.4f\n", trained.heldout_accuracy);
  return kExitOk;
}

int attack_run(const RunConfig& config, const fs::path& gan_checkpoint, const fs::path& classifier_checkpoint,
               const fs::path& out) {
  const auto bundle = gan::load_bundle(gan_checkpoint);
  const auto f = clf::load_classifier(classifier_checkpoint);
  if (f->class_count() != bundle.class_count || !(f->input_shape() == bundle.shape)) {
    throw ValidationError("classifier and generator disagree on classes or image shape");
  }
  attack::BundleGenerator generator(bundle);
  attack::AuxClassifier aux(bundle);
  const auto& base = config.attack.config;
  auto tasks = attack::make_tasks(bundle.class_count, config.attack.targeted, config.attack.per_cell);
  if (config.attack.targeted && base.y_target) {
    std::erase_if(tasks, [&](const attack::AttackTask& t) { return t.y_target != base.y_target; });
  }
  const auto results = attack::run_attacks(base, tasks, generator, *f, &aux, config.attack.workers);
  const auto hash = config.hash();
  const auto entries = attack::write_results(out, tasks, results, hash);
  std::int64_t exhausted = 0;
  for (const auto& e : entries) exhausted += e.status == attack::AttackStatus::budget_exhausted ? 1 : 0;
  write_manifest(out, "attack run",
                 {{"gan", input_entry(gan_checkpoint)},
                  {"classifier", input_entry(classifier_checkpoint)},
                  {"class_count", bundle.class_count},
                  {"noise", base.noise_enabled()},
                  {"epsilon_attack", base.epsilon_attack}},
                 normalized(config), config.seed);
  std::printf("%zu attacks, %lld budget exhausted\n", entries.size(), static_cast<long long>(exhausted));
  return exhausted > 0 ? kExitBudgetExhausted : kExitOk;
}

int annotate_simulate(const fs::path& results_dir, const fs::path& log_path, const fs::path& image_dir,
                      const std::string& policy, const std::optional<fs::path>& oracle_classifier,
                      double flip_probability, std::uint64_t seed) {
  const auto stored = attack::read_results(results_dir);
  if (stored.entries.empty()) throw ValidationError("no attack results in " + results_dir.string());
  annotate::ServiceConfig sc;
  sc.log_path = log_path;
  sc.image_dir = image_dir;
  sc.clock = [] { return std::int64_t{0}; };
  annotate::AnnotationService service(sc);
  annotate::BatchInput batch;
  batch.mode = annotate::TaskMode::label;
  std::int64_t class_count = 0;
  std::map<std::string, torch::Tensor> images;
  for (std::size_t i = 0; i < stored.entries.size(); ++i) {
    const auto& e = stored.entries[i];
    class_count = std::max({class_count, e.y_source + 1, e.y_target.value_or(0) + 1, e.prediction + 1});
    auto image = stored.images.pixels[static_cast<std::int64_t>(i)];
    batch.images.push_back({e.id, encode_png(image)});
    images.emplace(e.id, image);
  }
  clf::ClassifierPtr oracle;
  if (oracle_classifier) {
    oracle = clf::load_classifier(*oracle_classifier);
    class_count = oracle->class_count();
  }
  batch.class_count = std::max<std::int64_t>(class_count, 2);
  service.enqueue_batch(batch);

  std::map<std::string, std::int64_t> truth;
  for (const auto& e : stored.entries) truth[e.id] = e.y_source;
  if (oracle) {
    torch::NoGradGuard no_grad;
    for (auto& [id, label] : truth) label = oracle->predict(images.at(id).unsqueeze(0))[0].item<std::int64_t>();
  }
  std::vector<std::pair<std::string, annotate::WorkerPolicy>> workers;
  for (std::int64_t w = 0; w < sc.quorum; ++w) {
    const auto name = "sim-" + std::to_string(w + 1);
    annotate::WorkerPolicy p;
    if (policy == "ground-truth") {
      p = annotate::ground_truth_worker(truth);
    } else if (policy == "noisy") {
      p = annotate::noisy_worker(truth, flip_probability, batch.class_count, mix_seed(seed, static_cast<std::uint64_t>(w)));
    } else if (policy == "classifier") {
      if (!oracle) throw ValidationError("the classifier policy needs --oracle");
      p = annotate::classifier_worker(oracle, images);
    } else {
      throw ValidationError("unknown worker policy '" + policy + "' (ground-truth, noisy, classifier)");
    }
    workers.emplace_back(name, std::move(p));
  }
  const auto pages = annotate::run_simulated_workers(service, workers);
  const auto stats = service.stats();
  std::printf("%lld pages submitted; %lld of %lld images complete\n", static_cast<long long>(pages),
              static_cast<long long>(stats.complete), static_cast<long long>(stats.items_total));
  return kExitOk;
}

int eval_report(const EvalReportOptions& o) {
  const auto stored = attack::read_results(o.results_dir);
  annotate::ServiceConfig sc;
  sc.log_path = o.annotation_log;
  if (!fs::exists(o.annotation_log)) throw ValidationError("annotation log " + o.annotation_log.string() + " not found");
  annotate::AnnotationService service(sc);
  const auto votes = service.votes();

  std::vector<eval::Attempt> attempts;
  for (const auto& e : stored.entries) attempts.push_back(eval::Attempt::from_manifest(e));
  eval::EvalReport report;
  report.success = eval::success_rate(attempts, votes, {o.include_exhausted});
  report.histogram = eval::agreement_histogram(votes);

  std::vector<eval::AbPick> picks;
  for (const auto& r : service.records()) {
    if (r.mode == eval::RecordMode::ab_pick) picks.push_back({r.image_id, r.label});
  }
  if (!picks.empty()) report.ab_detection = eval::ab_detection_rate(service.ab_key(), picks);

  json run_manifest = json::object();
  if (fs::exists(o.results_dir / "manifest.json")) {
    std::ifstream in(o.results_dir / "manifest.json");
    run_manifest = json::parse(in);
  }
  const auto inputs = run_manifest.value("inputs", json::object());
  std::int64_t class_count = inputs.value("class_count", std::int64_t{0});
  for (const auto& e : stored.entries) class_count = std::max({class_count, e.y_source + 1, e.y_target.value_or(0) + 1});

  std::vector<std::pair<std::string, clf::ClassifierPtr>> loaded;
  for (const auto& [name, path] : o.classifiers) loaded.emplace_back(name, clf::load_classifier(path));
  const auto valid = eval::select_valid(attempts, stored.images.pixels, votes);
  if (!loaded.empty() && !valid.y_source.empty()) {
    std::vector<std::pair<std::string, const clf::Classifier*>> refs;
    for (const auto& [name, f] : loaded) refs.emplace_back(name, f.get());
    report.transfer = eval::transfer_matrix(valid, refs);
  }

  fs::create_directories(o.out);
  write_text(o.out / "report.json", report.to_json().dump(2) + "\n");
  write_text(o.out / "table_per_source.csv", eval::per_source_table_csv({{"attack", report.success}}, class_count));
  write_text(o.out / "table_targeted.csv", eval::targeted_matrix_csv(report.success, class_count));
  if (!report.transfer.empty()) {
    const auto label = inputs.value("noise", false) ? "ours_with_noise" : "ours_without_noise";
    write_text(o.out / "table_transfer.csv", eval::transfer_table_csv({{label, report.transfer}}));
  }
  if (!loaded.empty() && o.test_data_dir) {
    eval::RobustClassifierRow row;
    row.classifier = loaded.front().first;
    row.clean_accuracy = 100.0 * clf::accuracy(*loaded.front().second, load_prepared(*o.test_data_dir, "test"));
    (inputs.value("noise", false) ? row.ours_with_noise : row.ours_without_noise) = report.success.overall.rate();
    row.epsilon_attack = inputs.value("epsilon_attack", 0.0);
    write_text(o.out / "table_robust.csv", eval::robust_table_csv({row}));
  }
  json in{{"results", o.results_dir.string()}, {"annotation_log", input_entry(o.annotation_log)}};
  for (const auto& [name, path] : o.classifiers) in["classifiers"][name] = input_entry(path);
  write_manifest(o.out, "eval report", in, {{"include_exhausted", o.include_exhausted}}, 0);
  std::printf("overall success %.1f%% over %lld attempts\n", report.success.overall.rate(),
              static_cast<long long>(report.success.overall.attempted));
  return kExitOk;
}

int grid_export(const fs::path& results_dir, const fs::path& annotation_log, const std::string& annotation_source,
                std::int64_t scale, const fs::path& out_png) {
  const auto stored = attack::read_results(results_dir);
  if (stored.entries.empty()) throw ValidationError("no attack results in " + results_dir.string());
  std::map<std::string, eval::VoteSummary> votes;
  if (!annotation_log.empty()) {
    annotate::ServiceConfig sc;
    sc.log_path = annotation_log;
    votes = annotate::AnnotationService(sc).votes();
  }
  eval::AnnotationSource source;
  if (annotation_source == "prediction") {
    source = eval::AnnotationSource::prediction;
  } else if (annotation_source == "worker") {
    source = eval::AnnotationSource::worker_label;
  } else {
    throw ValidationError("annotation source must be 'prediction' or 'worker'");
  }
  std::int64_t class_count = 0;
  std::map<std::int64_t, std::int64_t> per_source;
  bool targeted = false;
  for (const auto& e : stored.entries) {
    class_count = std::max({class_count, e.y_source + 1, e.y_target.value_or(0) + 1});
    ++per_source[e.y_source];
    targeted = targeted || e.y_target.has_value();
  }
  eval::GridLayout layout;
  layout.scale = scale;
  layout.rows = class_count;
  if (targeted) {
    layout.cols = class_count;
    layout.skip_diagonal = true;
  } else {
    std::int64_t cols = 10;
    for (std::int64_t s = 0; s < class_count; ++s) cols = std::min(cols, per_source[s]);
    if (cols < 1) throw ValidationError("some source class has no results");
    layout.cols = cols;
  }
  const auto cells = eval::grid_cells_from_results(stored, votes, source, layout);
  const auto png = eval::export_grid(cells, layout);
  if (out_png.has_parent_path()) fs::create_directories(out_png.parent_path());
  write_text(out_png, std::string(png.begin(), png.end()));
  std::printf("wrote %zu cells to %s\n", cells.size(), out_png.string().c_str());
  return kExitOk;
}

int bound_check(const BoundCheckOptions& options, std::ostream& os) {
  const auto bound = robust::prop1_bound(options.instance);
  os << std::fixed << std::setprecision(6) << "bound " << bound << '\n';
  if (options.trials > 0) {
    const auto report =
        robust::monte_carlo_violation_rate(options.instance, options.trials, options.seed, options.workers);
    os << "trials " << report.trials << "\nviolations " << report.violations << "\nviolation_fraction "
       << report.violation_fraction << "\nmean_normalized_worst_case " << report.mean_normalized_worst_case
       << "\nmax_normalized_worst_case " << report.max_normalized_worst_case << '\n';
    if (options.out) {
      fs::create_directories(*options.out);
      write_text(*options.out / "bound_report.json", report.to_json().dump(2) + "\n");
      write_text(*options.out / "bound_summary.csv", report.summary_csv());
    }
  }
  return kExitOk;
}

}  // namespace advgen::pipeline
