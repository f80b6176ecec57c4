#pragma once

#include "advgen/acgan.hpp"
#include "advgen/attack.hpp"
#include "advgen/classifier.hpp"
#include "advgen/data.hpp"
#include "advgen/robustness.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace advgen::pipeline {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitBudgetExhausted = 3;

/// Tracks which keys of a JSON object were read and rejects the rest.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context);

  bool has(const std::string& key) const;
  const nlohmann::json& at(const std::string& key);
  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw_type_error(key, e.what());
    }
  }
  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw_missing(key);
    try {
      return at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw_type_error(key, e.what());
    }
  }
  /// Throws ValidationError naming every unread key.
  void finish() const;

 private:
  [[noreturn]] void throw_missing(const std::string& key) const;
  [[noreturn]] void throw_type_error(const std::string& key, const std::string& detail) const;

  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> used_;
};

/// A reference attack hyperparameter row, or a desk-scale preset.
struct Preset {
  std::string name;
  std::string dataset;
  std::string classifier;
  bool targeted = true;
  bool noise = false;
  attack::AttackConfig config;  ///< y_source / y_target left at defaults
  std::string note;
};

/// The ten reference rows followed by the desk-scale "toy-*" presets.
const std::vector<Preset>& presets();
/// Throws ValidationError for an unknown name.
const Preset& find_preset(std::string_view name);

struct DataSection {
  data::DatasetName name = data::DatasetName::synthetic;
  std::filesystem::path root;  ///< real datasets; defaults to $ADVGEN_DATA_ROOT/<name>
  data::SyntheticOptions synthetic;
};

struct GanSection {
  gan::GanArchitecture arch;
  gan::GanTrainConfig train;
  std::int64_t latent_dim = 16;
};

struct ClassifierSection {
  clf::ClassifierSpec spec;
  clf::TrainConfig train;
};

struct AttackSection {
  std::optional<std::string> preset;
  attack::AttackConfig config;
  bool targeted = true;
  std::int64_t per_cell = 100;  ///< per (source,target) pair, or per source when untargeted
  std::int64_t workers = 1;
};

struct RunConfig {
  DataSection data;
  GanSection gan;
  ClassifierSection classifier;
  AttackSection attack;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  nlohmann::json source = nlohmann::json::object();  ///< the parsed document

  /// Strict parse: unknown keys anywhere raise ValidationError.
  static RunConfig parse(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  std::string hash() const;
};

/// manifest.json: command, inputs, config, config hash, seed and library versions.
/// Contains no timestamps, so reruns produce identical bytes.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& inputs,
                    const nlohmann::json& config, std::uint64_t seed);

std::filesystem::path data_root_for(const DataSection& section);

/// Partition written by data_prepare (`<dir>/<partition>.bin`).
ImageBatch load_prepared(const std::filesystem::path& dir, const std::string& partition);

// Subcommand bodies; each returns an exit code and writes into `out`.
int data_prepare(const RunConfig& config, const std::filesystem::path& out);
/// `resume` continues from a trainer checkpoint instead of a fresh initialization.
int gan_train(const RunConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& out,
              const std::optional<std::filesystem::path>& resume = std::nullopt);
int clf_train(const RunConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& out);
int attack_run(const RunConfig& config, const std::filesystem::path& gan_checkpoint,
               const std::filesystem::path& classifier_checkpoint, const std::filesystem::path& out);
int annotate_simulate(const std::filesystem::path& results_dir, const std::filesystem::path& log_path,
                      const std::filesystem::path& image_dir, const std::string& policy,
                      const std::optional<std::filesystem::path>& oracle_classifier, double flip_probability,
                      std::uint64_t seed);

struct EvalReportOptions {
  std::filesystem::path results_dir;
  std::filesystem::path annotation_log;
  /// The first entry is taken to be the attacked classifier.
  std::vector<std::pair<std::string, std::filesystem::path>> classifiers;
  bool include_exhausted = false;
  /// Prepared data directory; its test partition gives the clean accuracy column.
  std::optional<std::filesystem::path> test_data_dir;
  std::filesystem::path out;
};
int eval_report(const EvalReportOptions& options);
int grid_export(const std::filesystem::path& results_dir, const std::filesystem::path& annotation_log,
                const std::string& annotation_source, std::int64_t scale, const std::filesystem::path& out_png);

struct BoundCheckOptions {
  robust::BoundInstance instance;
  std::int64_t trials = 0;  ///< 0 prints the bound only
  std::uint64_t seed = 0;
  std::int64_t workers = 1;
  std::optional<std::filesystem::path> out;
};
/// Prints the bound (and the Monte Carlo summary when trials > 0) to `os`.
int bound_check(const BoundCheckOptions& options, std::ostream& os);

}  // namespace advgen::pipeline
