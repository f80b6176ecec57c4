#include "advgen/annotation_server.hpp"
#include "advgen/error.hpp"
#include "advgen/pipeline.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
namespace pl = advgen::pipeline;
using nlohmann::json;

namespace {

json read_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw advgen::ValidationError("cannot read config " + path);
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw advgen::ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
}

advgen::annotate::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unrestricted adversarial example workbench"};
  app.require_subcommand(1);

  std::string config_path;
  fs::path data_dir, out_dir;
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "JSON run configuration"); };
  std::function<int()> action;

  // data prepare
  auto* data = app.add_subcommand("data", "Dataset preparation")->require_subcommand(1);
  auto* prepare = data->add_subcommand("prepare", "Load or synthesize a dataset into a prepared directory");
  add_config(prepare);
  prepare->add_option("--out", out_dir, "Output directory")->required();
  prepare->callback([&] {
    action = [&] { return pl::data_prepare(pl::RunConfig::parse(read_config_json(config_path)), out_dir); };
  });

  // gan train
  std::optional<fs::path> resume;
  auto* gan = app.add_subcommand("gan", "Conditional generator")->require_subcommand(1);
  auto* gan_train = gan->add_subcommand("train", "Train the AC-GAN");
  add_config(gan_train);
  gan_train->add_option("--data", data_dir, "Prepared data directory")->required();
  gan_train->add_option("--out", out_dir, "Output directory")->required();
  gan_train->add_option("--resume", resume, "Trainer checkpoint to continue from");
  gan_train->callback([&] {
    action = [&] {
      return pl::gan_train(pl::RunConfig::parse(read_config_json(config_path)), data_dir, out_dir, resume);
    };
  });

  // clf train
  auto* clf = app.add_subcommand("clf", "Classifiers")->require_subcommand(1);
  auto* clf_train = clf->add_subcommand("train", "Train a classifier");
  add_config(clf_train);
  clf_train->add_option("--data", data_dir, "Prepared data directory")->required();
  clf_train->add_option("--out", out_dir, "Output directory")->required();
  clf_train->callback([&] {
    action = [&] { return pl::clf_train(pl::RunConfig::parse(read_config_json(config_path)), data_dir, out_dir); };
  });

  // attack run
  std::string preset;
  fs::path gan_ckpt, clf_ckpt;
  std::optional<std::int64_t> workers, per_cell;
  bool dry_run = false;
  bool list_presets = false;
  auto* attack = app.add_subcommand("attack", "Latent-space attack")->require_subcommand(1);
  auto* attack_run = attack->add_subcommand("run", "Search for unrestricted adversarial examples");
  add_config(attack_run);
  attack_run->add_option("--preset", preset, "Named hyperparameter preset");
  attack_run->add_option("--gan", gan_ckpt, "Generator checkpoint");
  attack_run->add_option("--classifier", clf_ckpt, "Classifier checkpoint");
  attack_run->add_option("--out", out_dir, "Output directory");
  attack_run->add_option("--workers", workers, "Parallel attack workers")->check(CLI::PositiveNumber);
  attack_run->add_option("--per-cell", per_cell, "Attacks per (source, target) cell")->check(CLI::PositiveNumber);
  attack_run->add_flag("--dry-run", dry_run, "Print the resolved configuration and exit");
  attack_run->add_flag("--list-presets", list_presets, "Print every preset and exit");
  attack_run->callback([&] {
    action = [&] {
      if (list_presets) {
        for (const auto& p : pl::presets()) {
          std::cout << p.name << ' ' << p.config.to_json().dump() << '\n';
        }
        return pl::kExitOk;
      }
      auto j = read_config_json(config_path);
      if (!preset.empty()) j["attack"]["preset"] = preset;
      if (workers) j["attack"]["workers"] = *workers;
      if (per_cell) j["attack"]["per_cell"] = *per_cell;
      const auto config = pl::RunConfig::parse(j);
      if (dry_run) {
        json resolved = config.attack.config.to_json();
        resolved["targeted"] = config.attack.targeted;
        resolved["per_cell"] = config.attack.per_cell;
        resolved["workers"] = config.attack.workers;
        if (config.attack.preset) resolved["preset"] = *config.attack.preset;
        std::cout << resolved.dump(2) << '\n';
        return pl::kExitOk;
      }
      if (gan_ckpt.empty() || clf_ckpt.empty() || out_dir.empty()) {
        throw advgen::ValidationError("attack run needs --gan, --classifier and --out");
      }
      return pl::attack_run(config, gan_ckpt, clf_ckpt, out_dir);
    };
  });

  // eval report
  pl::EvalReportOptions eval_options;
  std::vector<std::string> classifier_specs;
  std::optional<fs::path> test_data;
  auto* evaluation = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
  auto* report = evaluation->add_subcommand("report", "Success rates, transfer and detection tables");
  report->add_option("--results", eval_options.results_dir, "Attack results directory")->required();
  report->add_option("--log", eval_options.annotation_log, "Annotation event log")->required();
  report->add_option("--classifier", classifier_specs, "name=checkpoint; the first is the attacked model");
  report->add_flag("--include-exhausted", eval_options.include_exhausted, "Count budget-exhausted attempts");
  report->add_option("--test-data", test_data, "Prepared data directory for clean accuracy");
  report->add_option("--out", eval_options.out, "Output directory")->required();
  report->callback([&] {
    action = [&] {
      for (const auto& spec : classifier_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw advgen::ValidationError("--classifier expects name=checkpoint, got '" + spec + "'");
        }
        eval_options.classifiers.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      }
      eval_options.test_data_dir = test_data;
      return pl::eval_report(eval_options);
    };
  });

  // bound check
  pl::BoundCheckOptions bound;
  std::string law = "uniform";
  std::optional<fs::path> bound_out;
  auto* bound_cmd = app.add_subcommand("bound", "Random linear map bound")->require_subcommand(1);
  auto* check = bound_cmd->add_subcommand("check", "Evaluate the bound, optionally against Monte Carlo trials");
  check->add_option("--n", bound.instance.n, "Output dimension")->required();
  check->add_option("--m", bound.instance.m, "Input dimension")->required();
  check->add_option("--eps", bound.instance.epsilon, "Input perturbation radius")->required();
  check->add_option("--K", bound.instance.entry_bound, "Entry bound")->required();
  check->add_option("--delta", bound.instance.delta, "Failure probability")->required();
  check->add_option("--law", law, "Entry law: uniform, rademacher or zero");
  check->add_option("--trials", bound.trials, "Monte Carlo trials (0 = bound only)");
  check->add_option("--seed", bound.seed, "Monte Carlo seed");
  check->add_option("--workers", bound.workers, "Monte Carlo threads")->check(CLI::PositiveNumber);
  check->add_option("--out", bound_out, "Directory for the JSON and CSV reports");
  check->callback([&] {
    action = [&] {
      bound.instance.law = advgen::robust::parse_matrix_law(law);
      bound.out = bound_out;
      return pl::bound_check(bound, std::cout);
    };
  });

  // annotate serve / simulate
  advgen::annotate::ServiceConfig service_config;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> static_dir;
  fs::path results_dir, log_path, image_dir;
  std::string policy = "ground-truth";
  std::optional<fs::path> oracle;
  double flip = 0.0;
  std::uint64_t seed = 0;
  auto* annotate = app.add_subcommand("annotate", "Annotation service")->require_subcommand(1);
  auto* serve = annotate->add_subcommand("serve", "Serve the annotation HTTP API");
  serve->add_option("--log", service_config.log_path, "Event log (created if missing)")->required();
  serve->add_option("--image-dir", service_config.image_dir, "PNG store");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--static", static_dir, "Static assets for the browser client");
  serve->add_option("--quorum", service_config.quorum, "Votes per image")->check(CLI::PositiveNumber);
  serve->add_option("--page-size", service_config.page_size, "Images per page")->check(CLI::PositiveNumber);
  serve->add_option("--lease-seconds", service_config.lease_seconds, "Release pages older than this (0 = never)");
  serve->callback([&] {
    action = [&] {
      advgen::annotate::AnnotationService service(service_config);
      advgen::annotate::HttpServer server(service, static_dir);
      const int bound_port = server.bind(host, port);
      std::printf("listening on %s:%d\n", host.c_str(), bound_port);
      std::fflush(stdout);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.serve();
      g_server = nullptr;
      return pl::kExitOk;
    };
  });
  auto* simulate = annotate->add_subcommand("simulate", "Label attack results with scripted workers");
  simulate->add_option("--results", results_dir, "Attack results directory")->required();
  simulate->add_option("--log", log_path, "Event log")->required();
  simulate->add_option("--image-dir", image_dir, "PNG store");
  simulate->add_option("--policy", policy, "ground-truth, noisy or classifier");
  simulate->add_option("--oracle", oracle, "Classifier checkpoint used as the labeling oracle");
  simulate->add_option("--flip", flip, "Label flip probability for the noisy policy")->check(CLI::Range(0.0, 1.0));
  simulate->add_option("--seed", seed, "Worker seed");
  simulate->callback([&] {
    action = [&] { return pl::annotate_simulate(results_dir, log_path, image_dir, policy, oracle, flip, seed); };
  });

  // grid export
  std::string source = "prediction";
  std::int64_t scale = 4;
  fs::path png_out;
  auto* grid = app.add_subcommand("grid", "Figures")->require_subcommand(1);
  auto* grid_export = grid->add_subcommand("export", "Annotated grid of adversarial examples");
  grid_export->add_option("--results", results_dir, "Attack results directory")->required();
  grid_export->add_option("--log", log_path, "Event log for worker labels");
  grid_export->add_option("--source", source, "Annotation under each image: prediction or worker");
  grid_export->add_option("--scale", scale, "Pixel scale")->check(CLI::PositiveNumber);
  grid_export->add_option("--out", png_out, "Output PNG")->required();
  grid_export->callback([&] {
    action = [&] { return pl::grid_export(results_dir, log_path, source, scale, png_out); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pl::kExitValidation;
  }
  try {
    return action ? action() : pl::kExitOk;
  } catch (const advgen::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return pl::kExitValidation;
  } catch (const advgen::MissingFilesError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return pl::kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
