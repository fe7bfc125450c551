#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cae/errors.hpp"
#include "cae/experiment.hpp"
#include "cae/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace cae;
namespace ex = cae::experiment;

namespace {

struct ConfigFlags {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Built-in experiment defaults")
        ->check(CLI::IsMember(ex::preset_names()));
    app->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key (key=value), repeatable");
    app->add_option("--seed", seed, "Seed for data, initialization and training");
    app->add_option("--out", out, "Output directory");
    app->add_option("--jobs", jobs, "Parallel sweep cells")->check(CLI::PositiveNumber);
  }

  // Defaults, then preset, then config file, then --set, then shortcut flags.
  ex::KeyValues layer() const {
    ex::KeyValues kv = preset.empty() ? ex::default_values() : ex::preset(preset);
    if (!config.empty()) {
      for (const auto& [k, v] : ex::load_key_values(config)) {
        if (!ex::default_values().count(k)) throw ConfigError(k + ": unknown configuration key");
        kv[k] = v;
      }
    }
    ex::apply_overrides(kv, sets);
    if (seed) {
      const auto s = std::to_string(*seed);
      for (const char* k : {"dataset.seed", "architecture.seed", "training.seed"}) kv[k] = s;
    }
    if (!out.empty()) kv["outputs.dir"] = out;
    if (jobs) kv["sweep.jobs"] = std::to_string(*jobs);
    if (kv["outputs.dir"].empty()) kv["outputs.dir"] = (ex::output_root() / kv["experiment.name"]).string();
    return kv;
  }
};

void write_json(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

diagnostics::DimensionReport report_from_json(const nlohmann::json& doc) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
  };
  auto zero_based = [](const nlohmann::json& a) {
    std::vector<Index> out;
    for (Index i : a.get<std::vector<Index>>()) out.push_back(i - 1);
    return out;
  };
  diagnostics::DimensionReport r;
  try {
    r.inferred_dimension = doc.at("inferred_dimension").get<Index>();
    r.active = zero_based(doc.at("active_components"));
    r.collapsed = zero_based(doc.at("collapsed_components"));
    r.collapse_threshold = doc.at("collapse_threshold").get<double>();
    r.final_grad_norm = vec(doc.at("final_grad_norm"));
    r.latent_mean = vec(doc.at("latent_mean"));
    r.latent_min = vec(doc.at("latent_min"));
    r.latent_max = vec(doc.at("latent_max"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dimension report: ") + e.what(), 0);
  }
  return r;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

int cmd_generate(const ConfigFlags& flags) {
  const auto kv = flags.layer();
  const auto cfg = ex::resolve(kv);
  const auto sets = ex::build_datasets(cfg);
  fs::create_directories(cfg.outputs.dir);
  data::save_csv(sets.train, cfg.outputs.dir / "train.csv");
  write_json(cfg.outputs.dir / "train.meta.json", data::metadata_json(sets.train.metadata));
  if (sets.test.size() > 0) {
    data::save_csv(sets.test, cfg.outputs.dir / "test.csv");
    write_json(cfg.outputs.dir / "test.meta.json", data::metadata_json(sets.test.metadata));
  }
  std::printf("wrote %lld training and %lld test points to %s\n", static_cast<long long>(sets.train.size()),
              static_cast<long long>(sets.test.size()), cfg.outputs.dir.string().c_str());
  return 0;
}

int cmd_train(const ConfigFlags& flags) {
  const auto kv = flags.layer();
  const auto cfg = ex::resolve(kv);
  const auto summary = ex::run(cfg, kv);
  std::printf("run %s: train error %.6g, inferred dimension %lld, stop %s\n", summary.dir.string().c_str(),
              summary.train_error, static_cast<long long>(summary.report.inferred_dimension),
              std::string(training::stop_reason_name(summary.trace.stop_reason)).c_str());
  if (summary.test_error > 0) std::printf("frozen-latent test error %.6g\n", summary.test_error);
  return 0;
}

int cmd_sweep(const ConfigFlags& flags) {
  const auto kv = flags.layer();
  const auto cfg = ex::resolve(kv);
  const auto cells = ex::sweep(cfg, kv);
  std::size_t failed = 0;
  for (const auto& c : cells) failed += c.failed ? 1 : 0;
  std::printf("sweep: %zu cells (%zu failed) written to %s\n", cells.size(), failed,
              (cfg.outputs.dir / "sweep.csv").string().c_str());
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path, double threshold,
                 const std::string& out_path) {
  const auto model = training::load_model(model_path);
  const auto d = data::load_csv(data_path);
  const Vector norms = diagnostics::component_gradient_norms(model, d.points);
  auto report = diagnostics::classify_norms(norms, threshold);
  const Matrix latents = training::encode(model, d.points);
  report.latent_mean = latents.colwise().mean().transpose();
  report.latent_min = latents.colwise().minCoeff().transpose();
  report.latent_max = latents.colwise().maxCoeff().transpose();
  nlohmann::json doc = diagnostics::to_json(report);
  doc["points"] = d.size();
  doc["full_error"] = diagnostics::mean_squared_error(d.points, training::decode(model, latents));
  doc["frozen_error"] = diagnostics::freeze_and_reconstruct(model, d.points, report);
  if (out_path.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    write_json(out_path, doc);
  }
  return 0;
}

int cmd_level_sets(const std::string& run_dir, std::string data_path, Index resolution, Index levels,
                   std::string out_path) {
  const fs::path dir(run_dir);
  const auto model = training::load_model(dir / "model.json");
  const auto report = report_from_json(read_json(dir / "dimension_report.json"));
  if (data_path.empty()) data_path = (dir / "dataset.csv").string();
  const auto d = data::load_csv(data_path);
  const auto curves = ex::level_set_export(model, report, training::encode(model, d.points), resolution, levels);
  if (out_path.empty()) out_path = (dir / "level_sets.csv").string();
  ex::save_level_sets_csv(curves, out_path);
  std::printf("wrote %zu decoded points to %s\n", curves.rows.size(), out_path.c_str());
  return 0;
}

int cmd_gradcheck(const gradcheck::SuiteOptions& options, bool verbose) {
  const auto cases = gradcheck::run_suite(options);
  Index failures = 0;
  double worst = 0.0;
  for (const auto& c : cases) {
    failures += c.result.failures > 0 ? 1 : 0;
    worst = std::max(worst, c.result.max_rel_error);
    if (verbose || c.result.failures > 0) {
      std::printf("%s %s: %lld/%lld mismatched, max rel %.3g\n", c.result.failures ? "FAIL" : "ok",
                  c.description.c_str(), static_cast<long long>(c.result.failures),
                  static_cast<long long>(c.result.parameters), c.result.max_rel_error);
    }
  }
  std::printf("gradcheck: %zu cases, %lld failing, worst relative error %.3g\n", cases.size(),
              static_cast<long long>(failures), worst);
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal autoencoder experiments"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, sweep_flags;
  auto* gen = app.add_subcommand("generate", "Sample a dataset and write train/test CSVs");
  gen_flags.attach(gen);
  auto* train = app.add_subcommand("train", "Run generate, train, diagnose and evaluate");
  train_flags.attach(train);
  auto* sw = app.add_subcommand("sweep", "Robustness grid over ambient dimension, noise level and seed");
  sweep_flags.attach(sw);

  std::string model_path, data_path, eval_out;
  double threshold = 0.05;
  auto* eval = app.add_subcommand("evaluate", "Dimension report and reconstruction errors of a saved model");
  eval->add_option("--model", model_path, "model.json")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--collapse-threshold", threshold, "Relative gradient-norm threshold");
  eval->add_option("--out", eval_out, "Write JSON here instead of stdout");

  std::string run_dir, ls_data, ls_out;
  Index resolution = 50, levels = 7;
  auto* ls = app.add_subcommand("level-sets", "Decode level-set curves of a two-dimensional chart");
  ls->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  ls->add_option("--data", ls_data, "Training CSV (defaults to the run's dataset.csv)");
  ls->add_option("--resolution", resolution, "Points per curve")->check(CLI::PositiveNumber);
  ls->add_option("--levels", levels, "Curves per component")->check(CLI::PositiveNumber);
  ls->add_option("--out", ls_out, "Output CSV");

  gradcheck::SuiteOptions gc_options;
  bool verbose = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradient on random models");
  gc->add_option("--models", gc_options.models, "Number of random models")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_options.seed, "Suite seed");
  gc->add_flag("--verbose", verbose, "Print every case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(gen_flags);
    if (*train) return cmd_train(train_flags);
    if (*sw) return cmd_sweep(sweep_flags);
    if (*eval) return cmd_evaluate(model_path, data_path, threshold, eval_out);
    if (*ls) return cmd_level_sets(run_dir, ls_data, resolution, levels, ls_out);
    if (*gc) return cmd_gradcheck(gc_options, verbose);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == ErrorKind::Numerical ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
