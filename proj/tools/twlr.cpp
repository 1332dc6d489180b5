// Command-line entry point: generate | train | run | evaluate | report | all.
#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "twlr/pipeline.hpp"

namespace {

using twlr::ojson;

void print_error(const std::string& command, const std::string& kind, const std::string& message,
                 const std::vector<std::string>& problems = {}, const std::string& path = {}) {
  ojson e = {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}};
  if (!problems.empty()) e["problems"] = problems;
  if (!path.empty()) e["path"] = path;
  std::cerr << e.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Severity regression for synthetic fundus images"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  app.add_option("--config", config_path, "Run config (section.key = value lines)");
  app.add_option("--output", output, "Output directory (overrides paths.output_dir)");
  app.add_option("--seed", seed, "Seed (overrides the config seed)");
  app.add_option("--workers", workers, "Worker threads for run (overrides loop.workers)")->check(CLI::PositiveNumber);

  const std::vector<std::string> names = {"generate", "train", "run", "evaluate", "report", "all"};
  for (const auto& n : names) {
    auto* sub = app.add_subcommand(n, n == "all" ? "Every stage in order" : "Pipeline stage: " + n);
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("", "usage", e.what());
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  twlr::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = twlr::load_config(config_path);
    if (!output.empty()) cfg.output_dir = output;
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    twlr::validate_config(cfg);
  } catch (const twlr::ConfigError& e) {
    print_error(command, "config", "invalid configuration", e.problems());
    return 2;
  }

  using Stage = ojson (*)(const twlr::RunConfig&);
  std::vector<std::pair<std::string, Stage>> stages;
  auto add = [&](const std::string& n, Stage s) {
    if (command == n || command == "all") stages.emplace_back(n, s);
  };
  add("generate", twlr::cmd_generate);
  add("train", twlr::cmd_train);
  add("run", twlr::cmd_run);
  add("evaluate", twlr::cmd_evaluate);
  add("report", twlr::cmd_report);

  for (const auto& [name, stage] : stages) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      ojson summary = stage(cfg);
      summary["status"] = "ok";
      summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << summary.dump() << std::endl;
    } catch (const twlr::MissingArtifact& e) {
      print_error(name, "missing_artifact", e.what(), {}, e.path());
      return 3;
    } catch (const twlr::TrainingDivergence& e) {
      print_error(name, "training_divergence", e.what());
      return 4;
    } catch (const twlr::InvalidInput& e) {
      print_error(name, "invalid_input", e.what());
      return 5;
    } catch (const std::exception& e) {
      print_error(name, "failure", e.what());
      return 1;
    }
  }
  return 0;
}
