#include "tdvcl/checks.hpp"
#include "tdvcl/config.hpp"
#include "tdvcl/errors.hpp"
#include "tdvcl/experiment.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

int run_command(const std::string& config_path, const std::string& out_override,
                std::optional<std::uint64_t> seed_override) {
  using namespace tdvcl;
  ExperimentConfig config;
  try {
    config = load_config(config_path);
    if (seed_override) config.seeds = {*seed_override};
    if (!out_override.empty()) config.output_dir = out_override;
    const char* root = std::getenv("TDVCL_DATA_ROOT");
    const auto config_dir = std::filesystem::absolute(config_path).parent_path().string();
    resolve_data_paths(config, root ? root : "", config_dir);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  }

  try {
    std::cerr << "benchmark " << to_string(config.benchmark) << ", method " << to_string(config.method.kind)
              << ", " << config.seeds.size() << " seed(s) -> " << config.output_dir << '\n';
    const ExperimentResult result = run_experiment(config, config.output_dir, &std::cerr);
    std::cout << result.summary;
    for (const auto& f : result.files) std::cerr << "wrote " << f << '\n';
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}

int check_command(const std::string& suite) {
  const tdvcl::CheckReport report = tdvcl::run_check_suite(suite);
  for (const auto& r : report.results) {
    std::cerr << (r.passed ? "PASS " : "FAIL ") << r.name << "  value=" << r.value << " bound=" << r.bound
              << "  " << r.detail << '\n';
  }
  std::cout << report.to_json().dump(2) << '\n';
  return report.passed() ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational continual learning with TD(lambda) objectives"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  auto* seed_opt = run->add_option("--seed-override", seed, "Run only this seed");

  std::string suite;
  auto* check = app.add_subcommand("check", "Run an invariant suite and print a JSON summary");
  check->add_option("suite", suite, "Suite name")->required()->check(CLI::IsMember(tdvcl::check_suite_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (*run) {
    return run_command(config_path, out_dir, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
  }
  try {
    return check_command(suite);
  } catch (const std::exception& e) {
    std::cerr << "check " << suite << " aborted: " << e.what() << '\n';
    return kFailure;
  }
}
