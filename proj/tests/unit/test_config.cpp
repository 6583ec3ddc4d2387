#include "doctest.h"

#include "tdvcl/checks.hpp"
#include "tdvcl/config.hpp"
#include "tdvcl/errors.hpp"
#include "tdvcl/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace tdvcl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(TDVCL_SOURCE_DIR) / "configs";

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string error_field(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

json synthetic_doc() {
  return json{{"benchmark", "synthetic"}, {"tasks", 2}, {"method", {{"kind", "VCL"}, {"beta", 0.01}}}};
}

// Every key of `sub` appears in `full` with the same value.
bool contained_in(const json& sub, const json& full) {
  if (!sub.is_object()) return sub == full;
  for (const auto& [k, v] : sub.items()) {
    if (!full.contains(k) || !contained_in(v, full.at(k))) return false;
  }
  return true;
}

struct TempDir {
  fs::path path = fs::temp_directory_path() / ("tdvcl-config-" + std::to_string(::getpid()));
  TempDir() { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("bundled configs parse and round-trip") {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(kConfigs)) {
    CAPTURE(entry.path().string());
    const json doc = read_json(entry.path());
    const ExperimentConfig c = parse_config(doc);
    const json back = to_json(c);
    CHECK(contained_in(doc, back));
    CHECK(to_json(parse_config(back)) == back);
    ++seen;
  }
  CHECK(seen >= 6);
}

TEST_CASE("permuted configs carry the published hyperparameters") {
  const auto td = load_config((kConfigs / "permuted_tdlambda.json").string());
  CHECK(td.method.kind == ObjectiveKind::TDLambda);
  CHECK(td.method.n == 8);
  CHECK(td.method.lambda == 0.5);
  CHECK(td.method.beta == 1e-3);
  const auto ns = load_config((kConfigs / "permuted_nstep.json").string());
  CHECK(ns.method.n == 5);
  CHECK(ns.method.beta == 5e-3);
  for (const auto* c : {&td, &ns}) {
    CHECK(c->train.batch_size == 256);
    CHECK(c->train.learning_rate == 1e-3);
    CHECK(c->prior_variance == 1e-5);
    CHECK(c->hidden == std::vector<std::size_t>{100, 100});
    CHECK(c->replay_tasks == 2);
    CHECK(c->replay_per_task == 200);
    CHECK(c->train.patience == 5);
  }
}

TEST_CASE("config validation names the field") {
  json doc = synthetic_doc();
  doc["method"] = {{"kind", "TDLambda"}, {"n", 3}, {"beta", 0.01}};
  CHECK(error_field(doc) == "method.lambda");
  doc["method"] = {{"kind", "NStepKL"}, {"beta", 0.01}};
  CHECK(error_field(doc) == "method.n");
  doc["method"] = {{"kind", "VCL"}};
  CHECK(error_field(doc) == "method.beta");
  doc["method"] = {{"kind", "VCL"}, {"beta", 0.0}};
  CHECK(error_field(doc) == "method.beta");
  doc["method"] = {{"kind", "VCL"}, {"beta", 0.1}, {"lambda", 0.5}};
  CHECK(error_field(doc) == "method.lambda");
  doc["method"] = {{"kind", "vcl"}, {"beta", 0.1}};
  CHECK(error_field(doc) == "method.kind");

  doc = synthetic_doc();
  doc["train"] = {{"batch_size", -3}};
  CHECK(error_field(doc) == "train.batch_size");
  doc["train"] = {{"validation_fraction", 0.9}};
  CHECK(error_field(doc) == "train.validation_fraction");
  doc["train"] = {{"learning_rte", 0.1}};
  CHECK(error_field(doc) == "train.learning_rte");
  doc = synthetic_doc();
  doc["network"] = {{"hidden", json::array({10, "x"})}};
  CHECK(error_field(doc) == "network.hidden[1]");
  doc = synthetic_doc();
  doc["data"] = {{"dir", "x"}};
  CHECK(error_field(doc) == "data");
  doc = synthetic_doc();
  doc["head"] = "multi";
  CHECK(error_field(doc) == "head");
  doc = synthetic_doc();
  doc.erase("benchmark");
  CHECK(error_field(doc) == "benchmark");

  json split = {{"benchmark", "split"}, {"tasks", 2}, {"data", {{"dir", "d"}}}, {"split_pairs", {{0, 1}}},
                {"method", {{"kind", "OnlineMLE"}}}};
  CHECK(error_field(split) == "split_pairs");
}

TEST_CASE("data paths resolve against the root and must exist") {
  TempDir tmp;
  const fs::path data = tmp.path / "digits";
  fs::create_directories(data);
  json doc = {{"benchmark", "permuted"}, {"tasks", 2}, {"data", {{"dir", "digits"}}},
              {"method", {{"kind", "OnlineMLE"}}}};
  ExperimentConfig c = parse_config(doc);
  try {
    resolve_data_paths(c, tmp.path.string(), "/nonexistent");
    FAIL("expected a missing-file error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "data.train_images");
  }
  for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                        "t10k-labels-idx1-ubyte"}) {
    std::ofstream(data / f) << "x";
  }
  ExperimentConfig ok = parse_config(doc);
  resolve_data_paths(ok, "", tmp.path.string());
  CHECK(fs::path(ok.data.dir) == data);
  ExperimentConfig missing = parse_config(doc);
  try {
    resolve_data_paths(missing, (tmp.path / "nowhere").string(), "");
    FAIL("expected a missing-directory error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "data.dir");
  }
}

TEST_CASE("smoke experiment writes reports and stamps the config") {
  TempDir tmp;
  ExperimentConfig c = load_config((kConfigs / "smoke.json").string());
  const auto result = run_experiment(c, tmp.path.string());
  REQUIRE(result.matrices.size() == c.seeds.size());
  for (const char* f : {"config.json", "accuracy.csv", "aggregate.json", "average_accuracy.svg",
                        "task_accuracy.svg", "VCL-seed0.jsonl", "VCL-seed1.jsonl"}) {
    CHECK(fs::exists(tmp.path / f));
  }
  CHECK(to_json(parse_config(read_json(tmp.path / "config.json"))) == to_json(c));
  CHECK(result.summary.find("VCL") != std::string::npos);

  // Same config, same numbers.
  const auto again = run_experiment(c, (tmp.path / "again").string());
  CHECK(again.matrices == result.matrices);
}

TEST_CASE("oracle experiment writes KL trajectories") {
  TempDir tmp;
  ExperimentConfig c = load_config((kConfigs / "oracle_nstep.json").string());
  c.seeds = {1, 2};
  const auto result = run_experiment(c, tmp.path.string());
  CHECK(result.kl_rows.size() == 2 * static_cast<std::size_t>(c.tasks));
  CHECK(fs::exists(tmp.path / "kl_to_truth.csv"));
  for (const auto& r : result.kl_rows) CHECK(r.kl > 0.0);
}

TEST_CASE("check suites") {
  for (const auto& name : check_suite_names()) {
    if (name == "propositions") continue;  // runs in the acceptance binary
    const CheckReport report = run_check_suite(name);
    CAPTURE(name);
    CHECK(report.passed());
    CHECK(report.to_json()["checks"].size() == report.results.size());
  }
  CHECK_THROWS_AS(run_check_suite("nope"), ContractError);
}
