#include "tdvcl/config.hpp"

#include "tdvcl/errors.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace tdvcl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return node_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(raw(key), field(key));
  }

  template <typename T>
  T require(const std::string& key, const std::string& why = "is required") {
    if (!has(key)) throw ConfigError(field(key), why);
    return convert<T>(raw(key), field(key));
  }

  void forbid(const std::string& key, const std::string& why) {
    if (has(key)) throw ConfigError(field(key), why);
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown field");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where, "expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where, "expected a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where, "expected a number");
    } else if constexpr (std::is_unsigned_v<T>) {
      const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
      if (!ok) throw ConfigError(where, "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where, "expected an integer");
    }
    return v.get<T>();
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

Benchmark parse_benchmark(const std::string& name, const std::string& where) {
  if (name == "permuted") return Benchmark::Permuted;
  if (name == "split") return Benchmark::Split;
  if (name == "synthetic") return Benchmark::Synthetic;
  if (name == "oracle") return Benchmark::Oracle;
  throw ConfigError(where, "unknown benchmark '" + name + "' (permuted, split, synthetic, oracle)");
}

HeadMode parse_head(const std::string& name, const std::string& where) {
  if (name == "single") return HeadMode::Single;
  if (name == "multi") return HeadMode::Multi;
  throw ConfigError(where, "expected 'single' or 'multi'");
}

bool uses_data(Benchmark b) { return b == Benchmark::Permuted || b == Benchmark::Split; }

ObjectiveSpec parse_method(ObjectReader r) {
  ObjectiveSpec spec;
  const auto kind_name = r.require<std::string>("kind");
  try {
    spec.kind = parse_objective_kind(kind_name);
  } catch (const ContractError&) {
    throw ConfigError(r.field("kind"), "unknown method '" + kind_name +
                                           "' (OnlineMLE, BatchMLE, VCL, VCLCoreSet, NStepKL, TDLambda)");
  }
  const bool multi_step = spec.kind == ObjectiveKind::NStepKL || spec.kind == ObjectiveKind::TDLambda;
  const std::string name(to_string(spec.kind));
  if (multi_step) {
    spec.n = r.require<int>("n", "is required for " + name);
  } else {
    r.forbid("n", "is only used by NStepKL and TDLambda");
  }
  if (spec.kind == ObjectiveKind::TDLambda) {
    spec.lambda = r.require<double>("lambda", "is required for TDLambda");
  } else {
    r.forbid("lambda", "is only used by TDLambda");
  }
  if (spec.is_variational()) {
    spec.beta = r.require<double>("beta", "is required for " + name);
  } else {
    r.forbid("beta", "is not used by " + name);
    spec.beta = 0.0;
  }
  r.finish();
  return spec;
}

void validate_method(const ObjectiveSpec& m) {
  if (m.n < 1) throw ConfigError("method.n", "must be >= 1");
  if (!(m.lambda >= 0.0 && m.lambda < 1.0)) throw ConfigError("method.lambda", "must be in [0, 1)");
  if (m.is_variational() && !(m.beta > 0.0)) throw ConfigError("method.beta", "must be positive");
}

}  // namespace

std::string_view to_string(Benchmark b) {
  switch (b) {
    case Benchmark::Permuted: return "permuted";
    case Benchmark::Split: return "split";
    case Benchmark::Synthetic: return "synthetic";
    case Benchmark::Oracle: return "oracle";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (tasks < 1) throw ConfigError("tasks", "must be positive");
  validate_method(method);
  if (seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  if (!(prior_variance > 0.0)) throw ConfigError("network.prior_variance", "must be positive");
  if (hidden.empty()) throw ConfigError("network.hidden", "needs at least one hidden layer");
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == 0) throw ConfigError("network.hidden[" + std::to_string(i) + "]", "must be positive");
  }
  train.validate();
  if (uses_data(benchmark) && data.dir.empty()) throw ConfigError("data.dir", "is required for " +
                                                                                  std::string(to_string(benchmark)));
  if (head == HeadMode::Multi && benchmark != Benchmark::Split) {
    throw ConfigError("head", "multi-head is only defined for the split benchmark");
  }
  if (benchmark == Benchmark::Split) {
    if (split_pairs.size() != static_cast<std::size_t>(tasks)) {
      throw ConfigError("split_pairs", "needs one pair per task");
    }
  }
  if (benchmark == Benchmark::Synthetic) {
    if (synthetic.input_dim == 0 || synthetic.train_per_task < 2 || synthetic.test_per_task == 0) {
      throw ConfigError("synthetic", "sizes must be positive (train_per_task >= 2)");
    }
    if (!(synthetic.margin > 0.0)) throw ConfigError("synthetic.margin", "must be positive");
  }
  if (benchmark == Benchmark::Oracle) {
    if (method.kind != ObjectiveKind::VCL && method.kind != ObjectiveKind::NStepKL) {
      throw ConfigError("method.kind", "the oracle benchmark supports VCL and NStepKL");
    }
    if (oracle.dim == 0 || oracle.rows_per_task < oracle.dim) {
      throw ConfigError("oracle.rows_per_task", "must be >= oracle.dim > 0");
    }
    if (!(oracle.prior_variance > 0.0)) throw ConfigError("oracle.prior_variance", "must be positive");
    if (!(oracle.noise_var > 0.0)) throw ConfigError("oracle.noise_var", "must be positive");
    if (!(oracle.noise_scale >= 0.0)) throw ConfigError("oracle.noise_scale", "must be non-negative");
  }
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  ObjectReader root(doc, "");
  c.benchmark = parse_benchmark(root.require<std::string>("benchmark"), "benchmark");
  root.read("tasks", c.tasks);
  if (root.has("head")) c.head = parse_head(ObjectReader::convert<std::string>(root.raw("head"), "head"), "head");

  if (uses_data(c.benchmark)) {
    if (!root.has("data")) throw ConfigError("data", "is required for " + std::string(to_string(c.benchmark)));
    ObjectReader d(root.raw("data"), "data");
    c.data.dir = d.require<std::string>("dir");
    d.read("train_images", c.data.train_images);
    d.read("train_labels", c.data.train_labels);
    d.read("test_images", c.data.test_images);
    d.read("test_labels", c.data.test_labels);
    d.read("train_examples", c.data.train_examples);
    d.read("test_examples", c.data.test_examples);
    d.finish();
  } else {
    root.forbid("data", "is only used by the permuted and split benchmarks");
  }

  if (c.benchmark == Benchmark::Split) {
    if (!root.has("split_pairs")) throw ConfigError("split_pairs", "is required for split");
    const json& pairs = root.raw("split_pairs");
    if (!pairs.is_array()) throw ConfigError("split_pairs", "expected an array of [a, b] pairs");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string where = "split_pairs[" + std::to_string(i) + "]";
      if (!pairs[i].is_array() || pairs[i].size() != 2 || !pairs[i][0].is_number_integer() ||
          !pairs[i][1].is_number_integer()) {
        throw ConfigError(where, "expected [a, b] with integer classes");
      }
      c.split_pairs.emplace_back(pairs[i][0].get<int>(), pairs[i][1].get<int>());
    }
  } else {
    root.forbid("split_pairs", "is only used by the split benchmark");
  }

  if (c.benchmark == Benchmark::Synthetic) {
    if (root.has("synthetic")) {
      ObjectReader s(root.raw("synthetic"), "synthetic");
      s.read("input_dim", c.synthetic.input_dim);
      s.read("train_per_task", c.synthetic.train_per_task);
      s.read("test_per_task", c.synthetic.test_per_task);
      s.read("margin", c.synthetic.margin);
      s.finish();
    }
  } else {
    root.forbid("synthetic", "is only used by the synthetic benchmark");
  }

  if (c.benchmark == Benchmark::Oracle) {
    if (root.has("oracle")) {
      ObjectReader o(root.raw("oracle"), "oracle");
      o.read("dim", c.oracle.dim);
      o.read("rows_per_task", c.oracle.rows_per_task);
      o.read("prior_variance", c.oracle.prior_variance);
      o.read("noise_var", c.oracle.noise_var);
      o.read("noise_scale", c.oracle.noise_scale);
      o.finish();
    }
  } else {
    root.forbid("oracle", "is only used by the oracle benchmark");
  }

  if (!root.has("method")) throw ConfigError("method", "is required");
  c.method = parse_method(ObjectReader(root.raw("method"), "method"));

  if (root.has("network")) {
    ObjectReader n(root.raw("network"), "network");
    if (n.has("hidden")) {
      const json& h = n.raw("hidden");
      if (!h.is_array()) throw ConfigError("network.hidden", "expected an array of layer widths");
      c.hidden.clear();
      for (std::size_t i = 0; i < h.size(); ++i) {
        c.hidden.push_back(ObjectReader::convert<std::size_t>(h[i], "network.hidden[" + std::to_string(i) + "]"));
      }
    }
    n.read("prior_variance", c.prior_variance);
    n.finish();
  }

  if (root.has("train")) {
    ObjectReader t(root.raw("train"), "train");
    t.read("batch_size", c.train.batch_size);
    t.read("max_epochs", c.train.max_epochs);
    t.read("learning_rate", c.train.learning_rate);
    t.read("patience", c.train.patience);
    t.read("train_mc_samples", c.train.train_mc_samples);
    t.read("validation_fraction", c.train.validation_fraction);
    t.read("replay_batch_size", c.train.replay_batch_size);
    t.read("eval_mc_samples", c.train.eval_mc_samples);
    t.read("coreset_epochs", c.train.coreset_epochs);
    t.finish();
  }
  c.method.train_mc_samples = c.train.train_mc_samples;

  if (root.has("replay")) {
    ObjectReader r(root.raw("replay"), "replay");
    r.read("tasks", c.replay_tasks);
    r.read("per_task", c.replay_per_task);
    r.finish();
  }
  if (c.method.kind == ObjectiveKind::VCLCoreSet) {
    root.read("coreset_per_task", c.coreset_per_task);
  } else {
    root.forbid("coreset_per_task", "is only used by VCLCoreSet");
  }

  if (root.has("seeds")) {
    const json& s = root.raw("seeds");
    if (!s.is_array()) throw ConfigError("seeds", "expected an array of non-negative integers");
    c.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      c.seeds.push_back(ObjectReader::convert<std::uint64_t>(s[i], "seeds[" + std::to_string(i) + "]"));
    }
  }
  root.read("output_dir", c.output_dir);
  root.finish();
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json out;
  out["benchmark"] = std::string(to_string(c.benchmark));
  out["tasks"] = c.tasks;
  out["head"] = c.head == HeadMode::Single ? "single" : "multi";
  if (uses_data(c.benchmark)) {
    out["data"] = {{"dir", c.data.dir},
                   {"train_images", c.data.train_images},
                   {"train_labels", c.data.train_labels},
                   {"test_images", c.data.test_images},
                   {"test_labels", c.data.test_labels},
                   {"train_examples", c.data.train_examples},
                   {"test_examples", c.data.test_examples}};
  }
  if (c.benchmark == Benchmark::Split) {
    out["split_pairs"] = json::array();
    for (const auto& [a, b] : c.split_pairs) out["split_pairs"].push_back({a, b});
  }
  if (c.benchmark == Benchmark::Synthetic) {
    out["synthetic"] = {{"input_dim", c.synthetic.input_dim},
                        {"train_per_task", c.synthetic.train_per_task},
                        {"test_per_task", c.synthetic.test_per_task},
                        {"margin", c.synthetic.margin}};
  }
  if (c.benchmark == Benchmark::Oracle) {
    out["oracle"] = {{"dim", c.oracle.dim},
                     {"rows_per_task", c.oracle.rows_per_task},
                     {"prior_variance", c.oracle.prior_variance},
                     {"noise_var", c.oracle.noise_var},
                     {"noise_scale", c.oracle.noise_scale}};
  }
  json method{{"kind", std::string(to_string(c.method.kind))}};
  if (c.method.kind == ObjectiveKind::NStepKL || c.method.kind == ObjectiveKind::TDLambda) method["n"] = c.method.n;
  if (c.method.kind == ObjectiveKind::TDLambda) method["lambda"] = c.method.lambda;
  if (c.method.is_variational()) method["beta"] = c.method.beta;
  out["method"] = method;
  out["network"] = {{"hidden", c.hidden}, {"prior_variance", c.prior_variance}};
  out["train"] = {{"batch_size", c.train.batch_size},
                  {"max_epochs", c.train.max_epochs},
                  {"learning_rate", c.train.learning_rate},
                  {"patience", c.train.patience},
                  {"train_mc_samples", c.train.train_mc_samples},
                  {"validation_fraction", c.train.validation_fraction},
                  {"replay_batch_size", c.train.replay_batch_size},
                  {"eval_mc_samples", c.train.eval_mc_samples},
                  {"coreset_epochs", c.train.coreset_epochs}};
  out["replay"] = {{"tasks", c.replay_tasks}, {"per_task", c.replay_per_task}};
  if (c.method.kind == ObjectiveKind::VCLCoreSet) out["coreset_per_task"] = c.coreset_per_task;
  out["seeds"] = c.seeds;
  out["output_dir"] = c.output_dir;
  return out;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

void resolve_data_paths(ExperimentConfig& config, const std::string& data_root, const std::string& config_dir) {
  if (!uses_data(config.benchmark)) return;
  fs::path dir(config.data.dir);
  if (dir.is_relative()) dir = fs::path(data_root.empty() ? config_dir : data_root) / dir;
  dir = dir.lexically_normal();
  if (!fs::is_directory(dir)) throw ConfigError("data.dir", "directory '" + dir.string() + "' does not exist");
  const std::pair<const char*, const std::string*> files[] = {{"data.train_images", &config.data.train_images},
                                                              {"data.train_labels", &config.data.train_labels},
                                                              {"data.test_images", &config.data.test_images},
                                                              {"data.test_labels", &config.data.test_labels}};
  for (const auto& [field, name] : files) {
    if (!fs::is_regular_file(dir / *name)) {
      throw ConfigError(field, "file '" + (dir / *name).string() + "' does not exist");
    }
  }
  config.data.dir = dir.string();
}

}  // namespace tdvcl
