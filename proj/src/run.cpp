#include "xaits/run.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include "xaits/parallel.hpp"
#include "xaits/random.hpp"
#include "xaits/serialization.hpp"
#include "xaits/text.hpp"

namespace xaits {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object of the config with unknown-key rejection.
class Fields {
 public:
  Fields(const json& doc, std::string where, std::initializer_list<std::string_view> allowed)
      : doc_(doc), where_(std::move(where)) {
    if (!doc_.is_object()) fail(ErrorKind::kConfig, where_ + " must be an object");
    for (const auto& item : doc_.items()) {
      if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
        fail(ErrorKind::kConfig, where_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

  bool has(const std::string& key) const { return doc_.contains(key); }
  const json& at(const std::string& key) const { return doc_.at(key); }

  std::optional<std::string> text(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_string()) bad(key, "a string");
    return at(key).get<std::string>();
  }
  std::optional<std::uint64_t> count(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const auto& v = at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      bad(key, "a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  std::optional<double> real(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_number()) bad(key, "a number");
    return at(key).get<double>();
  }
  std::optional<bool> flag(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_boolean()) bad(key, "a boolean");
    return at(key).get<bool>();
  }

 private:
  [[noreturn]] void bad(const std::string& key, const std::string& expected) const {
    fail(ErrorKind::kConfig, where_ + "." + key + " must be " + expected);
  }

  const json& doc_;
  std::string where_;
};

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
}

DatasetSpec parse_dataset(const json& doc, const fs::path& base) {
  DatasetSpec spec;
  Fields f(doc, "dataset",
           {"source", "n_samples", "series_len", "seed", "train", "test", "ground_truth", "path", "window",
            "test_fraction", "znormalize"});
  const auto source = f.text("source").value_or("synthetic");
  if (source == "synthetic") {
    spec.source = DatasetSource::kSynthetic;
  } else if (source == "ucr") {
    spec.source = DatasetSource::kUcr;
  } else if (source == "series") {
    spec.source = DatasetSource::kSeries;
  } else {
    fail(ErrorKind::kConfig, "dataset.source must be synthetic, ucr or series, got '" + source + "'");
  }
  if (auto v = f.count("n_samples")) spec.n_samples = *v;
  if (auto v = f.count("series_len")) spec.series_len = *v;
  if (auto v = f.count("seed")) spec.seed = *v;
  if (auto v = f.text("train")) spec.train_path = resolve(base, *v);
  if (auto v = f.text("test")) spec.test_path = resolve(base, *v);
  if (auto v = f.text("ground_truth")) spec.ground_truth_path = resolve(base, *v);
  if (auto v = f.text("path")) spec.series_path = resolve(base, *v);
  if (auto v = f.count("window")) spec.window = *v;
  if (auto v = f.real("test_fraction")) spec.test_fraction = *v;
  if (auto v = f.flag("znormalize")) spec.znormalize = *v;
  return spec;
}

ModelSpec parse_model(const json& doc, const fs::path& base) {
  ModelSpec spec;
  if (!doc.is_object()) fail(ErrorKind::kConfig, "model must be an object");
  const std::string source = doc.contains("source") && doc.at("source").is_string()
                                 ? doc.at("source").get<std::string>()
                                 : "builtin";
  if (source == "builtin") {
    Fields f(doc, "model",
             {"source", "kind", "hidden", "activation", "epochs", "batch_size", "learning_rate", "seed", "ensemble"});
    json train = doc;
    train.erase("source");
    spec.source = ModelSource::kBuiltin;
    spec.train = train_config_from_json(train);
    spec.seed_explicit = f.has("seed");
  } else if (source == "adapter") {
    Fields f(doc, "model", {"source", "command", "timeout_s", "max_batch"});
    spec.source = ModelSource::kAdapter;
    if (!f.has("command") || !f.at("command").is_array()) {
      fail(ErrorKind::kConfig, "model.command must be a list of strings");
    }
    for (const auto& arg : f.at("command")) {
      if (!arg.is_string()) fail(ErrorKind::kConfig, "model.command must be a list of strings");
      spec.adapter.command.push_back(arg.get<std::string>());
    }
    if (auto v = f.real("timeout_s")) spec.adapter.timeout_s = *v;
    if (auto v = f.count("max_batch")) spec.adapter.max_batch = *v;
  } else if (source == "file") {
    Fields f(doc, "model", {"source", "files"});
    spec.source = ModelSource::kFile;
    if (!f.has("files") || !f.at("files").is_array()) fail(ErrorKind::kConfig, "model.files must be a list of paths");
    for (const auto& p : f.at("files")) {
      if (!p.is_string()) fail(ErrorKind::kConfig, "model.files must be a list of paths");
      spec.files.push_back(resolve(base, p.get<std::string>()));
    }
  } else {
    fail(ErrorKind::kConfig, "model.source must be builtin, adapter or file, got '" + source + "'");
  }
  return spec;
}

BaselineKind parse_baseline(const std::string& text) {
  if (text == "zero") return BaselineKind::kZero;
  if (text == "mean") return BaselineKind::kSampleMean;
  fail(ErrorKind::kConfig, "baseline must be zero or mean, got '" + text + "'");
}

IgScheme parse_ig_scheme(const std::string& text) {
  if (text == "right_riemann") return IgScheme::kRightRiemann;
  if (text == "trapezoid") return IgScheme::kTrapezoid;
  fail(ErrorKind::kConfig, "ig_scheme must be right_riemann or trapezoid, got '" + text + "'");
}

Replacement parse_replacement(const std::string& text) {
  if (text == "zero") return Replacement::kZero;
  if (text == "mean") return Replacement::kSampleMean;
  fail(ErrorKind::kConfig, "occlusion_replacement must be zero or mean, got '" + text + "'");
}

MethodConfig parse_method(const json& doc, const fs::path& base) {
  if (doc.is_string()) {
    const auto id = parse_method_id(doc.get<std::string>());
    if (id == MethodId::kExternal) fail(ErrorKind::kConfig, "external methods need an object with a path");
    return MethodConfig::of(id);
  }
  Fields f(doc, "method",
           {"id", "label", "ig_steps", "ig_scheme", "baseline", "smoothgrad_samples", "sigma_fraction", "occlusion_window",
            "occlusion_replacement", "lime_segments", "lime_samples", "lime_kernel_width", "lime_ridge",
            "permutations", "path"});
  const auto id = f.text("id");
  if (!id) fail(ErrorKind::kConfig, "method entry without 'id'");
  MethodConfig m = MethodConfig::of(parse_method_id(*id));
  if (auto v = f.text("label")) m.label = *v;
  if (auto v = f.count("ig_steps")) m.ig_steps = *v;
  if (auto v = f.text("ig_scheme")) m.ig_scheme = parse_ig_scheme(*v);
  if (auto v = f.text("baseline")) m.baseline = parse_baseline(*v);
  if (auto v = f.count("smoothgrad_samples")) m.smoothgrad_samples = *v;
  if (auto v = f.real("sigma_fraction")) m.sigma_fraction = *v;
  if (auto v = f.count("occlusion_window")) m.occlusion_window = *v;
  if (auto v = f.text("occlusion_replacement")) m.occlusion_replacement = parse_replacement(*v);
  if (auto v = f.count("lime_segments")) m.lime_segments = *v;
  if (auto v = f.count("lime_samples")) m.lime_samples = *v;
  if (auto v = f.real("lime_kernel_width")) m.lime_kernel_width = *v;
  if (auto v = f.real("lime_ridge")) m.lime_ridge = *v;
  if (auto v = f.count("permutations")) m.permutations = *v;
  if (auto v = f.text("path")) m.external_path = resolve(base, *v);
  if (m.id == MethodId::kExternal && !m.label.empty() && m.label.rfind("external:", 0) != 0) {
    m.label = "external:" + m.label;
  }
  return m;
}

StrategyConfig parse_strategy(const json& doc) {
  StrategyConfig s;
  if (doc.is_string()) {
    s.kind = parse_strategy_kind(doc.get<std::string>());
    return s;
  }
  Fields f(doc, "strategy", {"kind", "fraction", "threshold"});
  const auto kind = f.text("kind");
  if (!kind) fail(ErrorKind::kConfig, "strategy entry without 'kind'");
  s.kind = parse_strategy_kind(*kind);
  if (auto v = f.real("fraction")) s.fraction = *v;
  if (auto v = f.real("threshold")) s.threshold = *v;
  return s;
}

void parse_verification(const json& doc, std::vector<VerificationSpec>& out) {
  if (doc.is_string()) {
    const auto text = doc.get<std::string>();
    if (text == "all") {
      for (auto kind : all_verification_kinds()) out.push_back({kind, std::nullopt});
    } else {
      out.push_back({parse_verification_kind(text), std::nullopt});
    }
    return;
  }
  Fields f(doc, "verification", {"kind", "radius"});
  const auto kind = f.text("kind");
  if (!kind) fail(ErrorKind::kConfig, "verification entry without 'kind'");
  VerificationSpec spec{parse_verification_kind(*kind), std::nullopt};
  if (auto v = f.count("radius")) spec.radius = *v;
  out.push_back(spec);
}

const json& required_list(const json& doc, const std::string& key) {
  if (!doc.contains(key)) fail(ErrorKind::kConfig, "missing '" + key + "' list");
  const json& list = doc.at(key);
  if (!list.is_array()) fail(ErrorKind::kConfig, "'" + key + "' must be a list");
  return list;
}

bool plain_label(const std::string& label) {
  return !label.empty() && std::none_of(label.begin(), label.end(), [](unsigned char c) {
    return c == ',' || c == '"' || std::isspace(c) || std::iscntrl(c);
  });
}

std::string_view to_string(DatasetSource source) {
  switch (source) {
    case DatasetSource::kSynthetic: return "synthetic";
    case DatasetSource::kUcr: return "ucr";
    case DatasetSource::kSeries: return "series";
  }
  return "synthetic";
}

Task task_of(DatasetSource source) {
  return source == DatasetSource::kSeries ? Task::kRegression : Task::kClassification;
}

std::string_view to_string(BaselineKind kind) { return kind == BaselineKind::kZero ? "zero" : "mean"; }
std::string_view to_string(Replacement r) { return r == Replacement::kZero ? "zero" : "mean"; }

json method_to_json(const MethodConfig& m) {
  json j = {{"id", to_string(m.id)}, {"label", m.effective_label()}};
  switch (m.id) {
    case MethodId::kIntegratedGradients:
      j["ig_steps"] = m.ig_steps;
      j["ig_scheme"] = m.ig_scheme == IgScheme::kRightRiemann ? "right_riemann" : "trapezoid";
      j["baseline"] = to_string(m.baseline);
      break;
    case MethodId::kSmoothGrad:
      j["smoothgrad_samples"] = m.smoothgrad_samples;
      j["sigma_fraction"] = m.sigma_fraction;
      break;
    case MethodId::kOcclusion:
      j["occlusion_window"] = m.occlusion_window;
      j["occlusion_replacement"] = to_string(m.occlusion_replacement);
      break;
    case MethodId::kLime:
      j["lime_segments"] = m.lime_segments;
      j["lime_samples"] = m.lime_samples;
      j["lime_kernel_width"] = m.lime_kernel_width;
      j["lime_ridge"] = m.lime_ridge;
      break;
    case MethodId::kShapleySampling:
      j["permutations"] = m.permutations;
      j["baseline"] = to_string(m.baseline);
      break;
    case MethodId::kExternal: j["path"] = m.external_path.generic_string(); break;
    default: break;
  }
  return j;
}

json strategy_to_json(const StrategyConfig& s) {
  json j = {{"kind", s.label()}};
  if (s.kind == StrategyKind::kTopK) j["fraction"] = s.fraction;
  if (s.kind == StrategyKind::kFixedThreshold) j["threshold"] = s.threshold;
  return j;
}

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    if (!keep) c = '_';
  }
  return out;
}

std::string fixed(double value, int precision = 4) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, precision);
  return std::string(buf, res.ptr);
}

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  void operator()(const std::string& stage, const std::string& message) const {
    if (out_ != nullptr) *out_ << "[" << stage << "] " << message << "\n" << std::flush;
  }

 private:
  std::ostream* out_;
};

// Runs `body`, converting library errors into stage-tagged errors.
template <typename F>
auto staged(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const std::exception& e) {
    throw StageError(stage, Error(ErrorKind::kIo, e.what()));
  }
}

struct ModelSet {
  std::vector<std::unique_ptr<Predictor>> owned;
  std::vector<const BuiltinModel*> builtin;  // empty for adapter models
  std::vector<TrainingLog> logs;
  json info;

  std::vector<const Predictor*> pointers() const {
    std::vector<const Predictor*> out;
    for (const auto& m : owned) out.push_back(m.get());
    return out;
  }
};

TrainConfig effective_train_config(const RunConfig& config) {
  TrainConfig train = config.model.train;
  if (!config.model.seed_explicit) train.seed = config.seed;
  return train;
}

std::uint64_t effective_dataset_seed(const RunConfig& config) {
  return config.dataset.seed.value_or(config.seed);
}

void check_model_shape(const Predictor& model, const Dataset& test, const std::string& what) {
  if (model.task() != test.task()) {
    fail(ErrorKind::kConfig, what + " is a " + std::string(to_string(model.task())) + " model but the dataset is " +
                                 std::string(to_string(test.task())));
  }
  if (model.input_len() != test.series_len()) {
    fail(ErrorKind::kConfig, what + " expects input_len " + std::to_string(model.input_len()) +
                                 ", dataset series_len is " + std::to_string(test.series_len()));
  }
  const std::size_t outputs = test.task() == Task::kClassification ? test.n_classes() : 1;
  if (model.n_outputs() != outputs) {
    fail(ErrorKind::kConfig, what + " has " + std::to_string(model.n_outputs()) + " outputs, dataset needs " +
                                 std::to_string(outputs));
  }
}

ModelSet prepare_models(const RunConfig& config, const LoadedData& data, const Logger& log) {
  ModelSet set;
  switch (config.model.source) {
    case ModelSource::kBuiltin: {
      const TrainConfig train = effective_train_config(config);
      log("train", std::to_string(train.ensemble_size) + " x " + std::string(to_string(train.kind)) + ", " +
                       std::to_string(train.epochs) + " epochs, seed " + std::to_string(train.seed));
      auto trained = train_ensemble(data.train, train);
      for (auto& t : trained) {
        set.logs.push_back(t.log);
        auto model = std::make_unique<BuiltinModel>(std::move(t.model));
        set.builtin.push_back(model.get());
        set.owned.push_back(std::move(model));
      }
      json seeds = json::array();
      for (std::size_t k = 0; k < set.owned.size(); ++k) seeds.push_back(train.seed + k);
      set.info = {{"source", "builtin"}, {"seeds", seeds}};
      break;
    }
    case ModelSource::kFile: {
      for (const auto& path : config.model.files) {
        auto model = std::make_unique<BuiltinModel>(load_model(path));
        check_model_shape(*model, data.test, path.string());
        set.builtin.push_back(model.get());
        set.owned.push_back(std::move(model));
      }
      set.info = {{"source", "file"}, {"count", set.owned.size()}};
      break;
    }
    case ModelSource::kAdapter: {
      auto endpoint = std::make_unique<AdapterEndpoint>(config.model.adapter);
      const auto descriptor = endpoint->handshake();
      validate_descriptor(descriptor, data.test);
      log("train", "attached adapter (protocol " + std::to_string(descriptor.protocol) +
                       (descriptor.gradient ? ", gradients" : ", predictions only") + ")");
      set.owned.push_back(std::make_unique<AdapterPredictor>(std::move(endpoint), data.test.task()));
      set.info = {{"source", "adapter"},
                  {"protocol", descriptor.protocol},
                  {"n_outputs", descriptor.n_outputs},
                  {"input_len", descriptor.input_len},
                  {"capabilities", descriptor.gradient ? json{"predict", "gradient"} : json{"predict"}}};
      break;
    }
  }
  for (std::size_t k = 0; k < set.owned.size(); ++k) {
    check_model_shape(*set.owned[k], data.test, "model " + std::to_string(k));
  }
  return set;
}

std::vector<AttributionMap> explain(const Predictor& model, const Dataset& test, const MethodConfig& method,
                                    const LoadedData& data, std::uint64_t seed, std::size_t jobs) {
  if (method.id == MethodId::kExternal) {
    auto maps = load_external_attributions(method.external_path, test, method.label);
    return maps;
  }
  std::vector<AttributionMap> maps(test.size());
  parallel_for(test.size(), jobs, [&](std::size_t i) {
    const auto& sample = test[i];
    const IndexSet* truth = nullptr;
    if (sample.id < data.truth_by_id.size() && data.truth_by_id[sample.id]) truth = &*data.truth_by_id[sample.id];
    maps[i] = compute_attribution(model, sample, method, seed, truth);
  });
  return maps;
}

json record_to_json(const ScoreRecord& r) {
  return {{"method", r.provenance.method},
          {"strategy", r.provenance.strategy},
          {"verification", r.provenance.verification},
          {"variant", r.provenance.variant},
          {"metric", to_string(r.metric)},
          {"value", r.value},
          {"delta", r.delta},
          {"model", r.model},
          {"perturbed_points", r.perturbed_points}};
}

json ranking_to_json(std::span<const RankEntry> ranking) {
  json out = json::array();
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const auto& e = ranking[i];
    json cells = json::array();
    for (const auto& c : e.cells) {
      cells.push_back({{"strategy", c.strategy},
                       {"verification", c.verification},
                       {"delta_attribution", c.delta_attribution},
                       {"delta_random", c.delta_random},
                       {"difference", c.difference}});
    }
    out.push_back({{"rank", i + 1},
                   {"method", e.method},
                   {"degradation", e.degradation},
                   {"mean_delta_attribution", e.mean_delta_attribution},
                   {"cells", cells}});
  }
  return out;
}

json assumption_to_json(const AssumptionTable& table) {
  json cells = json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"method", c.method},
                     {"strategy", c.strategy},
                     {"verification", c.verification},
                     {"baseline", c.baseline},
                     {"random", c.random},
                     {"attribution", c.attribution},
                     {"baseline_vs_random", c.baseline_vs_random},
                     {"random_vs_attribution", c.random_vs_attribution},
                     {"status", to_string(c.status)}});
  }
  return {{"holds", table.holds},
          {"violated", table.violated},
          {"ties", table.ties},
          {"degenerate", table.degenerate},
          {"cells", cells}};
}

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (methods.empty()) fail(ErrorKind::kConfig, "at least one method is required");
  if (strategies.empty()) fail(ErrorKind::kConfig, "at least one strategy is required");
  if (verifications.empty()) fail(ErrorKind::kConfig, "at least one verification is required");

  std::set<std::string> labels;
  for (const auto& m : methods) {
    m.validate();
    const auto label = m.effective_label();
    if (!plain_label(label)) fail(ErrorKind::kConfig, "method label '" + label + "' contains separators");
    if (label == "baseline") fail(ErrorKind::kConfig, "'baseline' is reserved");
    if (!labels.insert(label).second) fail(ErrorKind::kConfig, "duplicate method label '" + label + "'");
    if (m.id == MethodId::kOracle && task_of(dataset.source) == Task::kRegression) {
      fail(ErrorKind::kConfig, "oracle needs ground truth, which regression datasets do not carry");
    }
    if (m.id == MethodId::kOracle && dataset.source == DatasetSource::kUcr && dataset.ground_truth_path.empty()) {
      fail(ErrorKind::kConfig, "oracle on a ucr dataset needs dataset.ground_truth");
    }
  }
  std::set<StrategyKind> kinds;
  for (const auto& s : strategies) {
    s.validate();
    if (!kinds.insert(s.kind).second) fail(ErrorKind::kConfig, "duplicate strategy '" + s.label() + "'");
  }
  std::set<std::pair<VerificationKind, std::optional<std::size_t>>> seen;
  for (const auto& v : verifications) {
    if (!is_interval(v.kind) && v.radius) {
      fail(ErrorKind::kConfig, std::string(to_string(v.kind)) + " is a point verification and takes no radius");
    }
    if (!seen.insert({v.kind, v.radius}).second) {
      fail(ErrorKind::kConfig, "duplicate verification '" + std::string(to_string(v.kind)) + "'");
    }
  }

  const auto& d = dataset;
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) fail(ErrorKind::kConfig, "test_fraction must lie in (0, 1)");
  switch (d.source) {
    case DatasetSource::kSynthetic:
      if (d.n_samples < 2) fail(ErrorKind::kConfig, "synthetic n_samples must be >= 2");
      if (d.series_len < 8) fail(ErrorKind::kConfig, "synthetic series_len must be >= 8");
      break;
    case DatasetSource::kUcr:
      if (d.train_path.empty()) fail(ErrorKind::kConfig, "ucr datasets need dataset.train");
      break;
    case DatasetSource::kSeries:
      if (d.series_path.empty()) fail(ErrorKind::kConfig, "series datasets need dataset.path");
      if (d.window == 0) fail(ErrorKind::kConfig, "series datasets need dataset.window >= 1");
      break;
  }

  switch (model.source) {
    case ModelSource::kBuiltin: model.train.validate(); break;
    case ModelSource::kAdapter:
      if (model.adapter.command.empty()) fail(ErrorKind::kConfig, "adapter model needs a command");
      if (!(model.adapter.timeout_s > 0.0)) fail(ErrorKind::kConfig, "adapter timeout_s must be positive");
      if (model.adapter.max_batch == 0) fail(ErrorKind::kConfig, "adapter max_batch must be positive");
      break;
    case ModelSource::kFile:
      if (model.files.empty()) fail(ErrorKind::kConfig, "file model needs at least one file");
      break;
  }
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  RunConfig config;
  config.base_dir = base_dir;
  try {
    Fields f(doc, "config",
             {"seed", "output_dir", "task", "dataset", "model", "methods", "strategies", "verifications"});
    if (auto v = f.count("seed")) config.seed = *v;
    if (auto v = f.text("output_dir")) config.output_dir = resolve(base_dir, *v);
    if (!f.has("dataset")) fail(ErrorKind::kConfig, "missing 'dataset'");
    config.dataset = parse_dataset(f.at("dataset"), base_dir);
    if (auto task = f.text("task")) {
      const auto expected = to_string(task_of(config.dataset.source));
      if (*task != expected) {
        fail(ErrorKind::kConfig, "task '" + *task + "' does not match a " +
                                     std::string(to_string(config.dataset.source)) + " dataset (" +
                                     std::string(expected) + ")");
      }
    }
    if (f.has("model")) config.model = parse_model(f.at("model"), base_dir);

    for (const auto& m : required_list(doc, "methods")) config.methods.push_back(parse_method(m, base_dir));
    for (const auto& s : required_list(doc, "strategies")) config.strategies.push_back(parse_strategy(s));
    for (const auto& v : required_list(doc, "verifications")) parse_verification(v, config.verifications);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  const std::string text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return parse_run_config(doc, fs::absolute(path).parent_path());
}

json run_config_to_json(const RunConfig& config) {
  const auto& d = config.dataset;
  json dataset = {{"source", to_string(d.source)},
                  {"test_fraction", d.test_fraction},
                  {"znormalize", d.znormalize}};
  switch (d.source) {
    case DatasetSource::kSynthetic:
      dataset["n_samples"] = d.n_samples;
      dataset["series_len"] = d.series_len;
      dataset["seed"] = effective_dataset_seed(config);
      break;
    case DatasetSource::kUcr:
      dataset["train"] = d.train_path.generic_string();
      if (!d.test_path.empty()) dataset["test"] = d.test_path.generic_string();
      if (!d.ground_truth_path.empty()) dataset["ground_truth"] = d.ground_truth_path.generic_string();
      break;
    case DatasetSource::kSeries:
      dataset["path"] = d.series_path.generic_string();
      dataset["window"] = d.window;
      break;
  }

  json model;
  switch (config.model.source) {
    case ModelSource::kBuiltin:
      model = train_config_to_json(effective_train_config(config));
      model["source"] = "builtin";
      break;
    case ModelSource::kAdapter:
      model = {{"source", "adapter"},
               {"command", config.model.adapter.command},
               {"timeout_s", config.model.adapter.timeout_s},
               {"max_batch", config.model.adapter.max_batch}};
      break;
    case ModelSource::kFile: {
      json files = json::array();
      for (const auto& p : config.model.files) files.push_back(p.generic_string());
      model = {{"source", "file"}, {"files", files}};
      break;
    }
  }

  json methods = json::array();
  for (const auto& m : config.methods) methods.push_back(method_to_json(m));
  json strategies = json::array();
  for (const auto& s : config.strategies) strategies.push_back(strategy_to_json(s));
  json verifications = json::array();
  for (const auto& v : config.verifications) {
    json j = {{"kind", to_string(v.kind)}};
    if (v.radius) j["radius"] = *v.radius;
    verifications.push_back(j);
  }
  return {{"seed", config.seed},
          {"task", to_string(task_of(d.source))},
          {"dataset", dataset},
          {"model", model},
          {"methods", methods},
          {"strategies", strategies},
          {"verifications", verifications}};
}

std::vector<VerificationMethod> resolve_verifications(std::span<const VerificationSpec> specs,
                                                      std::size_t series_len) {
  std::vector<VerificationMethod> out;
  for (const auto& spec : specs) {
    if (!is_interval(spec.kind)) {
      if (spec.radius) fail(ErrorKind::kConfig, std::string(to_string(spec.kind)) + " takes no radius");
      out.push_back(VerificationMethod::point(spec.kind));
    } else {
      out.push_back(VerificationMethod::interval(spec.kind, spec.radius.value_or(default_interval_radius(series_len))));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = i + 1; j < out.size(); ++j) {
      if (out[i].label() == out[j].label()) fail(ErrorKind::kConfig, "duplicate verification " + out[i].label());
    }
  }
  return out;
}

void write_ground_truth(std::span<const IndexSet> truth, const fs::path& path) {
  std::string out = "sample_id,indices\n";
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out += std::to_string(i) + ",";
    for (std::size_t k = 0; k < truth[i].size(); ++k) {
      if (k > 0) out += ' ';
      out += std::to_string(truth[i][k]);
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<std::optional<IndexSet>> load_ground_truth(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<std::optional<IndexSet>> out;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || (line_no == 1 && line.rfind("sample_id", 0) == 0)) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) fail(ErrorKind::kParse, where + ": expected 'sample_id,indices'");
    const auto id = parse_double(line.substr(0, comma));
    if (!id || *id < 0 || *id != std::floor(*id)) fail(ErrorKind::kParse, where + ": bad sample id");
    IndexSet indices;
    for (auto token : split(line.substr(comma + 1), ' ')) {
      if (trim(token).empty()) continue;
      const auto v = parse_double(token);
      if (!v || *v < 0 || *v != std::floor(*v)) fail(ErrorKind::kParse, where + ": bad index");
      indices.push_back(static_cast<std::size_t>(*v));
    }
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    const auto sid = static_cast<std::size_t>(*id);
    if (sid >= out.size()) out.resize(sid + 1);
    if (out[sid]) fail(ErrorKind::kFormat, where + ": duplicate sample id");
    out[sid] = std::move(indices);
  }
  return out;
}

LoadedData load_data(const RunConfig& config) {
  const auto& d = config.dataset;
  auto maybe_normalize = [&](Dataset ds) { return d.znormalize ? znormalize(ds) : ds; };
  auto split_of = [&](const Dataset& full) {
    const auto split = train_test_split(full, d.test_fraction, config.seed);
    return std::pair{full.subset(split.train, full.name() + ":train"), full.subset(split.test, full.name() + ":test")};
  };

  switch (d.source) {
    case DatasetSource::kSynthetic: {
      auto spike = generate_spike_dataset(d.n_samples, d.series_len, effective_dataset_seed(config));
      Dataset full = maybe_normalize(std::move(spike.dataset));
      auto [train, test] = split_of(full);
      std::vector<std::optional<IndexSet>> truth(spike.ground_truth.begin(), spike.ground_truth.end());
      return {std::move(train), std::move(test), std::move(truth), full.fingerprint()};
    }
    case DatasetSource::kUcr: {
      std::vector<std::optional<IndexSet>> truth;
      std::uint64_t truth_hash = 0;
      if (!d.ground_truth_path.empty()) {
        truth = load_ground_truth(d.ground_truth_path);
        truth_hash = fnv1a(read_file(d.ground_truth_path));
      }
      if (d.test_path.empty()) {
        Dataset full = maybe_normalize(load_ucr_tsv(d.train_path));
        auto [train, test] = split_of(full);
        return {std::move(train), std::move(test), std::move(truth), fnv1a(hex64(full.fingerprint()) + hex64(truth_hash))};
      }
      auto [train_raw, test_raw] = load_ucr_train_test(d.train_path, d.test_path);
      Dataset train = maybe_normalize(std::move(train_raw));
      Dataset test = maybe_normalize(std::move(test_raw));
      std::uint64_t fp = fnv1a(hex64(train.fingerprint()) + hex64(test.fingerprint()) + hex64(truth_hash));
      return {std::move(train), std::move(test), std::move(truth), fp};
    }
    case DatasetSource::kSeries: {
      const Series series = load_series(d.series_path);
      Dataset full = make_windowed_regression(series, d.window, d.series_path.stem().string());
      full = maybe_normalize(std::move(full));
      auto [train, test] = split_of(full);
      return {std::move(train), std::move(test), {}, full.fingerprint()};
    }
  }
  fail(ErrorKind::kConfig, "unknown dataset source");
}

std::string scores_csv(std::span<const ScoreRecord> records) {
  std::string out = "method,strategy,verification,variant,metric,value,delta\n";
  for (const auto& r : records) {
    out += r.provenance.method + "," + r.provenance.strategy + "," + r.provenance.verification + "," +
           r.provenance.variant + "," + std::string(to_string(r.metric)) + "," + format_double(r.value) + "," +
           format_double(r.delta) + "\n";
  }
  return out;
}

json report_json(const RunResult& result) {
  json records = json::array();
  for (const auto& r : result.records) records.push_back(record_to_json(r));
  json baseline = nullptr;
  for (const auto& r : result.records) {
    if (r.provenance.is_baseline()) baseline = {{"metric", to_string(r.metric)}, {"value", r.value}};
  }
  return {{"format", "xaits-report"},
          {"version", 1},
          {"manifest", result.manifest},
          {"baseline", baseline},
          {"records", records},
          {"assumption", assumption_to_json(result.assumption)},
          {"ranking", ranking_to_json(result.ranking)},
          {"skipped_methods", result.skipped_methods}};
}

RunResult run(const RunConfig& config, const RunOptions& options) {
  const Logger log(options.log);
  staged("config", [&] { config.validate(); });
  const json echo = run_config_to_json(config);

  LoadedData data = staged("load", [&] { return load_data(config); });
  const auto verifications =
      staged("config", [&] { return resolve_verifications(config.verifications, data.test.series_len()); });
  log("load", data.test.name() + ": " + std::to_string(data.train.size()) + " train / " +
                  std::to_string(data.test.size()) + " test, series_len " + std::to_string(data.test.series_len()));

  json seeds = {{"master", config.seed},
                {"derivation", "splitmix64 chain over (master, stage, key...) with fnv1a-64 string keys"}};
  if (config.dataset.source == DatasetSource::kSynthetic) seeds["dataset"] = effective_dataset_seed(config);
  if (config.model.source == ModelSource::kBuiltin) seeds["model"] = effective_train_config(config).seed;

  json manifest = {{"format", "xaits-run"},
                   {"version", 1},
                   {"config", echo},
                   {"seeds", seeds},
                   {"dataset",
                    {{"name", data.test.name()},
                     {"task", to_string(data.test.task())},
                     {"n_classes", data.test.n_classes()},
                     {"series_len", data.test.series_len()},
                     {"n_train", data.train.size()},
                     {"n_test", data.test.size()},
                     {"fingerprint", hex64(data.fingerprint)}}},
                   {"schemes",
                    {{"normalization", "abs_then_minmax"},
                     {"inverse", "reflection_lo_plus_hi"},
                     {"assumption_random_variant", "rand_matched"}}}};
  const std::string identity = manifest.dump();
  const fs::path run_dir = config.output_dir / ("run-" + hex64(fnv1a(identity)).substr(0, 12));

  staged("write", [&] {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) fail(ErrorKind::kIo, "cannot create " + run_dir.string() + ": " + ec.message());
    fs::remove(run_dir / "error.json", ec);
  });

  RunResult result;
  result.run_dir = run_dir;
  manifest["status"] = "incomplete";
  staged("write", [&] { write_json(run_dir / "manifest.json", manifest); });
  log("write", "run directory " + run_dir.string());

  try {
    ModelSet models = staged("train", [&] { return prepare_models(config, data, log); });
    manifest["model"] = models.info;
    staged("write", [&] {
      fs::create_directories(run_dir / "models");
      for (std::size_t k = 0; k < models.builtin.size(); ++k) {
        save_model(*models.builtin[k], run_dir / "models" / ("model_" + std::to_string(k) + ".json"));
      }
      for (std::size_t k = 0; k < models.logs.size(); ++k) {
        std::string csv = "epoch,loss\n";
        for (std::size_t e = 0; e < models.logs[k].epoch_loss.size(); ++e) {
          csv += std::to_string(e + 1) + "," + format_double(models.logs[k].epoch_loss[e]) + "\n";
        }
        write_file(run_dir / "models" / ("training_" + std::to_string(k) + ".csv"), csv);
      }
    });
    const auto predictors = models.pointers();
    const bool multi = predictors.size() > 1;

    std::vector<std::vector<ScoreRecord>> per_model(predictors.size());
    json methods_run = json::array();
    for (const auto& method : config.methods) {
      const std::string label = method.effective_label();
      if (needs_gradient(method.id) && !predictors.front()->has_input_gradient()) {
        log("attribute", "skipping " + label + ": model does not provide input gradients");
        result.skipped_methods.push_back(label);
        continue;
      }
      for (std::size_t k = 0; k < predictors.size(); ++k) {
        const std::string suffix = multi ? ".model" + std::to_string(k) : "";
        const std::string stem = sanitize(label) + suffix;
        log("attribute", label + (multi ? " (model " + std::to_string(k) + ")" : ""));
        auto raw =
            staged("attribute", [&] { return explain(*predictors[k], data.test, method, data, config.seed, options.jobs); });
        for (auto& m : raw) m.method = label;
        std::vector<AttributionMap> normalized(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) normalized[i] = normalize(raw[i]);
        staged("write", [&] { write_attributions(raw, run_dir / "attributions" / (stem + ".csv")); });

        staged("select", [&] {
          std::vector<SelectionResult> all;
          for (const auto& s : config.strategies) {
            auto sel = select_all(normalized, s);
            all.insert(all.end(), sel.begin(), sel.end());
          }
          write_selections(all, run_dir / "selections" / (stem + ".csv"));
        });

        const MethodMaps maps{label, std::move(normalized)};
        auto variants = staged("perturb", [&] {
          return build_variants(data.test, std::span(&maps, 1), config.strategies, verifications, config.seed,
                                options.jobs);
        });
        auto records =
            staged("score", [&] { return score_variants(*predictors[k], data.test, variants, options.jobs); });
        auto& sink = per_model[k];
        if (sink.empty()) {
          sink = std::move(records);
        } else {
          sink.insert(sink.end(), std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
        }
      }
      methods_run.push_back(label);
    }
    if (methods_run.empty()) {
      throw StageError("attribute", Error(ErrorKind::kCapability, "no configured method can run on this model"));
    }
    manifest["methods_run"] = methods_run;
    manifest["skipped_methods"] = result.skipped_methods;

    result.records = staged("score", [&] { return ensemble_mean(per_model); });
    log("score", std::to_string(result.records.size()) + " records");
    result.assumption = staged("rank", [&] { return check_assumption(result.records); });
    result.ranking = staged("rank", [&] { return rank_methods(result.records); });

    manifest["status"] = "complete";
    result.manifest = manifest;
    staged("write", [&] {
      write_file(run_dir / "scores.csv", scores_csv(result.records));
      write_json(run_dir / "report.json", report_json(result));
      write_json(run_dir / "manifest.json", manifest);
    });
    log("rank", "winner " + result.ranking.front().method + " (D=" + fixed(result.ranking.front().degradation) + ")");
  } catch (const StageError& e) {
    manifest["status"] = "incomplete";
    const json error = {{"stage", e.stage()}, {"kind", to_string(e.kind())}, {"message", e.what()}};
    manifest["error"] = error;
    try {
      write_json(run_dir / "manifest.json", manifest);
      write_json(run_dir / "error.json", error);
    } catch (const std::exception&) {
      // The original failure is more informative than a secondary write error.
    }
    throw;
  }
  return result;
}

fs::path attribute(const RunConfig& config, const std::string& method_id, const fs::path& out_file,
                   const RunOptions& options) {
  const Logger log(options.log);
  MethodConfig method;
  const auto found = std::find_if(config.methods.begin(), config.methods.end(), [&](const MethodConfig& m) {
    return m.effective_label() == method_id;
  });
  if (found != config.methods.end()) {
    method = *found;
  } else {
    method = MethodConfig::of(staged("config", [&] { return parse_method_id(method_id); }));
  }
  if (method.id == MethodId::kExternal) {
    throw StageError("config", Error(ErrorKind::kConfig, "external maps are imported, not computed"));
  }
  staged("config", [&] { method.validate(); });
  LoadedData data = staged("load", [&] { return load_data(config); });
  ModelSet models = staged("train", [&] { return prepare_models(config, data, log); });
  // Ensembles export the maps of their first member.
  const Predictor& model = *models.owned.front();
  if (needs_gradient(method.id) && !model.has_input_gradient()) {
    throw StageError("attribute", Error(ErrorKind::kCapability,
                                        method.effective_label() + " needs input gradients, which the model lacks"));
  }
  auto maps = staged("attribute", [&] { return explain(model, data.test, method, data, config.seed, options.jobs); });
  staged("write", [&] { write_attributions(maps, out_file); });
  log("attribute", std::to_string(maps.size()) + " maps written to " + out_file.string());
  return out_file;
}

namespace {

struct LoadedReport {
  fs::path dir;
  json manifest;
  std::optional<json> report;
};

LoadedReport load_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, dir.string() + ": not a run directory");
  LoadedReport r{dir, read_json(dir / "manifest.json"), std::nullopt};
  if (!r.manifest.is_object() || r.manifest.value("format", "") != "xaits-run") {
    fail(ErrorKind::kFormat, (dir / "manifest.json").string() + ": not a run manifest");
  }
  if (fs::exists(dir / "report.json")) r.report = read_json(dir / "report.json");
  return r;
}

std::vector<RankEntry> ranking_from_json(const json& ranking) {
  std::vector<RankEntry> out;
  for (const auto& e : ranking) {
    RankEntry entry;
    entry.method = e.at("method").get<std::string>();
    entry.degradation = e.at("degradation").get<double>();
    entry.mean_delta_attribution = e.at("mean_delta_attribution").get<double>();
    for (const auto& c : e.at("cells")) {
      entry.cells.push_back({c.at("strategy").get<std::string>(), c.at("verification").get<std::string>(),
                             c.at("delta_attribution").get<double>(), c.at("delta_random").get<double>(),
                             c.at("difference").get<double>()});
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::string pad(std::string text, std::size_t width) {
  if (text.size() < width) text.append(width - text.size(), ' ');
  return text;
}

void print_one(const LoadedReport& r, std::ostream& out) {
  const auto& m = r.manifest;
  if (m.value("status", "") != "complete") {
    out << "WARNING: incomplete run";
    if (m.contains("error")) {
      out << " (stage " << m["error"].value("stage", "?") << ": " << m["error"].value("message", "") << ")";
    }
    out << "\n";
  }
  out << "run " << r.dir.string() << "\n";
  const auto& d = m.at("dataset");
  out << "dataset " << d.value("name", "?") << " (" << d.value("task", "?") << ", "
      << d.value("n_train", 0) << " train / " << d.value("n_test", 0) << " test, series_len "
      << d.value("series_len", 0) << ", fingerprint " << d.value("fingerprint", "?") << ")\n";
  if (!r.report) {
    out << "no results\n";
    return;
  }
  const auto& report = *r.report;
  if (report.at("baseline").is_object()) {
    out << "baseline " << report["baseline"].value("metric", "?") << " "
        << fixed(report["baseline"].value("value", 0.0)) << "\n";
  }

  const auto ranking = ranking_from_json(report.at("ranking"));
  std::vector<std::string> columns;
  for (const auto& e : ranking) {
    for (const auto& c : e.cells) {
      if (std::find(columns.begin(), columns.end(), c.verification) == columns.end()) columns.push_back(c.verification);
    }
  }
  std::size_t name_width = 8;
  for (const auto& e : ranking) name_width = std::max(name_width, e.method.size() + 2);
  out << "\nmean(delta_attribution - delta_random) by verification\n";
  out << pad("method", name_width);
  for (const auto& c : columns) out << pad(c, std::max<std::size_t>(c.size() + 2, 10));
  out << "\n";
  for (const auto& e : ranking) {
    out << pad(e.method, name_width);
    for (const auto& col : columns) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& c : e.cells) {
        if (c.verification == col) {
          sum += c.difference;
          ++n;
        }
      }
      out << pad(n == 0 ? "-" : fixed(sum / static_cast<double>(n)), std::max<std::size_t>(col.size() + 2, 10));
    }
    out << "\n";
  }

  const auto& a = report.at("assumption");
  out << "\nassumption: " << a.value("holds", 0) << " hold, " << a.value("violated", 0) << " violated, "
      << a.value("ties", 0) << " ties, " << a.value("degenerate", 0) << " degenerate (of " << a.at("cells").size()
      << " cells)\n";
  for (const auto& c : a.at("cells")) {
    const auto status = c.value("status", "");
    if (status == "holds") continue;
    out << "  " << status << ": " << c.value("method", "") << " / " << c.value("strategy", "") << " / "
        << c.value("verification", "") << " (baseline " << fixed(c.value("baseline", 0.0)) << ", random "
        << fixed(c.value("random", 0.0)) << ", attribution " << fixed(c.value("attribution", 0.0)) << ")\n";
  }
  if (report.contains("skipped_methods") && !report["skipped_methods"].empty()) {
    out << "skipped (needs gradients): ";
    for (const auto& s : report["skipped_methods"]) out << s.get<std::string>() << " ";
    out << "\n";
  }

  out << "\nranking\n";
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    out << "  " << (i + 1) << ". " << pad(ranking[i].method, name_width) << "D=" << fixed(ranking[i].degradation)
        << "  mean delta " << fixed(ranking[i].mean_delta_attribution) << "\n";
  }
}

}  // namespace

void print_report(std::span<const fs::path> run_dirs, std::ostream& out) {
  if (run_dirs.empty()) fail(ErrorKind::kArgument, "no run directories given");
  std::vector<LoadedReport> reports;
  for (const auto& dir : run_dirs) {
    try {
      reports.push_back(load_report(dir));
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, dir.string() + ": " + e.what());
    }
  }
  std::vector<std::vector<RankEntry>> rankings;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (i > 0) out << "\n";
    try {
      print_one(reports[i], out);
      if (reports[i].report) rankings.push_back(ranking_from_json(reports[i].report->at("ranking")));
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, reports[i].dir.string() + ": corrupt report: " + e.what());
    }
  }
  if (reports.size() > 1) {
    out << "\narchive ranking over " << rankings.size() << " datasets (unweighted mean of D)\n";
    if (rankings.size() < reports.size()) out << "WARNING: incomplete runs excluded\n";
    if (!rankings.empty()) {
      const auto overall = aggregate_rankings(rankings);
      for (std::size_t i = 0; i < overall.size(); ++i) {
        out << "  " << (i + 1) << ". " << overall[i].method << "  D=" << fixed(overall[i].degradation) << "\n";
      }
    }
  }
}

}  // namespace xaits
