// Command-line entry point: run, report, attribute, synth.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xaits/dataset.hpp"
#include "xaits/error.hpp"
#include "xaits/run.hpp"
#include "xaits/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SynthSpec {
  std::size_t n_samples = 200;
  std::size_t series_len = 100;
  std::uint64_t seed = 13;
};

std::uint64_t parse_count(std::string_view key, std::string_view text) {
  const auto value = xaits::parse_double(text);
  if (!value || *value < 0 || *value != static_cast<double>(static_cast<std::uint64_t>(*value))) {
    xaits::fail(xaits::ErrorKind::kConfig, "synth: " + std::string(key) + " must be a non-negative integer");
  }
  return static_cast<std::uint64_t>(*value);
}

// Either a JSON file or inline "n_samples=200,series_len=100,seed=13".
SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec spec;
  json doc;
  if (fs::is_regular_file(text)) {
    try {
      doc = json::parse(xaits::read_file(text));
    } catch (const json::exception& e) {
      xaits::fail(xaits::ErrorKind::kConfig, text + ": " + e.what());
    }
    if (!doc.is_object()) xaits::fail(xaits::ErrorKind::kConfig, text + ": expected an object");
  } else {
    for (auto item : xaits::split(text, ',')) {
      item = xaits::trim(item);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) xaits::fail(xaits::ErrorKind::kConfig, "synth: expected key=value");
      doc[std::string(xaits::trim(item.substr(0, eq)))] = parse_count(item.substr(0, eq), item.substr(eq + 1));
    }
  }
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_number_unsigned()) xaits::fail(xaits::ErrorKind::kConfig, "synth: " + key + " must be an integer");
    if (key == "n_samples") {
      spec.n_samples = value.get<std::size_t>();
    } else if (key == "series_len") {
      spec.series_len = value.get<std::size_t>();
    } else if (key == "seed") {
      spec.seed = value.get<std::uint64_t>();
    } else {
      xaits::fail(xaits::ErrorKind::kConfig, "synth: unknown key '" + key + "'");
    }
  }
  return spec;
}

int report_error(const std::string& stage, xaits::ErrorKind kind, const std::string& message) {
  const json record = {{"error", {{"stage", stage}, {"kind", xaits::to_string(kind)}, {"message", message}}}};
  std::cerr << record.dump() << "\n";
  return kind == xaits::ErrorKind::kConfig || kind == xaits::ErrorKind::kArgument ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-series attribution benchmark"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  bool quiet = false;
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--out", out, "Output directory (run) or file (attribute)");
  app.add_option("--jobs", jobs, "Parallelism width; results do not depend on it")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Run the full benchmark pipeline");
  run_cmd->add_option("config", config_path, "Run config (JSON)")->required();

  std::vector<std::string> report_dirs;
  auto* report_cmd = app.add_subcommand("report", "Summarize one or more run directories");
  report_cmd->add_option("dirs", report_dirs, "Run directories")->required();

  std::string method_id;
  auto* attribute_cmd = app.add_subcommand("attribute", "Train and export one method's attributions");
  attribute_cmd->add_option("config", config_path, "Run config (JSON)")->required();
  attribute_cmd->add_option("method", method_id, "Method id or label")->required();

  std::string synth_spec;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic spike dataset and its ground truth");
  synth_cmd->add_option("spec", synth_spec, "JSON file or n_samples=..,series_len=..,seed=..")->required();
  synth_cmd->add_option("out", synth_out, "Output dataset file")->required();

  CLI11_PARSE(app, argc, argv);

  std::ostream* log = quiet ? nullptr : &std::cerr;
  try {
    if (*run_cmd || *attribute_cmd) {
      xaits::RunConfig config;
      try {
        config = xaits::load_run_config(config_path);
      } catch (const xaits::Error& e) {
        throw xaits::StageError("config", e);
      }
      if (seed) config.seed = *seed;
      xaits::RunOptions options{jobs, log};
      if (*run_cmd) {
        if (!out.empty()) config.output_dir = out;
        const auto result = xaits::run(config, options);
        std::cout << result.run_dir.string() << "\n";
      } else {
        const fs::path target = out.empty() ? fs::path(method_id + ".attributions.csv") : fs::path(out);
        std::cout << xaits::attribute(config, method_id, target, options).string() << "\n";
      }
    } else if (*report_cmd) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      xaits::print_report(dirs, std::cout);
    } else if (*synth_cmd) {
      SynthSpec spec = parse_synth_spec(synth_spec);
      if (seed) spec.seed = *seed;
      const auto spike = xaits::generate_spike_dataset(spec.n_samples, spec.series_len, spec.seed);
      const fs::path data_path(synth_out);
      fs::path truth_path = data_path;
      truth_path.replace_extension(".truth.csv");
      xaits::write_ucr_tsv(spike.dataset, data_path);
      xaits::write_ground_truth(spike.ground_truth, truth_path);
      std::cout << data_path.string() << "\n" << truth_path.string() << "\n";
    }
  } catch (const xaits::StageError& e) {
    return report_error(e.stage(), e.kind(), e.what());
  } catch (const xaits::Error& e) {
    return report_error("cli", e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error("cli", xaits::ErrorKind::kIo, e.what());
  }
  return 0;
}
