#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaits/adapter.hpp"
#include "xaits/attribution.hpp"
#include "xaits/error.hpp"
#include "xaits/dataset.hpp"
#include "xaits/evaluation.hpp"
#include "xaits/models.hpp"
#include "xaits/perturbation.hpp"
#include "xaits/selection.hpp"

namespace xaits {

enum class DatasetSource { kSynthetic, kUcr, kSeries };

struct DatasetSpec {
  DatasetSource source = DatasetSource::kSynthetic;
  // synthetic
  std::size_t n_samples = 200;
  std::size_t series_len = 100;
  std::optional<std::uint64_t> seed;  // defaults to the master seed
  // ucr: train file plus either a test file or a test_fraction split
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::filesystem::path ground_truth_path;  // optional, enables `oracle`
  // series: windowed next-point regression
  std::filesystem::path series_path;
  std::size_t window = 0;
  double test_fraction = 0.5;
  bool znormalize = false;
};

enum class ModelSource { kBuiltin, kAdapter, kFile };

struct ModelSpec {
  ModelSource source = ModelSource::kBuiltin;
  TrainConfig train;
  bool seed_explicit = false;  // otherwise the master seed is used
  AdapterOptions adapter;
  std::vector<std::filesystem::path> files;
};

struct VerificationSpec {
  VerificationKind kind = VerificationKind::kPointZero;
  std::optional<std::size_t> radius;  // interval kinds; default from series length
};

struct RunConfig {
  DatasetSpec dataset;
  ModelSpec model;
  std::vector<MethodConfig> methods;
  std::vector<StrategyConfig> strategies;
  std::vector<VerificationSpec> verifications;
  std::uint64_t seed = 13;
  std::filesystem::path output_dir = "runs";
  // Relative paths inside the config resolve against this directory.
  std::filesystem::path base_dir;

  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
// Effective config (defaults resolved) as echoed into the manifest.
nlohmann::json run_config_to_json(const RunConfig& config);

std::vector<VerificationMethod> resolve_verifications(std::span<const VerificationSpec> specs,
                                                      std::size_t series_len);

struct LoadedData {
  Dataset train;
  Dataset test;
  // Ground-truth relevance by sample id (synthetic or supplied datasets).
  std::vector<std::optional<IndexSet>> truth_by_id;
  std::uint64_t fingerprint = 0;  // of the full dataset before splitting
};

LoadedData load_data(const RunConfig& config);

// Ground-truth file: "sample_id,indices" rows, indices space-separated.
void write_ground_truth(std::span<const IndexSet> truth, const std::filesystem::path& path);
std::vector<std::optional<IndexSet>> load_ground_truth(const std::filesystem::path& path);

struct RunOptions {
  std::size_t jobs = 1;
  std::ostream* log = nullptr;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::vector<ScoreRecord> records;
  AssumptionTable assumption;
  std::vector<RankEntry> ranking;
  std::vector<std::string> skipped_methods;
  nlohmann::json manifest;
};

// Failure raised by run(); names the pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), prefixed(stage, cause.what())), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  // Messages that already name the stage ("config.seed ...") are kept as is.
  static std::string prefixed(const std::string& stage, const std::string& message) {
    const bool named = message.rfind(stage, 0) == 0 && message.size() > stage.size() &&
                       (message[stage.size()] == ':' || message[stage.size()] == '.');
    return named ? message : stage + ": " + message;
  }

  std::string stage_;
};

// train (or attach) -> attribute -> select -> perturb -> score -> rank, with
// every artifact written into a content-addressed run directory below
// config.output_dir.
RunResult run(const RunConfig& config, const RunOptions& options = {});

// Trains (or attaches) and writes the raw attribution export of one method
// for the test set.
std::filesystem::path attribute(const RunConfig& config, const std::string& method_id,
                                const std::filesystem::path& out_file, const RunOptions& options = {});

std::string scores_csv(std::span<const ScoreRecord> records);
nlohmann::json report_json(const RunResult& result);

// Human-readable summary of one or more run directories; several directories
// add an archive-wide ranking.
void print_report(std::span<const std::filesystem::path> run_dirs, std::ostream& out);

}  // namespace xaits
