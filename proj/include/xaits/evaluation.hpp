#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xaits/attribution.hpp"
#include "xaits/dataset.hpp"
#include "xaits/models.hpp"
#include "xaits/perturbation.hpp"
#include "xaits/selection.hpp"

namespace xaits {

enum class Metric { kAccuracy, kRmse };
enum class VariantKind { kAttribution, kRandMatched, kRandPlus10, kRandMinus10 };

std::string_view to_string(Metric metric);
std::string_view to_string(VariantKind kind);
Metric metric_for(Task task);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);
double rmse(std::span<const double> predicted, std::span<const double> targets);

// Record key. The baseline uses method "baseline" and "-" elsewhere.
struct Provenance {
  std::string method;
  std::string strategy;
  std::string verification;
  std::string variant;

  static Provenance baseline();
  bool is_baseline() const { return method == "baseline"; }
  auto operator<=>(const Provenance&) const = default;
};

struct VariantDataset {
  Provenance provenance;
  std::vector<Series> samples;  // aligned 1:1 with the baseline test set
  std::size_t perturbed_points = 0;  // total selected indices over all samples
};

struct MethodMaps {
  std::string method;
  std::vector<AttributionMap> maps;  // normalized, aligned with the test set
};

// Per method: strategies x verifications attribution-driven sets plus three
// random variants each, i.e. 12 * v sets when all three strategies are used.
std::vector<VariantDataset> build_variants(const Dataset& test_set, std::span<const MethodMaps> methods,
                                           std::span<const StrategyConfig> strategies,
                                           std::span<const VerificationMethod> verifications, std::uint64_t seed,
                                           std::size_t jobs = 1);

// Selections computed by build_variants, for audit exports.
std::vector<SelectionResult> select_all(std::span<const AttributionMap> maps, const StrategyConfig& strategy);

struct ScoreRecord {
  Provenance provenance;
  Metric metric = Metric::kAccuracy;
  double value = 0.0;
  // Positive means degradation: baseline - value for accuracy, value -
  // baseline for rmse.
  double delta = 0.0;
  std::string model;
  std::size_t perturbed_points = 0;
};

double metric_value(const Predictor& model, const Dataset& reference, std::span<const Series> samples);

// One baseline record followed by one record per variant. With several
// models the value is the mean of their metric values on the same variants.
std::vector<ScoreRecord> score_variants(std::span<const Predictor* const> models, const Dataset& test_set,
                                        std::span<const VariantDataset> variants, std::size_t jobs = 1);
std::vector<ScoreRecord> score_variants(const Predictor& model, const Dataset& test_set,
                                        std::span<const VariantDataset> variants, std::size_t jobs = 1);

// Averages per-model record lists that share the same provenance sequence
// (each model explained and perturbed on its own).
std::vector<ScoreRecord> ensemble_mean(std::span<const std::vector<ScoreRecord>> per_model);

enum class CellStatus { kHolds, kViolated, kTie, kDegenerate };
std::string_view to_string(CellStatus status);

struct AssumptionCell {
  std::string method;
  std::string strategy;
  std::string verification;
  double baseline = 0.0;
  double random = 0.0;       // matched random variant
  double attribution = 0.0;
  bool baseline_vs_random = false;     // qm(t) >= qm(t_r)
  bool random_vs_attribution = false;  // qm(t_r) > qm(t_c)
  CellStatus status = CellStatus::kHolds;
};

struct AssumptionTable {
  std::vector<AssumptionCell> cells;
  std::size_t holds = 0;
  std::size_t violated = 0;
  std::size_t ties = 0;
  std::size_t degenerate = 0;
};

// For rmse both inequalities are reversed, so a holding cell always means the
// attribution-guided perturbation degraded quality more than random.
AssumptionTable check_assumption(std::span<const ScoreRecord> records);

struct CellScore {
  std::string strategy;
  std::string verification;
  double delta_attribution = 0.0;
  double delta_random = 0.0;
  double difference = 0.0;
};

struct RankEntry {
  std::string method;
  double degradation = 0.0;  // mean over cells of delta_attribution - delta_random
  double mean_delta_attribution = 0.0;
  std::vector<CellScore> cells;
};

// Descending by degradation, then mean attribution delta, then method id.
std::vector<RankEntry> rank_methods(std::span<const ScoreRecord> records);

// Unweighted mean of each method's degradation over several datasets.
std::vector<RankEntry> aggregate_rankings(std::span<const std::vector<RankEntry>> per_dataset);

}  // namespace xaits
