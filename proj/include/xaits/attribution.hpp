#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xaits/dataset.hpp"
#include "xaits/models.hpp"

namespace xaits {

struct AttributionMap {
  std::size_t sample_id = 0;
  std::string method;
  std::vector<double> scores;
  bool normalized = false;
  // Set by normalize() when the raw scores were constant.
  bool degenerate = false;
  std::size_t target_output = 0;
};

enum class MethodId {
  kSaliency,
  kInputXGradient,
  kIntegratedGradients,
  kSmoothGrad,
  kOcclusion,
  kLime,
  kShapleySampling,
  kOracle,
  kRandom,
  kExternal,
};

std::string_view to_string(MethodId id);
MethodId parse_method_id(std::string_view text);
std::vector<std::string> available_method_ids();
bool needs_gradient(MethodId id);

enum class BaselineKind { kZero, kSampleMean };
enum class Replacement { kZero, kSampleMean };
enum class IgScheme { kRightRiemann, kTrapezoid };

struct MethodConfig {
  MethodId id = MethodId::kSaliency;
  // Identifier used in every output record; defaults to the method id string
  // ("external:<name>" for imported maps).
  std::string label;

  std::size_t ig_steps = 50;
  IgScheme ig_scheme = IgScheme::kRightRiemann;
  BaselineKind baseline = BaselineKind::kZero;  // integrated gradients, shapley
  std::size_t smoothgrad_samples = 25;
  double sigma_fraction = 0.1;
  std::size_t occlusion_window = 0;  // 0: max(1, round(0.05 * len))
  Replacement occlusion_replacement = Replacement::kZero;
  std::size_t lime_segments = 10;
  std::size_t lime_samples = 1000;
  double lime_kernel_width = 0.25;
  double lime_ridge = 1e-3;
  std::size_t permutations = 25;
  std::filesystem::path external_path;  // external only

  static MethodConfig of(MethodId id);
  std::string effective_label() const;
  void validate() const;
};

// Gradient-based maps. The explained output is the predicted class for
// classification and output 0 for regression.
AttributionMap saliency(const Predictor& model, std::span<const double> sample);
AttributionMap input_x_gradient(const Predictor& model, std::span<const double> sample);
// Right-endpoint Riemann sum over `steps` points of the straight path by
// default. The trapezoid rule uses steps + 1 points, endpoints half-weighted.
AttributionMap integrated_gradients(const Predictor& model, std::span<const double> sample, std::size_t steps = 50,
                                    std::span<const double> baseline = {},
                                    IgScheme scheme = IgScheme::kRightRiemann);
AttributionMap smoothgrad(const Predictor& model, std::span<const double> sample, std::size_t n_samples,
                          double sigma_fraction, std::uint64_t seed);

// Score-based maps; only need predictions.
AttributionMap occlusion(const Predictor& model, std::span<const double> sample, std::size_t window = 0,
                         Replacement replacement = Replacement::kZero);

struct LimeParams {
  std::size_t segments = 10;
  std::size_t n_samples = 1000;
  double kernel_width = 0.25;
  double ridge = 1e-3;
};
AttributionMap lime_surrogate(const Predictor& model, std::span<const double> sample, const LimeParams& params,
                              std::uint64_t seed);

// Mean marginal contribution over seeded random orderings, drawn in
// (order, reversed order) pairs.
AttributionMap shapley_sampling(const Predictor& model, std::span<const double> sample, std::size_t permutations,
                                std::span<const double> baseline, std::uint64_t seed);
// Exhaustive average over all len! orderings; len <= 9.
AttributionMap shapley_exact(const Predictor& model, std::span<const double> sample, std::span<const double> baseline);

AttributionMap oracle_attribution(std::span<const std::size_t> relevant, std::size_t series_len);
// Uniform noise scores; a control method carrying no model information.
AttributionMap random_attribution(std::size_t series_len, std::uint64_t seed);

// |scores| followed by min-max rescaling to [0, 1]; constant input maps to
// zeros with the degenerate flag set.
AttributionMap normalize(const AttributionMap& map);

// Runs one configured built-in method on one sample (not `external`). The
// per-sample RNG stream is derived from (seed, label, sample id), so results
// do not depend on scheduling order.
AttributionMap compute_attribution(const Predictor& model, const TimeSeriesSample& sample,
                                   const MethodConfig& config, std::uint64_t seed,
                                   const IndexSet* ground_truth = nullptr);

// Export format: a `#` header carrying the method id and normalization flag,
// then one row per sample: id followed by the comma-separated scores.
void write_attributions(std::span<const AttributionMap> maps, const std::filesystem::path& path);

// Imports maps aligned 1:1 with the given test samples. Method ids become
// "external:<name>", with name defaulting to the header's method id.
std::vector<AttributionMap> load_external_attributions(const std::filesystem::path& path, const Dataset& test_set,
                                                       const std::string& name = {});

}  // namespace xaits
