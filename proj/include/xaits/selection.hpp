#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xaits/attribution.hpp"
#include "xaits/dataset.hpp"

namespace xaits {

enum class StrategyKind { kTopK, kDynamicThreshold, kFixedThreshold };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(std::string_view text);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kTopK;
  double fraction = 0.05;   // top-k
  double threshold = 0.8;   // fixed threshold

  void validate() const;
  // "topk", "dynamic_threshold" or "fixed_threshold"; the record key.
  std::string label() const { return std::string(to_string(kind)); }
};

struct SelectionResult {
  std::size_t sample_id = 0;
  StrategyKind strategy = StrategyKind::kTopK;
  IndexSet indices;
  // Set when the map carries no ranking information (constant scores).
  bool degenerate = false;
  std::size_t count() const { return indices.size(); }
};

inline std::size_t round_half_up(double value) {
  return value <= 0.0 ? 0 : static_cast<std::size_t>(value + 0.5);
}

// k = clamp(round(fraction * len), 1, len); ties go to the smaller index.
std::size_t topk_count(std::size_t series_len, double fraction);
SelectionResult select_topk(const AttributionMap& map, double fraction = 0.05);
// threshold = max - (max - mean) * 0.1, strict '>'.
double dynamic_threshold(std::span<const double> scores);
SelectionResult select_dynamic(const AttributionMap& map);
SelectionResult select_fixed(const AttributionMap& map, double threshold = 0.8);
SelectionResult select(const AttributionMap& map, const StrategyConfig& strategy);

enum class RandomVariant { kMatched, kPlus10, kMinus10 };

std::string_view to_string(RandomVariant variant);
double scale_of(RandomVariant variant);
inline constexpr std::array kRandomVariants = {RandomVariant::kMatched, RandomVariant::kPlus10,
                                               RandomVariant::kMinus10};

struct RandomBaselineSet {
  std::size_t sample_id = 0;
  RandomVariant variant = RandomVariant::kMatched;
  StrategyKind source = StrategyKind::kTopK;
  IndexSet indices;
};

// Sizes clamp(round(scale * count), 0, len) for scale 1.0, 1.1, 0.9, drawn
// uniformly without replacement from a stream keyed by (seed, sample id,
// strategy, scale).
std::array<RandomBaselineSet, 3> random_baselines(const SelectionResult& selection, std::size_t series_len,
                                                  std::uint64_t seed);

// One row per selection: sample id, strategy, space-separated indices.
void write_selections(std::span<const SelectionResult> selections, const std::filesystem::path& path);

}  // namespace xaits
