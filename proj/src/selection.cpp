#include "xaits/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xaits/error.hpp"
#include "xaits/random.hpp"
#include "xaits/text.hpp"

namespace xaits {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kTopK: return "topk";
    case StrategyKind::kDynamicThreshold: return "dynamic_threshold";
    case StrategyKind::kFixedThreshold: return "fixed_threshold";
  }
  return "?";
}

StrategyKind parse_strategy_kind(std::string_view text) {
  if (text == "topk") return StrategyKind::kTopK;
  if (text == "dynamic" || text == "dynamic_threshold") return StrategyKind::kDynamicThreshold;
  if (text == "fixed" || text == "fixed_threshold") return StrategyKind::kFixedThreshold;
  fail(ErrorKind::kConfig, "unknown selection strategy '" + std::string(text) +
                               "' (expected topk, dynamic_threshold, fixed_threshold)");
}

void StrategyConfig::validate() const {
  if (kind == StrategyKind::kTopK && !(fraction > 0.0 && fraction <= 1.0)) {
    fail(ErrorKind::kConfig, "topk fraction must lie in (0, 1]");
  }
  if (kind == StrategyKind::kFixedThreshold && !(threshold >= 0.0 && threshold <= 1.0)) {
    fail(ErrorKind::kConfig, "fixed threshold must lie in [0, 1]");
  }
}

std::size_t topk_count(std::size_t series_len, double fraction) {
  const std::size_t k = round_half_up(fraction * static_cast<double>(series_len));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(series_len, 1));
}

SelectionResult select_topk(const AttributionMap& map, double fraction) {
  const auto& s = map.scores;
  const std::size_t k = std::min(topk_count(s.size(), fraction), s.size());
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return {map.sample_id, StrategyKind::kTopK, std::move(order), map.degenerate};
}

double dynamic_threshold(std::span<const double> scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  return top - (top - mean(scores)) * 0.1;
}

namespace {
SelectionResult above(const AttributionMap& map, double threshold, StrategyKind kind) {
  SelectionResult result{map.sample_id, kind, {}, map.degenerate};
  for (std::size_t i = 0; i < map.scores.size(); ++i) {
    if (map.scores[i] > threshold) result.indices.push_back(i);
  }
  return result;
}
}  // namespace

SelectionResult select_dynamic(const AttributionMap& map) {
  if (map.scores.empty()) return {map.sample_id, StrategyKind::kDynamicThreshold, {}, true};
  auto result = above(map, dynamic_threshold(map.scores), StrategyKind::kDynamicThreshold);
  // max == mean means every score is equal; nothing can exceed the threshold.
  const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
  if (*lo == *hi) result.degenerate = true;
  return result;
}

SelectionResult select_fixed(const AttributionMap& map, double threshold) {
  StrategyConfig{StrategyKind::kFixedThreshold, 0.05, threshold}.validate();
  return above(map, threshold, StrategyKind::kFixedThreshold);
}

SelectionResult select(const AttributionMap& map, const StrategyConfig& strategy) {
  switch (strategy.kind) {
    case StrategyKind::kTopK: return select_topk(map, strategy.fraction);
    case StrategyKind::kDynamicThreshold: return select_dynamic(map);
    case StrategyKind::kFixedThreshold: return select_fixed(map, strategy.threshold);
  }
  return {};
}

std::string_view to_string(RandomVariant variant) {
  switch (variant) {
    case RandomVariant::kMatched: return "rand_matched";
    case RandomVariant::kPlus10: return "rand_plus10";
    case RandomVariant::kMinus10: return "rand_minus10";
  }
  return "?";
}

double scale_of(RandomVariant variant) {
  switch (variant) {
    case RandomVariant::kMatched: return 1.0;
    case RandomVariant::kPlus10: return 1.1;
    case RandomVariant::kMinus10: return 0.9;
  }
  return 1.0;
}

std::array<RandomBaselineSet, 3> random_baselines(const SelectionResult& selection, std::size_t series_len,
                                                  std::uint64_t seed) {
  std::array<RandomBaselineSet, 3> sets;
  for (std::size_t v = 0; v < kRandomVariants.size(); ++v) {
    const auto variant = kRandomVariants[v];
    const double scale = scale_of(variant);
    const std::size_t size =
        std::min(round_half_up(scale * static_cast<double>(selection.count())), series_len);
    Rng rng(derive_seed(seed, "random_baseline", selection.sample_id, to_string(selection.strategy), scale));
    sets[v] = {selection.sample_id, variant, selection.strategy, rng.sample_without_replacement(series_len, size)};
  }
  return sets;
}

void write_selections(std::span<const SelectionResult> selections, const std::filesystem::path& path) {
  std::string out = "sample_id,strategy,indices\n";
  for (const auto& s : selections) {
    out += std::to_string(s.sample_id) + "," + std::string(to_string(s.strategy)) + ",";
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(s.indices[i]);
    }
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace xaits
