#include "xaits/perturbation.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "xaits/error.hpp"

namespace xaits {

namespace {

constexpr std::array kAllKinds = {
    VerificationKind::kPointZero,    VerificationKind::kPointInverse,    VerificationKind::kPointMean,
    VerificationKind::kIntervalZero, VerificationKind::kIntervalMean,    VerificationKind::kIntervalInverse,
    VerificationKind::kIntervalSwap,
};

void check_indices(std::span<const std::size_t> indices, std::size_t len, const char* what) {
  for (std::size_t i : indices) {
    if (i >= len) {
      fail(ErrorKind::kArgument,
           std::string(what) + " " + std::to_string(i) + " out of range for length " + std::to_string(len));
    }
  }
}

}  // namespace

bool is_interval(VerificationKind kind) {
  return kind != VerificationKind::kPointZero && kind != VerificationKind::kPointInverse &&
         kind != VerificationKind::kPointMean;
}

std::string_view to_string(VerificationKind kind) {
  switch (kind) {
    case VerificationKind::kPointZero: return "point_zero";
    case VerificationKind::kPointInverse: return "point_inverse";
    case VerificationKind::kPointMean: return "point_mean";
    case VerificationKind::kIntervalZero: return "interval_zero";
    case VerificationKind::kIntervalMean: return "interval_mean";
    case VerificationKind::kIntervalInverse: return "interval_inverse";
    case VerificationKind::kIntervalSwap: return "interval_swap";
  }
  return "?";
}

VerificationKind parse_verification_kind(std::string_view text) {
  for (auto kind : kAllKinds) {
    if (to_string(kind) == text) return kind;
  }
  fail(ErrorKind::kConfig, "unknown verification method '" + std::string(text) + "'");
}

std::span<const VerificationKind> all_verification_kinds() { return kAllKinds; }

VerificationMethod VerificationMethod::point(VerificationKind kind) {
  if (is_interval(kind)) fail(ErrorKind::kConfig, std::string(to_string(kind)) + " needs a radius");
  return {kind, std::nullopt};
}

VerificationMethod VerificationMethod::interval(VerificationKind kind, std::size_t radius) {
  if (!is_interval(kind)) fail(ErrorKind::kConfig, std::string(to_string(kind)) + " takes no radius");
  return {kind, radius};
}

std::string VerificationMethod::label() const {
  std::string out(to_string(kind_));
  if (radius_) out += "/r" + std::to_string(*radius_);
  return out;
}

std::size_t default_interval_radius(std::size_t series_len) {
  const auto r = static_cast<std::size_t>(std::floor(0.025 * static_cast<double>(series_len) + 0.5));
  return std::max<std::size_t>(1, r);
}

ReferenceRange ReferenceRange::of(std::span<const double> series) {
  if (series.empty()) return {};
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  return {*lo, *hi};
}

Series perturb_points(std::span<const double> series, std::span<const std::size_t> indices, PointMode mode,
                      const ReferenceRange& range) {
  check_indices(indices, series.size(), "index");
  Series out(series.begin(), series.end());
  const double series_mean = mode == PointMode::kSeriesMean ? mean(series) : 0.0;
  for (std::size_t i : indices) {
    switch (mode) {
      case PointMode::kZero: out[i] = 0.0; break;
      case PointMode::kInverse: out[i] = range.lo + range.hi - series[i]; break;
      case PointMode::kSeriesMean: out[i] = series_mean; break;
    }
  }
  return out;
}

std::vector<Run> merged_runs(std::span<const std::size_t> centers, std::size_t radius, std::size_t series_len) {
  check_indices(centers, series_len, "center");
  std::vector<Run> spans;
  spans.reserve(centers.size());
  for (std::size_t c : centers) {
    const std::size_t first = c >= radius ? c - radius : 0;
    const std::size_t last = std::min(series_len - 1, c + std::min(radius, series_len));
    spans.push_back({first, last});
  }
  std::sort(spans.begin(), spans.end(), [](const Run& a, const Run& b) { return a.first < b.first; });
  std::vector<Run> merged;
  for (const Run& s : spans) {
    if (!merged.empty() && s.first <= merged.back().last) {
      merged.back().last = std::max(merged.back().last, s.last);
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

Series perturb_interval(std::span<const double> series, std::span<const std::size_t> centers, std::size_t radius,
                        IntervalMode mode, const ReferenceRange& range) {
  Series out(series.begin(), series.end());
  for (const Run& run : merged_runs(centers, radius, series.size())) {
    const auto first = out.begin() + static_cast<std::ptrdiff_t>(run.first);
    const auto last = out.begin() + static_cast<std::ptrdiff_t>(run.last) + 1;
    switch (mode) {
      case IntervalMode::kZero:
        std::fill(first, last, 0.0);
        break;
      case IntervalMode::kIntervalMean: {
        const double mu = mean(series.subspan(run.first, run.last - run.first + 1));
        std::fill(first, last, mu);
        break;
      }
      case IntervalMode::kInverse:
        for (std::size_t i = run.first; i <= run.last; ++i) out[i] = range.lo + range.hi - series[i];
        break;
      case IntervalMode::kSwap:
        std::reverse(first, last);
        break;
    }
  }
  return out;
}

Series apply_verification(std::span<const double> series, std::span<const std::size_t> indices,
                          const VerificationMethod& method) {
  const auto range = ReferenceRange::of(series);
  switch (method.kind()) {
    case VerificationKind::kPointZero: return perturb_points(series, indices, PointMode::kZero, range);
    case VerificationKind::kPointInverse: return perturb_points(series, indices, PointMode::kInverse, range);
    case VerificationKind::kPointMean: return perturb_points(series, indices, PointMode::kSeriesMean, range);
    case VerificationKind::kIntervalZero:
      return perturb_interval(series, indices, *method.radius(), IntervalMode::kZero, range);
    case VerificationKind::kIntervalMean:
      return perturb_interval(series, indices, *method.radius(), IntervalMode::kIntervalMean, range);
    case VerificationKind::kIntervalInverse:
      return perturb_interval(series, indices, *method.radius(), IntervalMode::kInverse, range);
    case VerificationKind::kIntervalSwap:
      return perturb_interval(series, indices, *method.radius(), IntervalMode::kSwap, range);
  }
  return Series(series.begin(), series.end());
}

}  // namespace xaits
