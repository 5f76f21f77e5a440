#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xaits/dataset.hpp"

namespace xaits {

enum class VerificationKind {
  kPointZero,
  kPointInverse,
  kPointMean,
  kIntervalZero,
  kIntervalMean,
  kIntervalInverse,
  kIntervalSwap,
};

bool is_interval(VerificationKind kind);
std::string_view to_string(VerificationKind kind);
VerificationKind parse_verification_kind(std::string_view text);

// All seven kinds, point kinds first.
std::span<const VerificationKind> all_verification_kinds();

class VerificationMethod {
 public:
  static VerificationMethod point(VerificationKind kind);
  static VerificationMethod interval(VerificationKind kind, std::size_t radius);

  VerificationKind kind() const { return kind_; }
  // Present iff the kind is an interval kind.
  std::optional<std::size_t> radius() const { return radius_; }

  // "point_zero" or "interval_zero/r3".
  std::string label() const;

  friend bool operator==(const VerificationMethod&, const VerificationMethod&) = default;

 private:
  VerificationMethod(VerificationKind kind, std::optional<std::size_t> radius) : kind_(kind), radius_(radius) {}
  VerificationKind kind_;
  std::optional<std::size_t> radius_;
};

// max(1, round(0.025 * len)).
std::size_t default_interval_radius(std::size_t series_len);

// Value range of the unperturbed sample; "inverse" reflects across it.
struct ReferenceRange {
  double lo = 0.0;
  double hi = 0.0;

  static ReferenceRange of(std::span<const double> series);
};

enum class PointMode { kZero, kInverse, kSeriesMean };
enum class IntervalMode { kZero, kIntervalMean, kInverse, kSwap };

Series perturb_points(std::span<const double> series, std::span<const std::size_t> indices, PointMode mode,
                      const ReferenceRange& range);

struct Run {
  std::size_t first;
  std::size_t last;  // inclusive
  friend bool operator==(const Run&, const Run&) = default;
};

// Clipped [c - radius, c + radius] intervals, with intervals that share a
// point merged into maximal runs, ascending. Merely adjacent intervals stay
// separate runs, so radius 0 treats every center on its own.
std::vector<Run> merged_runs(std::span<const std::size_t> centers, std::size_t radius, std::size_t series_len);

Series perturb_interval(std::span<const double> series, std::span<const std::size_t> centers, std::size_t radius,
                        IntervalMode mode, const ReferenceRange& range);

// Dispatches on the verification kind; the range is taken from `series`.
Series apply_verification(std::span<const double> series, std::span<const std::size_t> indices,
                          const VerificationMethod& method);

}  // namespace xaits
