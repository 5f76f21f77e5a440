#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xaits {

enum class Task { kClassification, kRegression };

std::string_view to_string(Task task);

using Series = std::vector<double>;
using IndexSet = std::vector<std::size_t>;  // ascending, duplicate-free

struct TimeSeriesSample {
  Series values;
  // Meaningful for classification datasets only.
  std::size_t label = 0;
  // Meaningful for regression datasets only.
  double target = 0.0;
  std::size_t id = 0;
};

// Fixed-length univariate dataset. Validated on construction and immutable
// afterwards; safe to share read-only across threads.
class Dataset {
 public:
  Dataset(std::string name, Task task, std::size_t n_classes,
          std::vector<TimeSeriesSample> samples);

  const std::string& name() const { return name_; }
  Task task() const { return task_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t series_len() const { return series_len_; }
  std::size_t size() const { return samples_.size(); }
  std::span<const TimeSeriesSample> samples() const { return samples_; }
  const TimeSeriesSample& operator[](std::size_t i) const { return samples_[i]; }

  // Subset by position, preserving sample ids.
  Dataset subset(std::span<const std::size_t> positions, std::string name) const;

  // Content hash over task, shape, ids, targets and the exact value bits.
  std::uint64_t fingerprint() const;

 private:
  std::string name_;
  Task task_;
  std::size_t n_classes_;
  std::size_t series_len_;
  std::vector<TimeSeriesSample> samples_;
};

// Label followed by tab- or comma-separated values, one sample per line. The
// separator is detected from the first line. Labels are remapped to
// 0..n_classes-1 in ascending order of their original value.
Dataset load_ucr_tsv(const std::filesystem::path& path);

// Train and test files remapped with one shared label table.
std::pair<Dataset, Dataset> load_ucr_train_test(const std::filesystem::path& train_path,
                                                const std::filesystem::path& test_path);

// Writes the same format with the (remapped) label, or the regression target,
// in the first column. Values are written in shortest round-trip form.
void write_ucr_tsv(const Dataset& dataset, const std::filesystem::path& path);

// Reads every numeric token (comma, tab, whitespace or newline separated) of a
// single univariate series.
Series load_series(const std::filesystem::path& path);

Dataset make_windowed_regression(std::span<const double> series, std::size_t window,
                                 std::string name = "windowed");

struct SpikeDataset {
  Dataset dataset;
  std::vector<IndexSet> ground_truth;  // aligned with dataset samples
};

// Gaussian noise (sigma 0.1) plus a rectangular spike of amplitude 2.0 and
// width max(1, len/20), placed in the first half for class 0 and in the second
// half for class 1. Classes alternate by sample index.
SpikeDataset generate_spike_dataset(std::size_t n_samples, std::size_t series_len,
                                    std::uint64_t seed);

Series znormalize(std::span<const double> values);
Dataset znormalize(const Dataset& dataset);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Classification: seeded shuffle, stratified per class. Regression: the last
// test_fraction of samples (chronological) to avoid leakage between
// overlapping windows.
Split train_test_split(const Dataset& dataset, double test_fraction, std::uint64_t seed);

double mean(std::span<const double> values);

}  // namespace xaits
