#include "xaits/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "xaits/error.hpp"
#include "xaits/random.hpp"
#include "xaits/text.hpp"

namespace xaits {

std::string_view to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

Dataset::Dataset(std::string name, Task task, std::size_t n_classes,
                 std::vector<TimeSeriesSample> samples)
    : name_(std::move(name)), task_(task), n_classes_(n_classes), samples_(std::move(samples)) {
  if (samples_.empty()) fail(ErrorKind::kEmptyDataset, "dataset '" + name_ + "' has no samples");
  series_len_ = samples_.front().values.size();
  if (series_len_ == 0) fail(ErrorKind::kArgument, "dataset '" + name_ + "' has empty series");
  if (task_ == Task::kClassification && n_classes_ == 0) {
    fail(ErrorKind::kArgument, "classification dataset needs at least one class");
  }
  if (task_ == Task::kRegression) n_classes_ = 0;
  for (const auto& sample : samples_) {
    if (sample.values.size() != series_len_) {
      fail(ErrorKind::kFormat, "sample " + std::to_string(sample.id) + " has length " +
                                   std::to_string(sample.values.size()) + ", expected " +
                                   std::to_string(series_len_));
    }
    for (double v : sample.values) {
      if (!std::isfinite(v)) {
        fail(ErrorKind::kValidation, "sample " + std::to_string(sample.id) + " has a non-finite value");
      }
    }
    if (task_ == Task::kClassification && sample.label >= n_classes_) {
      fail(ErrorKind::kValidation, "sample " + std::to_string(sample.id) + " label out of range");
    }
    if (task_ == Task::kRegression && !std::isfinite(sample.target)) {
      fail(ErrorKind::kValidation, "sample " + std::to_string(sample.id) + " has a non-finite target");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> positions, std::string name) const {
  std::vector<TimeSeriesSample> picked;
  picked.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= samples_.size()) fail(ErrorKind::kArgument, "subset position out of range");
    picked.push_back(samples_[p]);
  }
  return Dataset(std::move(name), task_, n_classes_, std::move(picked));
}

std::uint64_t Dataset::fingerprint() const {
  auto mix = [](std::uint64_t state, std::uint64_t word) {
    char bytes[sizeof(word)];
    std::memcpy(bytes, &word, sizeof(word));
    return fnv1a(std::string_view(bytes, sizeof(bytes)), state);
  };
  auto bits = [](double v) {
    std::uint64_t word = 0;
    std::memcpy(&word, &v, sizeof(v));
    return word;
  };
  std::uint64_t h = fnv1a(to_string(task_));
  h = mix(h, n_classes_);
  h = mix(h, series_len_);
  h = mix(h, samples_.size());
  for (const auto& s : samples_) {
    h = mix(h, s.id);
    h = mix(h, task_ == Task::kClassification ? s.label : bits(s.target));
    for (double v : s.values) h = mix(h, bits(v));
  }
  return h;
}

namespace {

struct RawUcr {
  std::vector<double> labels;
  std::vector<Series> rows;
};

RawUcr parse_ucr(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string_view> lines;
  for (auto line : split(text, '\n')) {
    if (!trim(line).empty()) lines.push_back(line);
  }
  if (lines.empty()) fail(ErrorKind::kEmptyDataset, path.string() + ": no samples");

  const char separator = lines.front().find('\t') != std::string_view::npos ? '\t' : ',';
  RawUcr raw;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto where = path.string() + ":" + std::to_string(n + 1);
    const auto tokens = split(trim(lines[n]), separator);
    Series row;
    row.reserve(tokens.size());
    for (auto token : tokens) {
      const auto value = parse_double(token);
      if (!value) fail(ErrorKind::kParse, where + ": non-numeric token '" + std::string(trim(token)) + "'");
      row.push_back(*value);
    }
    if (row.size() < 2) fail(ErrorKind::kFormat, where + ": expected a label and at least one value");
    if (!raw.rows.empty() && row.size() - 1 != raw.rows.front().size()) {
      fail(ErrorKind::kFormat, where + ": has " + std::to_string(row.size() - 1) + " values, expected " +
                                   std::to_string(raw.rows.front().size()));
    }
    raw.labels.push_back(row.front());
    row.erase(row.begin());
    raw.rows.push_back(std::move(row));
  }
  return raw;
}

using LabelMap = std::map<double, std::size_t>;

LabelMap label_map(std::initializer_list<const RawUcr*> parts) {
  LabelMap remap;
  for (const auto* part : parts) {
    for (double label : part->labels) remap.emplace(label, 0);
  }
  std::size_t next = 0;
  for (auto& [label, index] : remap) index = next++;
  return remap;
}

Dataset build_ucr(RawUcr raw, const LabelMap& remap, std::string name) {
  std::vector<TimeSeriesSample> samples(raw.rows.size());
  for (std::size_t i = 0; i < raw.rows.size(); ++i) {
    samples[i].values = std::move(raw.rows[i]);
    samples[i].label = remap.at(raw.labels[i]);
    samples[i].id = i;
  }
  return Dataset(std::move(name), Task::kClassification, remap.size(), std::move(samples));
}

}  // namespace

Dataset load_ucr_tsv(const std::filesystem::path& path) {
  RawUcr raw = parse_ucr(path);
  const auto remap = label_map({&raw});
  return build_ucr(std::move(raw), remap, path.stem().string());
}

std::pair<Dataset, Dataset> load_ucr_train_test(const std::filesystem::path& train_path,
                                                const std::filesystem::path& test_path) {
  RawUcr train = parse_ucr(train_path);
  RawUcr test = parse_ucr(test_path);
  if (!train.rows.empty() && !test.rows.empty() && train.rows.front().size() != test.rows.front().size()) {
    fail(ErrorKind::kFormat, test_path.string() + ": series length differs from " + train_path.string());
  }
  const auto remap = label_map({&train, &test});
  return {build_ucr(std::move(train), remap, train_path.stem().string()),
          build_ucr(std::move(test), remap, test_path.stem().string())};
}

void write_ucr_tsv(const Dataset& dataset, const std::filesystem::path& path) {
  std::string out;
  for (const auto& sample : dataset.samples()) {
    out += dataset.task() == Task::kClassification ? std::to_string(sample.label)
                                                   : format_double(sample.target);
    for (double v : sample.values) {
      out += '\t';
      out += format_double(v);
    }
    out += '\n';
  }
  write_file(path, out);
}

Series load_series(const std::filesystem::path& path) {
  std::string text = read_file(path);
  std::replace_if(text.begin(), text.end(), [](char c) { return c == ',' || c == '\t' || c == '\r'; }, ' ');
  Series series;
  std::size_t line_no = 1;
  for (auto line : split(text, '\n')) {
    for (auto token : split(line, ' ')) {
      if (trim(token).empty()) continue;
      const auto value = parse_double(token);
      if (!value) {
        fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) + ": non-numeric token '" +
                                    std::string(token) + "'");
      }
      series.push_back(*value);
    }
    ++line_no;
  }
  if (series.empty()) fail(ErrorKind::kEmptyDataset, path.string() + ": no values");
  return series;
}

Dataset make_windowed_regression(std::span<const double> series, std::size_t window, std::string name) {
  if (window < 1) fail(ErrorKind::kArgument, "window must be >= 1");
  if (window >= series.size()) {
    fail(ErrorKind::kArgument, "window " + std::to_string(window) + " must be shorter than the series (" +
                                   std::to_string(series.size()) + ")");
  }
  std::vector<TimeSeriesSample> samples(series.size() - window);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    samples[k].values.assign(series.begin() + static_cast<std::ptrdiff_t>(k),
                             series.begin() + static_cast<std::ptrdiff_t>(k + window));
    samples[k].target = series[k + window];
    samples[k].id = k;
  }
  return Dataset(std::move(name), Task::kRegression, 0, std::move(samples));
}

SpikeDataset generate_spike_dataset(std::size_t n_samples, std::size_t series_len, std::uint64_t seed) {
  if (series_len < 8) fail(ErrorKind::kArgument, "spike dataset needs series_len >= 8");
  if (n_samples < 2) fail(ErrorKind::kArgument, "spike dataset needs at least two samples");
  const std::size_t width = std::max<std::size_t>(1, series_len / 20);
  const std::size_t half = series_len / 2;
  Rng rng(derive_seed(seed, "spike_dataset"));

  std::vector<TimeSeriesSample> samples(n_samples);
  std::vector<IndexSet> truth(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto& s = samples[i];
    s.id = i;
    s.label = i % 2;
    s.values.resize(series_len);
    for (double& v : s.values) v = 0.1 * rng.normal();
    const std::size_t lo = s.label == 0 ? 0 : half;
    const std::size_t hi = s.label == 0 ? half - width : series_len - width;
    const std::size_t start = lo + rng.below(hi - lo + 1);
    for (std::size_t t = start; t < start + width; ++t) {
      s.values[t] += 2.0;
      truth[i].push_back(t);
    }
  }
  return {Dataset("spike", Task::kClassification, 2, std::move(samples)), std::move(truth)};
}

double mean(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

Series znormalize(std::span<const double> values) {
  Series out(values.size(), 0.0);
  if (values.empty()) return out;
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) {
    return out;
  }
  const double mu = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  const double sd = std::sqrt(ss / static_cast<double>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mu) / sd;
  return out;
}

Dataset znormalize(const Dataset& dataset) {
  std::vector<TimeSeriesSample> samples(dataset.samples().begin(), dataset.samples().end());
  for (auto& s : samples) s.values = znormalize(s.values);
  return Dataset(dataset.name(), dataset.task(), dataset.n_classes(), std::move(samples));
}

Split train_test_split(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorKind::kConfig, "test_fraction must lie in (0, 1)");
  }
  Split split;
  const std::size_t n = dataset.size();
  if (dataset.task() == Task::kRegression) {
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n) + 0.5));
    if (n_test == 0 || n_test >= n) fail(ErrorKind::kConfig, "test split leaves an empty partition");
    for (std::size_t i = 0; i < n; ++i) (i < n - n_test ? split.train : split.test).push_back(i);
    return split;
  }
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t c = 0; c < dataset.n_classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (dataset[i].label == c) members.push_back(i);
    }
    rng.shuffle(std::span(members));
    const auto n_test =
        static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(members.size()) + 0.5));
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  if (split.train.empty() || split.test.empty()) fail(ErrorKind::kConfig, "test split leaves an empty partition");
  return split;
}

}  // namespace xaits
