#include "xaits/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "xaits/error.hpp"
#include "xaits/parallel.hpp"

namespace xaits {

std::string_view to_string(Metric metric) { return metric == Metric::kAccuracy ? "accuracy" : "rmse"; }

std::string_view to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::kAttribution: return "attribution";
    case VariantKind::kRandMatched: return "rand_matched";
    case VariantKind::kRandPlus10: return "rand_plus10";
    case VariantKind::kRandMinus10: return "rand_minus10";
  }
  return "?";
}

Metric metric_for(Task task) { return task == Task::kClassification ? Metric::kAccuracy : Metric::kRmse; }

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.empty()) fail(ErrorKind::kArgument, "accuracy of an empty prediction set");
  if (predicted.size() != truth.size()) fail(ErrorKind::kArgument, "accuracy: length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double rmse(std::span<const double> predicted, std::span<const double> targets) {
  if (predicted.empty()) fail(ErrorKind::kArgument, "rmse of an empty prediction set");
  if (predicted.size() != targets.size()) fail(ErrorKind::kArgument, "rmse: length mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double r = predicted[i] - targets[i];
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(predicted.size()));
}

Provenance Provenance::baseline() { return {"baseline", "-", "-", "-"}; }

std::vector<SelectionResult> select_all(std::span<const AttributionMap> maps, const StrategyConfig& strategy) {
  std::vector<SelectionResult> out;
  out.reserve(maps.size());
  for (const auto& map : maps) {
    if (!map.normalized) fail(ErrorKind::kArgument, "selection needs normalized attribution maps");
    out.push_back(select(map, strategy));
  }
  return out;
}

std::vector<VariantDataset> build_variants(const Dataset& test_set, std::span<const MethodMaps> methods,
                                           std::span<const StrategyConfig> strategies,
                                           std::span<const VerificationMethod> verifications, std::uint64_t seed,
                                           std::size_t jobs) {
  const std::size_t n = test_set.size();
  const std::size_t len = test_set.series_len();
  for (const auto& method : methods) {
    if (method.maps.size() != n) {
      fail(ErrorKind::kAlignment, method.method + ": " + std::to_string(method.maps.size()) + " maps for " +
                                      std::to_string(n) + " test samples");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (method.maps[i].sample_id != test_set[i].id || method.maps[i].scores.size() != len) {
        fail(ErrorKind::kAlignment, method.method + ": map " + std::to_string(i) + " is not aligned with the test set");
      }
    }
  }

  struct Job {
    Provenance provenance;
    const std::vector<IndexSet>* indices;
    const VerificationMethod* verification;
  };
  // Index sets per (method, strategy, variant kind); kept alive for the jobs.
  std::vector<std::vector<IndexSet>> index_sets;
  index_sets.reserve(methods.size() * strategies.size() * 4);
  std::vector<Job> jobs_list;
  for (const auto& method : methods) {
    for (const auto& strategy : strategies) {
      const auto selections = select_all(method.maps, strategy);
      const std::size_t base = index_sets.size();
      index_sets.resize(base + 4, std::vector<IndexSet>(n));
      for (std::size_t i = 0; i < n; ++i) {
        index_sets[base][i] = selections[i].indices;
        const auto randoms = random_baselines(selections[i], len, seed);
        for (std::size_t v = 0; v < randoms.size(); ++v) index_sets[base + 1 + v][i] = randoms[v].indices;
      }
      for (const auto& verification : verifications) {
        for (std::size_t v = 0; v < 4; ++v) {
          const auto kind = static_cast<VariantKind>(v);
          jobs_list.push_back({{method.method, strategy.label(), verification.label(), std::string(to_string(kind))},
                               &index_sets[base + v],
                               &verification});
        }
      }
    }
  }

  std::vector<VariantDataset> variants(jobs_list.size());
  parallel_for(jobs_list.size(), jobs, [&](std::size_t j) {
    const Job& job = jobs_list[j];
    VariantDataset& out = variants[j];
    out.provenance = job.provenance;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const IndexSet& idx = (*job.indices)[i];
      out.perturbed_points += idx.size();
      out.samples[i] = idx.empty() ? test_set[i].values : apply_verification(test_set[i].values, idx, *job.verification);
    }
  });
  return variants;
}

double metric_value(const Predictor& model, const Dataset& reference, std::span<const Series> samples) {
  if (samples.size() != reference.size()) fail(ErrorKind::kAlignment, "variant size does not match the test set");
  const Matrix out = model.predict(Matrix::from_rows(samples));
  if (reference.task() == Task::kClassification) {
    std::vector<std::size_t> predicted(out.rows()), truth(out.rows());
    for (std::size_t r = 0; r < out.rows(); ++r) {
      predicted[r] = argmax(out.row(r));
      truth[r] = reference[r].label;
    }
    return accuracy(predicted, truth);
  }
  std::vector<double> predicted(out.rows()), targets(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    predicted[r] = out(r, 0);
    targets[r] = reference[r].target;
  }
  return rmse(predicted, targets);
}

namespace {

double degradation(Metric metric, double baseline, double value) {
  return metric == Metric::kAccuracy ? baseline - value : value - baseline;
}

std::string model_tag(std::size_t n_models) {
  return n_models == 1 ? "model" : "ensemble_mean:" + std::to_string(n_models);
}

}  // namespace

std::vector<ScoreRecord> score_variants(std::span<const Predictor* const> models, const Dataset& test_set,
                                        std::span<const VariantDataset> variants, std::size_t jobs) {
  if (models.empty()) fail(ErrorKind::kArgument, "score_variants needs at least one model");
  const Metric metric = metric_for(test_set.task());
  std::vector<Series> reference;
  reference.reserve(test_set.size());
  for (const auto& s : test_set.samples()) reference.push_back(s.values);

  auto averaged = [&](std::span<const Series> samples, const Provenance& provenance) {
    double sum = 0.0;
    for (const Predictor* model : models) {
      try {
        sum += metric_value(*model, test_set, samples);
      } catch (const Error& e) {
        fail(e.kind(), "scoring " + provenance.method + "/" + provenance.strategy + "/" + provenance.verification +
                           "/" + provenance.variant + ": " + e.what());
      }
    }
    return sum / static_cast<double>(models.size());
  };

  std::vector<ScoreRecord> records(variants.size() + 1);
  const double base = averaged(reference, Provenance::baseline());
  records[0] = {Provenance::baseline(), metric, base, 0.0, model_tag(models.size()), 0};
  parallel_for(variants.size(), jobs, [&](std::size_t v) {
    const double value = averaged(variants[v].samples, variants[v].provenance);
    records[v + 1] = {variants[v].provenance, metric, value, degradation(metric, base, value),
                      model_tag(models.size()), variants[v].perturbed_points};
  });
  return records;
}

std::vector<ScoreRecord> score_variants(const Predictor& model, const Dataset& test_set,
                                        std::span<const VariantDataset> variants, std::size_t jobs) {
  const Predictor* one[] = {&model};
  return score_variants(std::span<const Predictor* const>(one), test_set, variants, jobs);
}

std::vector<ScoreRecord> ensemble_mean(std::span<const std::vector<ScoreRecord>> per_model) {
  if (per_model.empty()) fail(ErrorKind::kArgument, "ensemble_mean of no models");
  if (per_model.size() == 1) return per_model.front();
  const std::size_t count = per_model.front().size();
  std::vector<ScoreRecord> out = per_model.front();
  for (std::size_t r = 0; r < count; ++r) {
    double sum = 0.0;
    std::size_t points = 0;
    for (const auto& records : per_model) {
      if (records.size() != count || records[r].provenance != out[r].provenance) {
        fail(ErrorKind::kIncompleteRun, "ensemble members produced different record sets");
      }
      sum += records[r].value;
      points += records[r].perturbed_points;
    }
    out[r].value = sum / static_cast<double>(per_model.size());
    out[r].perturbed_points = points;
    out[r].model = model_tag(per_model.size());
  }
  const auto base = std::find_if(out.begin(), out.end(), [](const ScoreRecord& r) { return r.provenance.is_baseline(); });
  if (base == out.end()) fail(ErrorKind::kIncompleteRun, "no baseline record");
  const double baseline = base->value;
  for (auto& r : out) r.delta = r.provenance.is_baseline() ? 0.0 : degradation(r.metric, baseline, r.value);
  return out;
}

std::string_view to_string(CellStatus status) {
  switch (status) {
    case CellStatus::kHolds: return "holds";
    case CellStatus::kViolated: return "violated";
    case CellStatus::kTie: return "tie";
    case CellStatus::kDegenerate: return "degenerate";
  }
  return "?";
}

namespace {

using CellKey = std::tuple<std::string, std::string, std::string>;

struct CellRecords {
  const ScoreRecord* attribution = nullptr;
  const ScoreRecord* random = nullptr;
};

// Sorted by key, so downstream output never depends on record order.
std::map<CellKey, CellRecords> index_cells(std::span<const ScoreRecord> records) {
  std::map<CellKey, CellRecords> cells;
  for (const auto& r : records) {
    if (r.provenance.is_baseline()) continue;
    CellKey key{r.provenance.method, r.provenance.strategy, r.provenance.verification};
    if (r.provenance.variant == to_string(VariantKind::kAttribution)) cells[key].attribution = &r;
    if (r.provenance.variant == to_string(VariantKind::kRandMatched)) cells[key].random = &r;
  }
  return cells;
}

}  // namespace

AssumptionTable check_assumption(std::span<const ScoreRecord> records) {
  const auto base = std::find_if(records.begin(), records.end(),
                                 [](const ScoreRecord& r) { return r.provenance.is_baseline(); });
  if (base == records.end()) fail(ErrorKind::kIncompleteRun, "no baseline record");

  AssumptionTable table;
  for (const auto& [key, cell] : index_cells(records)) {
    const auto& [method, strategy, verification] = key;
    if (cell.attribution == nullptr || cell.random == nullptr) {
      fail(ErrorKind::kIncompleteRun,
           "missing " + std::string(cell.attribution ? "rand_matched" : "attribution") + " record for " + method +
               "/" + strategy + "/" + verification);
    }
    AssumptionCell out{method, strategy, verification, base->value, cell.random->value, cell.attribution->value};
    if (base->metric == Metric::kAccuracy) {
      out.baseline_vs_random = out.baseline >= out.random;
      out.random_vs_attribution = out.random > out.attribution;
    } else {
      out.baseline_vs_random = out.baseline <= out.random;
      out.random_vs_attribution = out.random < out.attribution;
    }
    if (cell.attribution->perturbed_points == 0) {
      out.status = CellStatus::kDegenerate;
      ++table.degenerate;
    } else if (out.baseline_vs_random && out.random_vs_attribution) {
      out.status = CellStatus::kHolds;
      ++table.holds;
    } else if (out.random == out.attribution) {
      out.status = CellStatus::kTie;
      ++table.ties;
    } else {
      out.status = CellStatus::kViolated;
      ++table.violated;
    }
    table.cells.push_back(std::move(out));
  }
  return table;
}

namespace {

void sort_ranking(std::vector<RankEntry>& ranking) {
  std::sort(ranking.begin(), ranking.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.degradation != b.degradation) return a.degradation > b.degradation;
    if (a.mean_delta_attribution != b.mean_delta_attribution) return a.mean_delta_attribution > b.mean_delta_attribution;
    return a.method < b.method;
  });
}

}  // namespace

std::vector<RankEntry> rank_methods(std::span<const ScoreRecord> records) {
  std::map<std::string, RankEntry> by_method;
  for (const auto& [key, cell] : index_cells(records)) {
    if (cell.attribution == nullptr || cell.random == nullptr) continue;
    const auto& [method, strategy, verification] = key;
    auto& entry = by_method[method];
    entry.method = method;
    entry.cells.push_back({strategy, verification, cell.attribution->delta, cell.random->delta,
                           cell.attribution->delta - cell.random->delta});
  }
  std::vector<RankEntry> ranking;
  for (auto& [method, entry] : by_method) {
    double diff = 0.0, attr = 0.0;
    for (const auto& c : entry.cells) {
      diff += c.difference;
      attr += c.delta_attribution;
    }
    const auto cells = static_cast<double>(entry.cells.size());
    entry.degradation = diff / cells;
    entry.mean_delta_attribution = attr / cells;
    ranking.push_back(std::move(entry));
  }
  sort_ranking(ranking);
  return ranking;
}

std::vector<RankEntry> aggregate_rankings(std::span<const std::vector<RankEntry>> per_dataset) {
  struct Sums {
    double degradation = 0.0;
    double attribution = 0.0;
    std::size_t count = 0;
  };
  std::map<std::string, Sums> sums;
  for (const auto& ranking : per_dataset) {
    for (const auto& entry : ranking) {
      auto& s = sums[entry.method];
      s.degradation += entry.degradation;
      s.attribution += entry.mean_delta_attribution;
      ++s.count;
    }
  }
  std::vector<RankEntry> out;
  for (const auto& [method, s] : sums) {
    const auto n = static_cast<double>(s.count);
    out.push_back({method, s.degradation / n, s.attribution / n, {}});
  }
  sort_ranking(out);
  return out;
}

}  // namespace xaits
