#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "support.hpp"
#include "xaits/error.hpp"
#include "xaits/evaluation.hpp"

namespace xaits {
namespace {

using testing::random_model;
using testing::random_series;

// Decides on the first time point only: class 0 iff x[0] > 0, or regresses x[0].
class FirstPoint final : public Predictor {
 public:
  explicit FirstPoint(Task task, std::size_t len) : task_(task), len_(len) {}
  Task task() const override { return task_; }
  std::size_t input_len() const override { return len_; }
  std::size_t n_outputs() const override { return task_ == Task::kClassification ? 2 : 1; }
  bool has_input_gradient() const override { return false; }
  Matrix raw_outputs(const Matrix& batch) const override {
    Matrix out(batch.rows(), n_outputs());
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      out(r, 0) = batch(r, 0);
      if (task_ == Task::kClassification) out(r, 1) = -batch(r, 0);
    }
    return out;
  }

 private:
  Task task_;
  std::size_t len_;
};

ErrorKind kind_of(const std::function<void()>& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::kIo;
}

Dataset positive_dataset(std::size_t n, std::size_t len) {
  std::vector<TimeSeriesSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    samples[i].values = Series(len, 1.0);
    samples[i].id = i;
  }
  return Dataset("pos", Task::kClassification, 2, samples);
}

ScoreRecord record(std::string method, std::string variant, double value, double base, std::size_t points = 1) {
  ScoreRecord r;
  r.provenance = {std::move(method), "topk", "point_zero", std::move(variant)};
  r.value = value;
  r.delta = base - value;
  r.perturbed_points = points;
  return r;
}

ScoreRecord baseline_record(double value) {
  ScoreRecord r;
  r.provenance = Provenance::baseline();
  r.value = value;
  return r;
}

TEST(Metrics, Examples) {
  EXPECT_NEAR(accuracy(std::vector<std::size_t>{1, 1, 0}, std::vector<std::size_t>{1, 0, 0}), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 0}, std::vector<std::size_t>{1, 0}), 1.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 0}, std::vector<std::size_t>{0, 1}), 0.0);
  EXPECT_NEAR(rmse(std::vector<double>{0, 0}, std::vector<double>{3, 4}), std::sqrt(12.5), 1e-15);
  EXPECT_EQ(rmse(std::vector<double>{2}, std::vector<double>{5}), 3.0);
  EXPECT_EQ(rmse(std::vector<double>{1, 2}, std::vector<double>{1, 2}), 0.0);
  EXPECT_EQ(kind_of([] { accuracy({}, {}); }), ErrorKind::kArgument);
  EXPECT_EQ(kind_of([] { rmse({}, {}); }), ErrorKind::kArgument);
}

TEST(Variants, CountsAndProvenance) {
  const auto spike = generate_spike_dataset(10, 40, 3);
  const auto model = random_model(ModelKind::kMlp, Activation::kTanh, 40, 2, 1);
  MethodMaps maps{"saliency", {}};
  for (const auto& s : spike.dataset.samples()) {
    maps.maps.push_back(normalize(compute_attribution(model, s, MethodConfig::of(MethodId::kSaliency), 13)));
  }
  const std::vector<MethodMaps> methods{maps};
  const std::vector<StrategyConfig> strategies{{StrategyKind::kTopK}, {StrategyKind::kDynamicThreshold},
                                               {StrategyKind::kFixedThreshold}};
  std::vector<VerificationMethod> all;
  for (auto kind : all_verification_kinds()) {
    all.push_back(is_interval(kind) ? VerificationMethod::interval(kind, 1) : VerificationMethod::point(kind));
  }
  const auto variants = build_variants(spike.dataset, methods, strategies, all, 13);
  EXPECT_EQ(variants.size(), 84u);
  for (const auto& v : variants) {
    EXPECT_EQ(v.samples.size(), spike.dataset.size());
    EXPECT_FALSE(v.provenance.method.empty());
    EXPECT_FALSE(v.provenance.strategy.empty());
    EXPECT_FALSE(v.provenance.verification.empty());
    EXPECT_FALSE(v.provenance.variant.empty());
    for (const auto& s : v.samples) EXPECT_EQ(s.size(), 40u);
  }
  const std::vector<StrategyConfig> one_strategy{{StrategyKind::kTopK}};
  const std::vector<VerificationMethod> one{VerificationMethod::point(VerificationKind::kPointZero)};
  const auto small = build_variants(spike.dataset, methods, one_strategy, one, 13);
  ASSERT_EQ(small.size(), 4u);
  EXPECT_EQ(small[0].provenance.variant, "attribution");
  EXPECT_EQ(small[1].provenance.variant, "rand_matched");
  EXPECT_EQ(small[2].provenance.variant, "rand_plus10");
  EXPECT_EQ(small[3].provenance.variant, "rand_minus10");
  EXPECT_EQ(small[0].perturbed_points, 2 * spike.dataset.size());  // topk of 40 at 5%
  EXPECT_EQ(small[2].perturbed_points, 2 * spike.dataset.size());  // round(2.2)
}

TEST(Variants, MisalignedMapsRejected) {
  const auto spike = generate_spike_dataset(4, 16, 3);
  MethodMaps maps{"m", {}};
  for (const auto& s : spike.dataset.samples()) {
    AttributionMap m;
    m.sample_id = s.id;
    m.scores = Series(16, 0.0);
    m.normalized = true;
    maps.maps.push_back(m);
  }
  maps.maps.pop_back();
  const std::vector<MethodMaps> methods{maps};
  const std::vector<StrategyConfig> strategies{{StrategyKind::kTopK}};
  const std::vector<VerificationMethod> one{VerificationMethod::point(VerificationKind::kPointZero)};
  EXPECT_EQ(kind_of([&] { build_variants(spike.dataset, methods, strategies, one, 13); }), ErrorKind::kAlignment);
}

TEST(Variants, EmptySelectionCopiesSampleAndScoresZeroDelta) {
  const auto spike = generate_spike_dataset(8, 20, 3);
  MethodMaps maps{"flat", {}};
  for (const auto& s : spike.dataset.samples()) {
    AttributionMap m;
    m.sample_id = s.id;
    m.scores = Series(20, 0.0);
    maps.maps.push_back(normalize(m));
  }
  const std::vector<MethodMaps> methods{maps};
  const std::vector<StrategyConfig> strategies{{StrategyKind::kFixedThreshold}};
  const std::vector<VerificationMethod> one{VerificationMethod::interval(VerificationKind::kIntervalZero, 2)};
  const auto variants = build_variants(spike.dataset, methods, strategies, one, 13);
  ASSERT_EQ(variants.size(), 4u);
  for (const auto& v : variants) {
    EXPECT_EQ(v.perturbed_points, 0u);
    for (std::size_t i = 0; i < spike.dataset.size(); ++i) EXPECT_EQ(v.samples[i], spike.dataset[i].values);
  }
  const auto model = random_model(ModelKind::kMlp, Activation::kTanh, 20, 2, 1);
  const auto records = score_variants(model, spike.dataset, variants);
  ASSERT_EQ(records.size(), 5u);
  EXPECT_TRUE(records[0].provenance.is_baseline());
  for (const auto& r : records) {
    EXPECT_EQ(r.value, records[0].value);  // bit-exact baseline reproduction
    EXPECT_EQ(r.delta, 0.0);
  }
  const auto table = check_assumption(records);
  ASSERT_EQ(table.cells.size(), 1u);
  EXPECT_EQ(table.cells[0].status, CellStatus::kDegenerate);
}

TEST(Scoring, PositiveDeltaMeansDegradationForAccuracy) {
  const Dataset data = positive_dataset(4, 3);
  const FirstPoint model(Task::kClassification, 3);
  VariantDataset flipped;
  flipped.provenance = {"m", "topk", "point_inverse", "attribution"};
  for (std::size_t i = 0; i < 4; ++i) flipped.samples.push_back(i < 2 ? Series{-1, 1, 1} : Series{1, 1, 1});
  const std::vector<VariantDataset> variants{flipped};
  const auto records = score_variants(model, data, variants);
  EXPECT_EQ(records[0].value, 1.0);
  EXPECT_EQ(records[0].metric, Metric::kAccuracy);
  EXPECT_EQ(records[1].value, 0.5);
  EXPECT_EQ(records[1].delta, 0.5);
}

TEST(Scoring, PositiveDeltaMeansDegradationForRmse) {
  const Dataset data = make_windowed_regression(Series{2, 0, 2, 0, 2}, 2);  // targets 2, 0, 2
  const FirstPoint model(Task::kRegression, 2);                            // predicts x[0] = 2, 0, 2
  VariantDataset worse;
  worse.provenance = {"m", "topk", "point_zero", "attribution"};
  worse.samples = {Series{0, 0}, Series{0, 2}, Series{2, 0}};
  const std::vector<VariantDataset> variants{worse};
  const auto records = score_variants(model, data, variants);
  EXPECT_EQ(records[0].metric, Metric::kRmse);
  EXPECT_EQ(records[0].value, 0.0);
  EXPECT_NEAR(records[1].value, std::sqrt(4.0 / 3.0), 1e-15);
  EXPECT_GT(records[1].delta, 0.0);
  EXPECT_EQ(records[1].delta, records[1].value);
}

TEST(Scoring, EnsembleOfOneMatchesSingleAndMeanOfMany) {
  const auto spike = generate_spike_dataset(10, 16, 3);
  const auto a = random_model(ModelKind::kMlp, Activation::kTanh, 16, 2, 1);
  const auto b = random_model(ModelKind::kMlp, Activation::kTanh, 16, 2, 2);
  VariantDataset zeroed;
  zeroed.provenance = {"m", "topk", "point_zero", "attribution"};
  for (const auto& s : spike.dataset.samples()) zeroed.samples.push_back(Series(16, 0.0));
  const std::vector<VariantDataset> variants{zeroed};
  const Predictor* one[] = {&a};
  const auto single = score_variants(a, spike.dataset, variants);
  const auto ensemble = score_variants(std::span<const Predictor* const>(one), spike.dataset, variants);
  ASSERT_EQ(single.size(), ensemble.size());
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(single[i].value, ensemble[i].value);

  const Predictor* both[] = {&a, &b};
  const auto averaged = score_variants(std::span<const Predictor* const>(both), spike.dataset, variants);
  const auto only_b = score_variants(b, spike.dataset, variants);
  for (std::size_t i = 0; i < averaged.size(); ++i) {
    EXPECT_NEAR(averaged[i].value, (single[i].value + only_b[i].value) / 2.0, 1e-15);
  }
  EXPECT_EQ(averaged[0].model, "ensemble_mean:2");

  const std::vector<std::vector<ScoreRecord>> per_model{single};
  EXPECT_EQ(ensemble_mean(per_model)[1].value, single[1].value);
}

TEST(Assumption, Examples) {
  const std::vector<ScoreRecord> holds{baseline_record(0.95), record("m", "attribution", 0.70, 0.95),
                                       record("m", "rand_matched", 0.90, 0.95)};
  const auto t1 = check_assumption(holds);
  ASSERT_EQ(t1.cells.size(), 1u);
  EXPECT_TRUE(t1.cells[0].baseline_vs_random);
  EXPECT_TRUE(t1.cells[0].random_vs_attribution);
  EXPECT_EQ(t1.cells[0].status, CellStatus::kHolds);
  EXPECT_EQ(t1.holds, 1u);

  const std::vector<ScoreRecord> violated{baseline_record(0.95), record("m", "attribution", 0.90, 0.95),
                                          record("m", "rand_matched", 0.70, 0.95)};
  const auto t2 = check_assumption(violated);
  EXPECT_TRUE(t2.cells[0].baseline_vs_random);
  EXPECT_FALSE(t2.cells[0].random_vs_attribution);
  EXPECT_EQ(t2.cells[0].status, CellStatus::kViolated);

  const std::vector<ScoreRecord> tie{baseline_record(0.95), record("m", "attribution", 0.80, 0.95),
                                     record("m", "rand_matched", 0.80, 0.95)};
  const auto t3 = check_assumption(tie);
  EXPECT_EQ(t3.cells[0].status, CellStatus::kTie);
  EXPECT_EQ(t3.ties, 1u);
}

TEST(Assumption, RmseReversesInequalities) {
  std::vector<ScoreRecord> records{baseline_record(0.5), record("m", "attribution", 2.0, 0.5),
                                   record("m", "rand_matched", 1.0, 0.5)};
  for (auto& r : records) r.metric = Metric::kRmse;
  EXPECT_EQ(check_assumption(records).cells[0].status, CellStatus::kHolds);
}

TEST(Assumption, MissingRecordsAreIncompleteRun) {
  const std::vector<ScoreRecord> no_random{baseline_record(0.9), record("m", "attribution", 0.5, 0.9)};
  EXPECT_EQ(kind_of([&] { check_assumption(no_random); }), ErrorKind::kIncompleteRun);
  const std::vector<ScoreRecord> no_baseline{record("m", "attribution", 0.5, 0.9),
                                             record("m", "rand_matched", 0.5, 0.9)};
  EXPECT_EQ(kind_of([&] { check_assumption(no_baseline); }), ErrorKind::kIncompleteRun);
}

std::vector<ScoreRecord> records_for(const std::vector<std::pair<std::string, std::pair<double, double>>>& cells) {
  std::vector<ScoreRecord> out{baseline_record(1.0)};
  for (const auto& [method, values] : cells) {
    out.push_back(record(method, "attribution", 1.0 - values.first, 1.0));
    out.push_back(record(method, "rand_matched", 1.0 - values.second, 1.0));
  }
  return out;
}

TEST(Ranking, DegradationIsMeanDifference) {
  auto records = records_for({{"a", {0.5, 0.1}}, {"b", {0.2, 0.2}}, {"c", {0.3, 0.0}}});
  auto second = records_for({{"a", {0.1, 0.1}}});
  second[1].provenance.verification = second[2].provenance.verification = "interval_zero/r1";
  records.push_back(second[1]);
  records.push_back(second[2]);
  const auto ranking = rank_methods(records);
  ASSERT_EQ(ranking.size(), 3u);
  EXPECT_EQ(ranking[0].method, "c");
  EXPECT_NEAR(ranking[0].degradation, 0.3, 1e-12);
  EXPECT_EQ(ranking[1].method, "a");
  EXPECT_NEAR(ranking[1].degradation, 0.2, 1e-12);  // (0.4 + 0.0) / 2
  EXPECT_EQ(ranking[1].cells.size(), 2u);
  EXPECT_EQ(ranking[2].method, "b");
  EXPECT_NEAR(ranking[2].degradation, 0.0, 1e-12);
}

TEST(Ranking, TiesBrokenByAttributionDeltaThenName) {
  const auto ranking = rank_methods(records_for({{"z", {0.2, 0.1}}, {"y", {0.3, 0.2}}, {"x", {0.3, 0.2}}}));
  EXPECT_EQ(ranking[0].method, "x");
  EXPECT_EQ(ranking[1].method, "y");
  EXPECT_EQ(ranking[2].method, "z");
}

TEST(Ranking, ScaleInvariantOrder) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, std::pair<double, double>>> cells, scaled;
    const double c = std::pow(2.0, static_cast<double>(rng.below(8)) - 4.0);  // exact scaling
    for (int m = 0; m < 6; ++m) {
      const double attr = rng.uniform(-0.3, 0.3), rand = rng.uniform(-0.3, 0.3);
      cells.push_back({"m" + std::to_string(m), {attr, rand}});
      scaled.push_back({"m" + std::to_string(m), {attr * c, rand * c}});
    }
    const auto a = rank_methods(records_for(cells));
    const auto b = rank_methods(records_for(scaled));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i].method, b[i].method);
  }
}

TEST(Ranking, SingleMethodAndRandomLikeMethod) {
  EXPECT_EQ(rank_methods(records_for({{"only", {0.1, 0.0}}})).size(), 1u);

  // A method whose maps are themselves random scores lands near D = 0.
  const auto spike = generate_spike_dataset(200, 40, 3);
  const auto model = random_model(ModelKind::kMlp, Activation::kRelu, 40, 2, 9, 1.0, {16});
  MethodMaps rnd{"random", {}};
  for (std::size_t i = 0; i < spike.dataset.size(); ++i) {
    const auto& s = spike.dataset[i];
    rnd.maps.push_back(normalize(compute_attribution(model, s, MethodConfig::of(MethodId::kRandom), 13)));
  }
  const std::vector<MethodMaps> methods{rnd};
  const std::vector<StrategyConfig> strategies{{StrategyKind::kTopK, 0.25}};
  const std::vector<VerificationMethod> one{VerificationMethod::point(VerificationKind::kPointZero)};
  const auto records = score_variants(model, spike.dataset, build_variants(spike.dataset, methods, strategies, one, 13));
  const auto ranking = rank_methods(records);
  ASSERT_EQ(ranking.size(), 1u);
  EXPECT_LT(std::abs(ranking[0].degradation), 0.05);
}

TEST(Aggregate, UnweightedMeanOverDatasets) {
  const std::vector<std::vector<RankEntry>> per_dataset{
      {{"a", 0.4, 0.5, {}}, {"b", 0.1, 0.2, {}}},
      {{"b", 0.5, 0.6, {}}, {"a", 0.0, 0.1, {}}},
  };
  const auto total = aggregate_rankings(per_dataset);
  ASSERT_EQ(total.size(), 2u);
  EXPECT_EQ(total[0].method, "b");
  EXPECT_NEAR(total[0].degradation, 0.3, 1e-15);
  EXPECT_NEAR(total[1].degradation, 0.2, 1e-15);
}

}  // namespace
}  // namespace xaits
