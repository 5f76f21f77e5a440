#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "support.hpp"
#include "xaits/error.hpp"
#include "xaits/evaluation.hpp"
#include "xaits/models.hpp"
#include "xaits/serialization.hpp"
#include "xaits/text.hpp"

namespace xaits {
namespace {

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Central differences of raw output `c` w.r.t. every input.
std::vector<double> numeric_input_gradient(const Predictor& model, std::span<const double> x, std::size_t c,
                                           double h = 1e-5) {
  std::vector<double> g(x.size());
  Series probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = model.raw_output(probe)[c];
    probe[i] = x[i] - h;
    const double down = model.raw_output(probe)[c];
    probe[i] = x[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

struct Arch {
  ModelKind kind;
  std::vector<std::size_t> hidden;
};

class GradientCheck : public ::testing::TestWithParam<Arch> {};

TEST_P(GradientCheck, InputGradientsMatchFiniteDifferencesOnTanh) {
  const Arch arch = GetParam();
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 10 + rng.below(20);
    const auto model = testing::random_model(arch.kind, Activation::kTanh, len, 3, 100 + trial, 0.5, arch.hidden);
    const Series x = testing::random_series(rng, len);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto analytic = model.input_gradient(x, c);
      const auto numeric = numeric_input_gradient(model, x, c);
      for (std::size_t i = 0; i < len; ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST_P(GradientCheck, ParameterGradientsMatchFiniteDifferences) {
  const Arch arch = GetParam();
  Rng rng(5);
  for (auto activation : {Activation::kTanh, Activation::kRelu}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t len = 12;
      auto model = testing::random_model(arch.kind, activation, len, 2, 300 + trial, 0.5, arch.hidden);
      TimeSeriesSample sample;
      sample.values = testing::random_series(rng, len);
      sample.label = trial % 2;
      if (activation == Activation::kRelu && model.min_abs_preactivation(sample.values) < 1e-3) continue;

      std::vector<double> grad(model.parameter_count(), 0.0);
      model.loss_and_gradient(sample.values, sample, grad);
      std::vector<double> scratch(model.parameter_count());
      auto params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        const double saved = params[p];
        params[p] = saved + 1e-6;
        const double up = model.loss_and_gradient(sample.values, sample, scratch);
        params[p] = saved - 1e-6;
        const double down = model.loss_and_gradient(sample.values, sample, scratch);
        params[p] = saved;
        const double numeric = (up - down) / 2e-6;
        EXPECT_LE(relative_error(grad[p], numeric), 1e-4) << "param " << p;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Architectures, GradientCheck,
                         ::testing::Values(Arch{ModelKind::kLinear, {}}, Arch{ModelKind::kMlp, {8}},
                                           Arch{ModelKind::kMlp, {6, 5}}, Arch{ModelKind::kCnn1d, {}}),
                         [](const auto& info) {
                           return std::string(to_string(info.param.kind)) + std::to_string(info.param.hidden.size());
                         });

TEST(Regression, ParameterGradientOfSquaredResidual) {
  TrainConfig config;
  config.activation = Activation::kTanh;
  config.hidden = {5};
  auto model = init_model(config, Task::kRegression, 6, 1);
  Rng rng(2);
  for (double& p : model.parameters()) p = rng.uniform(-0.5, 0.5);
  TimeSeriesSample sample;
  sample.values = testing::random_series(rng, 6);
  sample.target = 0.7;
  std::vector<double> grad(model.parameter_count(), 0.0), scratch(model.parameter_count());
  const double loss = model.loss_and_gradient(sample.values, sample, grad);
  const double out = model.raw_output(sample.values)[0];
  EXPECT_NEAR(loss, (out - 0.7) * (out - 0.7), 1e-12);
  auto params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double saved = params[p];
    params[p] = saved + 1e-6;
    const double up = model.loss_and_gradient(sample.values, sample, scratch);
    params[p] = saved - 1e-6;
    const double down = model.loss_and_gradient(sample.values, sample, scratch);
    params[p] = saved;
    EXPECT_LE(relative_error(grad[p], (up - down) / 2e-6), 1e-4);
  }
}

TEST(Init, DeterministicAndBounded) {
  TrainConfig config;
  const auto a = init_model(config, Task::kClassification, 20, 2);
  const auto b = init_model(config, Task::kClassification, 20, 2);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  for (double p : a.parameters()) {
    EXPECT_GE(p, -kInitBound);
    EXPECT_LE(p, kInitBound);
  }
  config.seed = 14;
  const auto c = init_model(config, Task::kClassification, 20, 2);
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
}

TEST(Init, ParameterCounts) {
  TrainConfig config;
  config.kind = ModelKind::kLinear;
  EXPECT_EQ(init_model(config, Task::kClassification, 10, 3).parameter_count(), 33u);
  config.kind = ModelKind::kMlp;
  config.hidden = {4, 5};
  EXPECT_EQ(init_model(config, Task::kClassification, 10, 3).parameter_count(), 44u + 25u + 18u);
  config.kind = ModelKind::kCnn1d;
  EXPECT_EQ(init_model(config, Task::kClassification, 10, 3).parameter_count(),
            kCnnFilters * kCnnKernel + kCnnFilters + kCnnFilters * 3 + 3);
}

TEST(Config, RejectsInvalidValues) {
  TrainConfig config;
  config.epochs = 0;
  EXPECT_THROW(config.validate(), Error);
  config = {};
  config.ensemble_size = 3;
  EXPECT_THROW(config.validate(), Error);
  config = {};
  config.learning_rate = -1;
  EXPECT_THROW(config.validate(), Error);
  try {
    parse_model_kind("lstm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochs", 0}}), Error);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig config;
  config.kind = ModelKind::kCnn1d;
  config.activation = Activation::kTanh;
  config.hidden = {7, 3};
  config.epochs = 3;
  config.batch_size = 5;
  config.learning_rate = 0.0123;
  config.seed = 99;
  config.ensemble_size = 10;
  EXPECT_EQ(train_config_to_json(train_config_from_json(train_config_to_json(config))), train_config_to_json(config));
}

TEST(Training, SpikeMlpGeneralizes) {
  const auto spike = generate_spike_dataset(200, 100, 13);
  const auto split = train_test_split(spike.dataset, 0.5, 13);
  const Dataset train_set = spike.dataset.subset(split.train, "train");
  const Dataset test_set = spike.dataset.subset(split.test, "test");
  TrainConfig config;
  auto trained = train(init_model(config, Task::kClassification, 100, 2), train_set, config);
  ASSERT_EQ(trained.log.epoch_loss.size(), config.epochs);
  EXPECT_LT(trained.log.epoch_loss.back(), trained.log.epoch_loss.front());
  std::vector<Series> rows;
  for (const auto& s : test_set.samples()) rows.push_back(s.values);
  EXPECT_GE(metric_value(trained.model, test_set, rows), 0.95);
}

TEST(Training, BitIdenticalReruns) {
  const auto spike = generate_spike_dataset(40, 32, 3);
  TrainConfig config;
  config.epochs = 5;
  const auto a = train(init_model(config, Task::kClassification, 32, 2), spike.dataset, config);
  const auto b = train(init_model(config, Task::kClassification, 32, 2), spike.dataset, config);
  EXPECT_TRUE(std::equal(a.model.parameters().begin(), a.model.parameters().end(), b.model.parameters().begin()));
  EXPECT_EQ(a.log.epoch_loss, b.log.epoch_loss);
}

TEST(Training, DivergenceNamesEpoch) {
  std::vector<TimeSeriesSample> samples(4);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].values = {1e200, -1e200, 1e200};
    samples[i].target = 1.0;
    samples[i].id = i;
  }
  const Dataset d("huge", Task::kRegression, 0, samples);
  TrainConfig config;
  config.epochs = 3;
  try {
    train(init_model(config, Task::kRegression, 3, 1), d, config);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(Training, DimensionMismatchIsConfigError) {
  const auto spike = generate_spike_dataset(10, 16, 3);
  TrainConfig config;
  try {
    train(init_model(config, Task::kClassification, 15, 2), spike.dataset, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Training, RegressionReducesError) {
  Series series(300);
  for (std::size_t i = 0; i < series.size(); ++i) series[i] = std::sin(0.2 * static_cast<double>(i));
  const Dataset d = make_windowed_regression(series, 10);
  TrainConfig config;
  config.epochs = 30;
  config.learning_rate = 0.01;
  auto model = init_model(config, Task::kRegression, 10, 1);
  std::vector<Series> rows;
  for (const auto& s : d.samples()) rows.push_back(s.values);
  const double before = metric_value(model, d, rows);
  const auto trained = train(model, d, config);
  EXPECT_LT(metric_value(trained.model, d, rows), 0.25 * before);
}

TEST(Ensemble, SeedsOffsetPerMember) {
  const auto spike = generate_spike_dataset(20, 16, 3);
  TrainConfig config;
  config.epochs = 2;
  config.ensemble_size = 10;
  const auto members = train_ensemble(spike.dataset, config);
  ASSERT_EQ(members.size(), 10u);
  for (std::size_t k = 0; k < members.size(); ++k) EXPECT_EQ(members[k].model.config().seed, config.seed + k);
  EXPECT_FALSE(std::equal(members[0].model.parameters().begin(), members[0].model.parameters().end(),
                          members[1].model.parameters().begin()));

  config.ensemble_size = 1;
  const auto single = train_ensemble(spike.dataset, config);
  const auto direct = train(init_model(config, Task::kClassification, 16, 2), spike.dataset, config);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_TRUE(std::equal(single[0].model.parameters().begin(), single[0].model.parameters().end(),
                         direct.model.parameters().begin()));
}

TEST(Persistence, SaveLoadReproducesOutputs) {
  const auto dir = testing::scratch_dir("model-io");
  for (auto kind : {ModelKind::kLinear, ModelKind::kMlp, ModelKind::kCnn1d}) {
    const auto model = testing::random_model(kind, Activation::kTanh, 14, 3, 8);
    save_model(model, dir / "m.json");
    const auto back = load_model(dir / "m.json");
    EXPECT_EQ(back.config().kind, kind);
    EXPECT_TRUE(std::equal(model.parameters().begin(), model.parameters().end(), back.parameters().begin()));
    Rng rng(1);
    const Series x = testing::random_series(rng, 14);
    EXPECT_EQ(model.raw_output(x), back.raw_output(x));
  }
  write_file(dir / "bad.json", "{\"format\":\"something-else\"}");
  EXPECT_THROW(load_model(dir / "bad.json"), Error);
}

TEST(Predictor, ShapeMismatchRejected) {
  const auto model = testing::random_model(ModelKind::kMlp, Activation::kRelu, 8, 2, 1);
  try {
    model.raw_outputs(Matrix(2, 7));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(Predictor, ProbabilitiesAreSoftmaxOfLogits) {
  const auto model = testing::random_model(ModelKind::kMlp, Activation::kTanh, 8, 3, 4);
  Rng rng(3);
  const Series x = testing::random_series(rng, 8);
  const auto logits = model.raw_output(x);
  const Matrix p = model.predict(Matrix::from_rows(std::vector<Series>{x}));
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p(0, c), std::exp(logits[c]) / z, 1e-15);
  EXPECT_EQ(model.explained_output(x), argmax(logits));
}

}  // namespace
}  // namespace xaits
