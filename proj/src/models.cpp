#include "xaits/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "xaits/error.hpp"
#include "xaits/random.hpp"
#include "xaits/serialization.hpp"
#include "xaits/text.hpp"

namespace xaits {

Matrix Matrix::from_rows(std::span<const Series> rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) fail(ErrorKind::kShape, "ragged batch");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

void softmax_inplace(std::span<double> logits) {
  if (logits.empty()) return;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& z : logits) {
    z = std::exp(z - top);
    total += z;
  }
  for (double& z : logits) z /= total;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

void Predictor::check_batch(const Matrix& batch) const {
  if (batch.rows() > 0 && batch.cols() != input_len()) {
    fail(ErrorKind::kShape, "input length " + std::to_string(batch.cols()) + " does not match model input_len " +
                                std::to_string(input_len()));
  }
}

Matrix Predictor::input_gradients(const Matrix&, std::size_t) const {
  fail(ErrorKind::kCapability, "model does not provide input gradients");
}

Matrix Predictor::predict(const Matrix& batch) const {
  Matrix out = raw_outputs(batch);
  if (task() == Task::kClassification) {
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  }
  return out;
}

std::vector<double> Predictor::raw_output(std::span<const double> series) const {
  Matrix batch(1, series.size());
  std::copy(series.begin(), series.end(), batch.row(0).begin());
  const Matrix out = raw_outputs(batch);
  return {out.row(0).begin(), out.row(0).end()};
}

std::vector<double> Predictor::input_gradient(std::span<const double> series, std::size_t output_index) const {
  Matrix batch(1, series.size());
  std::copy(series.begin(), series.end(), batch.row(0).begin());
  const Matrix out = input_gradients(batch, output_index);
  return {out.row(0).begin(), out.row(0).end()};
}

std::size_t Predictor::explained_output(std::span<const double> series) const {
  if (task() == Task::kRegression) return 0;
  return argmax(raw_output(series));
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLinear: return "linear";
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kCnn1d: return "cnn1d";
  }
  return "?";
}

std::string_view to_string(Activation activation) {
  return activation == Activation::kRelu ? "relu" : "tanh";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "linear") return ModelKind::kLinear;
  if (text == "mlp") return ModelKind::kMlp;
  if (text == "cnn1d") return ModelKind::kCnn1d;
  fail(ErrorKind::kConfig, "unknown model kind '" + std::string(text) + "' (expected linear, mlp, cnn1d)");
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::kRelu;
  if (text == "tanh") return Activation::kTanh;
  fail(ErrorKind::kConfig, "unknown activation '" + std::string(text) + "' (expected relu, tanh)");
}

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorKind::kConfig, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::kConfig, "learning_rate must be > 0");
  }
  if (ensemble_size != 1 && ensemble_size != 10) fail(ErrorKind::kConfig, "ensemble size must be 1 or 10");
  if (kind == ModelKind::kMlp) {
    if (hidden.empty()) fail(ErrorKind::kConfig, "mlp needs at least one hidden layer");
    if (std::find(hidden.begin(), hidden.end(), 0u) != hidden.end()) {
      fail(ErrorKind::kConfig, "hidden layer sizes must be positive");
    }
  }
}

struct BuiltinModel::Trace {
  std::vector<double> conv_pre;        // filters x len
  std::vector<std::vector<double>> in;   // input to each dense layer
  std::vector<std::vector<double>> pre;  // pre-activation of each dense layer
};

BuiltinModel::BuiltinModel(TrainConfig config, Task task, std::size_t input_len, std::size_t n_outputs)
    : config_(std::move(config)), task_(task), input_len_(input_len), n_outputs_(n_outputs) {
  config_.validate();
  if (input_len_ == 0) fail(ErrorKind::kConfig, "input_len must be positive");
  if (n_outputs_ == 0) fail(ErrorKind::kConfig, "n_outputs must be positive");
  if (task_ == Task::kRegression && n_outputs_ != 1) fail(ErrorKind::kConfig, "regression models have one output");

  std::size_t offset = 0;
  std::vector<std::size_t> widths;
  switch (config_.kind) {
    case ModelKind::kLinear:
      widths = {input_len_, n_outputs_};
      break;
    case ModelKind::kMlp:
      widths.push_back(input_len_);
      widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
      widths.push_back(n_outputs_);
      break;
    case ModelKind::kCnn1d:
      conv_w_offset_ = offset;
      offset += kCnnFilters * kCnnKernel;
      conv_b_offset_ = offset;
      offset += kCnnFilters;
      widths = {kCnnFilters, n_outputs_};
      break;
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Dense layer{widths[l], widths[l + 1], offset, 0};
    offset += layer.in * layer.out;
    layer.b_offset = offset;
    offset += layer.out;
    layers_.push_back(layer);
  }
  params_.assign(offset, 0.0);
}

double BuiltinModel::activate(double v) const {
  return config_.activation == Activation::kRelu ? std::max(0.0, v) : std::tanh(v);
}

double BuiltinModel::activate_derivative(double pre) const {
  if (config_.activation == Activation::kRelu) return pre > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

void BuiltinModel::forward(std::span<const double> x, Trace& trace) const {
  std::vector<double> h;
  if (config_.kind == ModelKind::kCnn1d) {
    const std::size_t len = input_len_;
    const std::ptrdiff_t half = kCnnKernel / 2;
    trace.conv_pre.assign(kCnnFilters * len, 0.0);
    h.assign(kCnnFilters, 0.0);
    for (std::size_t f = 0; f < kCnnFilters; ++f) {
      const double* w = &params_[conv_w_offset_ + f * kCnnKernel];
      double pooled = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        double acc = params_[conv_b_offset_ + f];
        for (std::size_t k = 0; k < kCnnKernel; ++k) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + k) - half;
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) acc += w[k] * x[static_cast<std::size_t>(pos)];
        }
        trace.conv_pre[f * len + t] = acc;
        pooled += activate(acc);
      }
      h[f] = pooled / static_cast<double>(len);
    }
  } else {
    h.assign(x.begin(), x.end());
  }

  trace.in.resize(layers_.size());
  trace.pre.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Dense& layer = layers_[l];
    std::vector<double> pre(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = &params_[layer.w_offset + o * layer.in];
      double acc = params_[layer.b_offset + o];
      for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * h[i];
      pre[o] = acc;
    }
    trace.in[l] = std::move(h);
    const bool is_output = l + 1 == layers_.size();
    h.resize(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) h[o] = is_output ? pre[o] : activate(pre[o]);
    trace.pre[l] = std::move(pre);
  }
}

void BuiltinModel::backward(std::span<const double> x, const Trace& trace, std::span<const double> d_logits,
                            std::span<double> d_params, std::span<double> d_input) const {
  const bool want_params = !d_params.empty();
  std::vector<double> delta(d_logits.begin(), d_logits.end());  // d/d(pre) of current layer
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Dense& layer = layers_[l];
    const auto& in = trace.in[l];
    std::vector<double> d_in(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double g = delta[o];
      const double* w = &params_[layer.w_offset + o * layer.in];
      if (want_params) {
        double* dw = &d_params[layer.w_offset + o * layer.in];
        for (std::size_t i = 0; i < layer.in; ++i) dw[i] += g * in[i];
        d_params[layer.b_offset + o] += g;
      }
      for (std::size_t i = 0; i < layer.in; ++i) d_in[i] += w[i] * g;
    }
    if (l > 0) {
      const auto& prev_pre = trace.pre[l - 1];
      for (std::size_t i = 0; i < layer.in; ++i) d_in[i] *= activate_derivative(prev_pre[i]);
    }
    delta = std::move(d_in);
  }

  if (config_.kind != ModelKind::kCnn1d) {
    if (!d_input.empty()) std::copy(delta.begin(), delta.end(), d_input.begin());
    return;
  }

  // delta now holds d/d(pooled); back through pooling, activation, conv.
  const std::size_t len = input_len_;
  const std::ptrdiff_t half = kCnnKernel / 2;
  const double inv_len = 1.0 / static_cast<double>(len);
  for (std::size_t f = 0; f < kCnnFilters; ++f) {
    const double* w = &params_[conv_w_offset_ + f * kCnnKernel];
    for (std::size_t t = 0; t < len; ++t) {
      const double g = delta[f] * inv_len * activate_derivative(trace.conv_pre[f * len + t]);
      if (want_params) d_params[conv_b_offset_ + f] += g;
      for (std::size_t k = 0; k < kCnnKernel; ++k) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + k) - half;
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
        const auto p = static_cast<std::size_t>(pos);
        if (want_params) d_params[conv_w_offset_ + f * kCnnKernel + k] += g * x[p];
        if (!d_input.empty()) d_input[p] += g * w[k];
      }
    }
  }
}

Matrix BuiltinModel::raw_outputs(const Matrix& batch) const {
  check_batch(batch);
  Matrix out(batch.rows(), n_outputs_);
  Trace trace;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    forward(batch.row(r), trace);
    std::copy(trace.pre.back().begin(), trace.pre.back().end(), out.row(r).begin());
  }
  return out;
}

Matrix BuiltinModel::input_gradients(const Matrix& batch, std::size_t output_index) const {
  check_batch(batch);
  if (output_index >= n_outputs_) fail(ErrorKind::kArgument, "output_index out of range");
  Matrix out(batch.rows(), input_len_);
  std::vector<double> seed(n_outputs_, 0.0);
  seed[output_index] = 1.0;
  Trace trace;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    forward(batch.row(r), trace);
    backward(batch.row(r), trace, seed, {}, out.row(r));
  }
  return out;
}

double BuiltinModel::loss_and_gradient(std::span<const double> series, const TimeSeriesSample& sample,
                                       std::span<double> grad) const {
  Trace trace;
  forward(series, trace);
  std::vector<double> d_logits = trace.pre.back();
  double loss = 0.0;
  if (task_ == Task::kClassification) {
    const double top = *std::max_element(d_logits.begin(), d_logits.end());
    double total = 0.0;
    for (double z : d_logits) total += std::exp(z - top);
    loss = -(d_logits[sample.label] - top - std::log(total));
    softmax_inplace(d_logits);
    d_logits[sample.label] -= 1.0;
  } else {
    const double residual = d_logits[0] - sample.target;
    loss = residual * residual;
    d_logits[0] = 2.0 * residual;
  }
  backward(series, trace, d_logits, grad, {});
  return loss;
}

double BuiltinModel::min_abs_preactivation(std::span<const double> series) const {
  Trace trace;
  forward(series, trace);
  double smallest = std::numeric_limits<double>::infinity();
  for (double v : trace.conv_pre) smallest = std::min(smallest, std::abs(v));
  for (std::size_t l = 0; l + 1 < trace.pre.size(); ++l) {
    for (double v : trace.pre[l]) smallest = std::min(smallest, std::abs(v));
  }
  return smallest;
}

BuiltinModel init_model(const TrainConfig& config, Task task, std::size_t input_len, std::size_t n_outputs) {
  BuiltinModel model(config, task, input_len, n_outputs);
  Rng rng(derive_seed(config.seed, "init"));
  for (double& p : model.parameters()) p = rng.uniform(-kInitBound, kInitBound);
  return model;
}

namespace {

void check_compatible(const BuiltinModel& model, const Dataset& dataset) {
  if (model.task() != dataset.task()) fail(ErrorKind::kConfig, "model task does not match dataset task");
  if (model.input_len() != dataset.series_len()) {
    fail(ErrorKind::kConfig, "model input_len " + std::to_string(model.input_len()) +
                                 " does not match series_len " + std::to_string(dataset.series_len()));
  }
  const std::size_t expected = dataset.task() == Task::kClassification ? dataset.n_classes() : 1;
  if (model.n_outputs() != expected) {
    fail(ErrorKind::kConfig, "model has " + std::to_string(model.n_outputs()) + " outputs, dataset needs " +
                                 std::to_string(expected));
  }
}

}  // namespace

TrainedModel train(BuiltinModel model, const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  check_compatible(model, dataset);

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  const std::size_t n_params = model.parameter_count();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0), grad(n_params, 0.0);
  std::vector<std::size_t> order(dataset.size());
  Rng rng(derive_seed(config.seed, "shuffle"));
  TrainingLog log;
  double beta1_power = 1.0, beta2_power = 1.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& sample = dataset[order[i]];
        batch_loss += model.loss_and_gradient(sample.values, sample, grad);
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorKind::kDivergence, "non-finite training loss in epoch " + std::to_string(epoch + 1));
      }
      epoch_loss += batch_loss;
      const double scale = 1.0 / static_cast<double>(end - start);
      beta1_power *= kBeta1;
      beta2_power *= kBeta2;
      auto params = model.parameters();
      for (std::size_t p = 0; p < n_params; ++p) {
        const double g = grad[p] * scale;
        m[p] = kBeta1 * m[p] + (1.0 - kBeta1) * g;
        v[p] = kBeta2 * v[p] + (1.0 - kBeta2) * g * g;
        const double m_hat = m[p] / (1.0 - beta1_power);
        const double v_hat = v[p] / (1.0 - beta2_power);
        params[p] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + kEps);
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) {
      fail(ErrorKind::kDivergence, "non-finite training loss in epoch " + std::to_string(epoch + 1));
    }
    log.epoch_loss.push_back(epoch_loss);
  }
  return {std::move(model), std::move(log)};
}

std::vector<TrainedModel> train_ensemble(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  const std::size_t n_outputs = dataset.task() == Task::kClassification ? dataset.n_classes() : 1;
  std::vector<TrainedModel> models;
  models.reserve(config.ensemble_size);
  for (std::size_t k = 0; k < config.ensemble_size; ++k) {
    TrainConfig member = config;
    member.seed = config.seed + k;
    models.push_back(train(init_model(member, dataset.task(), dataset.series_len(), n_outputs), dataset, member));
  }
  return models;
}

namespace {
constexpr std::string_view kModelFormat = "xaits-model";
constexpr int kModelVersion = 1;
}  // namespace

void save_model(const BuiltinModel& model, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["format"] = kModelFormat;
  doc["version"] = kModelVersion;
  doc["task"] = to_string(model.task());
  doc["input_len"] = model.input_len();
  doc["n_outputs"] = model.n_outputs();
  doc["config"] = train_config_to_json(model.config());
  doc["parameters"] = std::vector<double>(model.parameters().begin(), model.parameters().end());
  write_file(path, doc.dump(1) + "\n");
}

BuiltinModel load_model(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kModelFormat) fail(ErrorKind::kFormat, path.string() + ": not a model file");
    if (doc.at("version").get<int>() != kModelVersion) {
      fail(ErrorKind::kVersionMismatch, path.string() + ": unsupported model file version");
    }
    const Task task = doc.at("task").get<std::string>() == "regression" ? Task::kRegression : Task::kClassification;
    BuiltinModel model(train_config_from_json(doc.at("config")), task, doc.at("input_len").get<std::size_t>(),
                       doc.at("n_outputs").get<std::size_t>());
    const auto params = doc.at("parameters").get<std::vector<double>>();
    if (params.size() != model.parameter_count()) fail(ErrorKind::kFormat, path.string() + ": parameter count mismatch");
    std::copy(params.begin(), params.end(), model.parameters().begin());
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

}  // namespace xaits
