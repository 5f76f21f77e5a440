#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xaits/dataset.hpp"

namespace xaits {

// Dense row-major batch: one row per series or per output vector.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::span<const Series> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void softmax_inplace(std::span<double> logits);
std::size_t argmax(std::span<const double> values);

// Capability-described model handle. Built-in networks and adapter-backed
// external models implement the same contract, so every downstream stage is
// agnostic to where predictions come from.
//
// The "explained score" of a classifier is the pre-softmax logit; gradients are
// always taken of that logit, never of the probability.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual Task task() const = 0;
  virtual std::size_t input_len() const = 0;
  virtual std::size_t n_outputs() const = 0;
  virtual bool has_input_gradient() const = 0;

  // Logits (classification) or outputs (regression), one row per input row.
  virtual Matrix raw_outputs(const Matrix& batch) const = 0;

  // Gradient of raw output `output_index` w.r.t. every input, one row per
  // input row. Throws a capability error when unsupported.
  virtual Matrix input_gradients(const Matrix& batch, std::size_t output_index) const;

  // Probabilities (classification) or outputs (regression).
  virtual Matrix predict(const Matrix& batch) const;

  std::vector<double> raw_output(std::span<const double> series) const;
  std::vector<double> input_gradient(std::span<const double> series, std::size_t output_index) const;

  // Predicted class for classification, 0 for regression.
  std::size_t explained_output(std::span<const double> series) const;

 protected:
  void check_batch(const Matrix& batch) const;
};

enum class ModelKind { kLinear, kMlp, kCnn1d };
enum class Activation { kRelu, kTanh };

std::string_view to_string(ModelKind kind);
std::string_view to_string(Activation activation);
ModelKind parse_model_kind(std::string_view text);
Activation parse_activation(std::string_view text);

struct TrainConfig {
  ModelKind kind = ModelKind::kMlp;
  std::vector<std::size_t> hidden = {32};
  Activation activation = Activation::kRelu;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 13;
  std::size_t ensemble_size = 1;

  void validate() const;
};

inline constexpr std::size_t kCnnFilters = 8;
inline constexpr std::size_t kCnnKernel = 7;
inline constexpr double kInitBound = 0.05;

// Feed-forward network with a flat parameter vector. `linear` is a single
// dense layer; `mlp` stacks dense layers; `cnn1d` is conv(8, k=7, same) ->
// activation -> global average pooling -> dense.
class BuiltinModel final : public Predictor {
 public:
  BuiltinModel(TrainConfig config, Task task, std::size_t input_len, std::size_t n_outputs);

  Task task() const override { return task_; }
  std::size_t input_len() const override { return input_len_; }
  std::size_t n_outputs() const override { return n_outputs_; }
  bool has_input_gradient() const override { return true; }
  Matrix raw_outputs(const Matrix& batch) const override;
  Matrix input_gradients(const Matrix& batch, std::size_t output_index) const override;

  const TrainConfig& config() const { return config_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  // Loss of one sample plus accumulation of d(loss)/d(params) into `grad`.
  double loss_and_gradient(std::span<const double> series, const TimeSeriesSample& sample,
                           std::span<double> grad) const;

  // Smallest |pre-activation| over all hidden units for this input; relu
  // gradient checks are only meaningful away from the kinks.
  double min_abs_preactivation(std::span<const double> series) const;

 private:
  struct Dense {
    std::size_t in, out, w_offset, b_offset;
  };
  struct Trace;

  void forward(std::span<const double> x, Trace& trace) const;
  void backward(std::span<const double> x, const Trace& trace, std::span<const double> d_logits,
                std::span<double> d_params, std::span<double> d_input) const;
  double activate(double v) const;
  double activate_derivative(double pre) const;

  TrainConfig config_;
  Task task_;
  std::size_t input_len_;
  std::size_t n_outputs_;
  std::size_t conv_w_offset_ = 0;
  std::size_t conv_b_offset_ = 0;
  std::vector<Dense> layers_;
  std::vector<double> params_;
};

// Parameters drawn uniformly from [-0.05, 0.05] by a generator seeded from
// config.seed.
BuiltinModel init_model(const TrainConfig& config, Task task, std::size_t input_len, std::size_t n_outputs);

struct TrainingLog {
  std::vector<double> epoch_loss;  // mean loss per epoch
};

struct TrainedModel {
  BuiltinModel model;
  TrainingLog log;
};

// Mini-batch Adam (beta1 0.9, beta2 0.999, eps 1e-8) on cross-entropy or MSE
// for exactly config.epochs epochs; no early stopping.
TrainedModel train(BuiltinModel model, const Dataset& dataset, const TrainConfig& config);

// Ten (or one) models trained with seeds seed+0 .. seed+n-1.
std::vector<TrainedModel> train_ensemble(const Dataset& dataset, const TrainConfig& config);

void save_model(const BuiltinModel& model, const std::filesystem::path& path);
BuiltinModel load_model(const std::filesystem::path& path);

}  // namespace xaits
