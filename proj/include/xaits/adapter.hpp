#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaits/dataset.hpp"
#include "xaits/models.hpp"

namespace xaits {

inline constexpr int kAdapterProtocolVersion = 1;

struct AdapterOptions {
  std::vector<std::string> command;  // argv of the server process
  double timeout_s = 60.0;           // per frame
  std::size_t max_batch = 256;
};

struct CapabilityDescriptor {
  int protocol = kAdapterProtocolVersion;
  std::size_t n_outputs = 0;
  std::size_t input_len = 0;
  bool predict = false;
  bool gradient = false;
};

struct PredictResult {
  Matrix outputs;
  // Present when the server also reports pre-softmax logits.
  std::optional<Matrix> logits;
};

// Client end of the newline-delimited JSON protocol over a child process's
// stdin/stdout. One request in flight at a time; concurrent callers are
// serialized by an internal lock. Request ids strictly increase.
class AdapterEndpoint {
 public:
  explicit AdapterEndpoint(AdapterOptions options);
  ~AdapterEndpoint();
  AdapterEndpoint(const AdapterEndpoint&) = delete;
  AdapterEndpoint& operator=(const AdapterEndpoint&) = delete;

  CapabilityDescriptor handshake();
  const std::optional<CapabilityDescriptor>& descriptor() const { return descriptor_; }

  // `classification` enables the probability-simplex check on outputs.
  // Batches larger than max_batch are split into several frames.
  PredictResult predict_batch(const Matrix& batch, bool classification);
  Matrix gradient_batch(const Matrix& batch, std::size_t output_index);

  // Sends the shutdown frame and reaps the process; idempotent.
  void shutdown();

  std::uint64_t last_request_id() const { return next_id_ - 1; }

 private:
  class Process;

  nlohmann::json exchange(nlohmann::json frame, bool with_id);
  std::string provenance(const std::string& op) const;

  AdapterOptions options_;
  std::unique_ptr<Process> process_;
  std::optional<CapabilityDescriptor> descriptor_;
  std::uint64_t next_id_ = 1;
  std::mutex mutex_;
};

// Configuration error when the handshake disagrees with the dataset.
void validate_descriptor(const CapabilityDescriptor& descriptor, const Dataset& dataset);

// Predictor backed by an adapter endpoint. The explained score of a
// classifier is the server's logit when it reports one, otherwise the log
// probability.
class AdapterPredictor final : public Predictor {
 public:
  AdapterPredictor(std::unique_ptr<AdapterEndpoint> endpoint, Task task);

  Task task() const override { return task_; }
  std::size_t input_len() const override { return descriptor_.input_len; }
  std::size_t n_outputs() const override { return descriptor_.n_outputs; }
  bool has_input_gradient() const override { return descriptor_.gradient; }
  Matrix raw_outputs(const Matrix& batch) const override;
  Matrix input_gradients(const Matrix& batch, std::size_t output_index) const override;
  Matrix predict(const Matrix& batch) const override;

  AdapterEndpoint& endpoint() const { return *endpoint_; }

 private:
  std::unique_ptr<AdapterEndpoint> endpoint_;
  CapabilityDescriptor descriptor_;
  Task task_;
};

}  // namespace xaits
