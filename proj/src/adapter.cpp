#include "xaits/adapter.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

#include "xaits/error.hpp"

namespace xaits {

namespace {

using Clock = std::chrono::steady_clock;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

class AdapterEndpoint::Process {
 public:
  explicit Process(const std::vector<std::string>& command) {
    if (command.empty()) fail(ErrorKind::kConfig, "adapter command is empty");
    ignore_sigpipe();
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
      fail(ErrorKind::kTransport, std::string("pipe: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) fail(ErrorKind::kTransport, std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> argv;
      for (const auto& arg : command) argv.push_back(const_cast<char*>(arg.c_str()));
      argv.push_back(nullptr);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  ~Process() {
    close_input();
    if (read_fd_ >= 0) ::close(read_fd_);
    reap(std::chrono::milliseconds(2000));
  }

  void write_line(const std::string& line) {
    if (write_fd_ < 0) fail(ErrorKind::kTransport, "adapter input already closed");
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(write_fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::kTransport, std::string("adapter process is gone (write: ") + std::strerror(errno) + ")");
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  // nullopt on timeout; transport error on end of stream.
  std::optional<std::string> read_line(Clock::time_point deadline) {
    while (true) {
      const auto newline = buffer_.find('\n');
      if (newline != std::string::npos) {
        std::string line = buffer_.substr(0, newline);
        buffer_.erase(0, newline + 1);
        return line;
      }
      const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (remaining.count() <= 0) return std::nullopt;
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1 << 30)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::kTransport, std::string("poll: ") + std::strerror(errno));
      }
      if (ready == 0) return std::nullopt;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::kTransport, std::string("read: ") + std::strerror(errno));
      }
      if (n == 0) fail(ErrorKind::kTransport, "adapter process closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void close_input() {
    if (write_fd_ >= 0) {
      ::close(write_fd_);
      write_fd_ = -1;
    }
  }

  void reap(std::chrono::milliseconds grace) {
    if (pid_ <= 0) return;
    const auto deadline = Clock::now() + grace;
    while (Clock::now() < deadline) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
};

AdapterEndpoint::AdapterEndpoint(AdapterOptions options)
    : options_(std::move(options)), process_(std::make_unique<Process>(options_.command)) {
  if (options_.max_batch == 0) fail(ErrorKind::kConfig, "adapter max_batch must be positive");
  if (!(options_.timeout_s > 0.0)) fail(ErrorKind::kConfig, "adapter timeout must be positive");
}

AdapterEndpoint::~AdapterEndpoint() {
  try {
    shutdown();
  } catch (...) {
  }
}

std::string AdapterEndpoint::provenance(const std::string& op) const {
  std::string cmd;
  for (const auto& part : options_.command) cmd += (cmd.empty() ? "" : " ") + part;
  return "adapter '" + cmd + "' op=" + op;
}

nlohmann::json AdapterEndpoint::exchange(nlohmann::json frame, bool with_id) {
  if (!process_) fail(ErrorKind::kTransport, "adapter endpoint is shut down");
  const std::string op = frame.value("op", "?");
  const auto timeout = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(options_.timeout_s));
  std::vector<std::uint64_t> abandoned;

  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::uint64_t id = with_id ? next_id_++ : 0;
    if (with_id) frame["id"] = id;
    try {
      process_->write_line(frame.dump());
    } catch (const Error& e) {
      fail(e.kind(), provenance(op) + ": " + e.what());
    }
    const auto deadline = Clock::now() + timeout;
    while (true) {
      std::optional<std::string> line;
      try {
        line = process_->read_line(deadline);
      } catch (const Error& e) {
        fail(e.kind(), provenance(op) + " id=" + std::to_string(id) + ": " + e.what());
      }
      if (!line) break;  // timed out; retry once with a fresh id
      nlohmann::json reply;
      try {
        reply = nlohmann::json::parse(*line);
      } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::kMalformedFrame, provenance(op) + ": unparsable frame: " + line->substr(0, 200));
      }
      if (!reply.is_object()) fail(ErrorKind::kMalformedFrame, provenance(op) + ": frame is not a JSON object");
      if (with_id) {
        if (!reply.contains("id") || !reply["id"].is_number_unsigned()) {
          fail(ErrorKind::kProtocol, provenance(op) + ": response without a request id");
        }
        const auto reply_id = reply["id"].get<std::uint64_t>();
        if (std::find(abandoned.begin(), abandoned.end(), reply_id) != abandoned.end()) continue;
        if (reply_id != id) {
          fail(ErrorKind::kProtocol, provenance(op) + ": response id " + std::to_string(reply_id) +
                                         " does not match request id " + std::to_string(id));
        }
      }
      if (reply.contains("error")) {
        fail(ErrorKind::kProtocol, provenance(op) + ": server error: " + reply["error"].dump());
      }
      return reply;
    }
    abandoned.push_back(id);
  }
  fail(ErrorKind::kTimeout, provenance(op) + ": no response within " + std::to_string(options_.timeout_s) +
                                "s (after one retry)");
}

CapabilityDescriptor AdapterEndpoint::handshake() {
  std::lock_guard lock(mutex_);
  const auto reply = exchange({{"op", "info"}}, false);
  const auto malformed = [&](const std::string& what) {
    fail(ErrorKind::kMalformedFrame, provenance("info") + ": " + what);
  };
  if (!reply.contains("protocol") || !reply["protocol"].is_number_integer()) malformed("missing 'protocol'");
  CapabilityDescriptor d;
  d.protocol = reply["protocol"].get<int>();
  if (d.protocol != kAdapterProtocolVersion) {
    fail(ErrorKind::kVersionMismatch, provenance("info") + ": server speaks protocol " + std::to_string(d.protocol) +
                                          ", client speaks " + std::to_string(kAdapterProtocolVersion));
  }
  if (!reply.contains("n_outputs") || !reply["n_outputs"].is_number_unsigned()) malformed("missing 'n_outputs'");
  if (!reply.contains("input_len") || !reply["input_len"].is_number_unsigned()) malformed("missing 'input_len'");
  if (!reply.contains("capabilities") || !reply["capabilities"].is_array()) malformed("missing 'capabilities'");
  d.n_outputs = reply["n_outputs"].get<std::size_t>();
  d.input_len = reply["input_len"].get<std::size_t>();
  for (const auto& cap : reply["capabilities"]) {
    if (!cap.is_string()) malformed("capabilities must be strings");
    const auto name = cap.get<std::string>();
    if (name == "predict") {
      d.predict = true;
    } else if (name == "gradient") {
      d.gradient = true;
    } else {
      fail(ErrorKind::kProtocol, provenance("info") + ": unknown capability '" + name + "'");
    }
  }
  if (d.n_outputs == 0 || d.input_len == 0) malformed("n_outputs and input_len must be positive");
  descriptor_ = d;
  return d;
}

namespace {

Matrix to_json_checked(const nlohmann::json& rows, std::size_t expected_rows, std::size_t cols,
                       const std::string& where) {
  if (!rows.is_array()) fail(ErrorKind::kMalformedFrame, where + " is not an array");
  if (rows.size() != expected_rows) {
    fail(ErrorKind::kValidation, where + ": " + std::to_string(rows.size()) + " rows, expected " +
                                     std::to_string(expected_rows));
  }
  Matrix out(expected_rows, cols);
  for (std::size_t r = 0; r < expected_rows; ++r) {
    const auto& row = rows[r];
    if (!row.is_array()) fail(ErrorKind::kMalformedFrame, where + ": row is not an array");
    if (row.size() != cols) {
      fail(ErrorKind::kValidation, where + ": row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                                       " values, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) fail(ErrorKind::kValidation, where + ": non-numeric value");
      const double v = row[c].get<double>();
      if (!std::isfinite(v)) fail(ErrorKind::kValidation, where + ": non-finite value");
      out(r, c) = v;
    }
  }
  return out;
}

nlohmann::json rows_json(const Matrix& batch, std::size_t first, std::size_t count) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = first; r < first + count; ++r) {
    rows.push_back(std::vector<double>(batch.row(r).begin(), batch.row(r).end()));
  }
  return rows;
}

}  // namespace

PredictResult AdapterEndpoint::predict_batch(const Matrix& batch, bool classification) {
  std::lock_guard lock(mutex_);
  if (!descriptor_) fail(ErrorKind::kProtocol, "adapter used before handshake");
  if (!descriptor_->predict) fail(ErrorKind::kCapability, provenance("predict") + ": predict not offered");
  const std::size_t k = descriptor_->n_outputs;
  PredictResult result{Matrix(batch.rows(), k), std::nullopt};
  if (batch.rows() == 0) return result;
  if (batch.cols() != descriptor_->input_len) fail(ErrorKind::kShape, provenance("predict") + ": input length mismatch");

  bool all_logits = true;
  Matrix logits(batch.rows(), k);
  for (std::size_t first = 0; first < batch.rows(); first += options_.max_batch) {
    const std::size_t count = std::min(options_.max_batch, batch.rows() - first);
    const auto reply = exchange({{"op", "predict"}, {"inputs", rows_json(batch, first, count)}}, true);
    const auto where = provenance("predict") + " id=" + std::to_string(next_id_ - 1);
    if (!reply.contains("outputs")) fail(ErrorKind::kMalformedFrame, where + ": missing 'outputs'");
    const Matrix outputs = to_json_checked(reply["outputs"], count, k, where + " outputs");
    if (classification) {
      for (std::size_t r = 0; r < count; ++r) {
        double total = 0.0;
        for (double p : outputs.row(r)) {
          if (p < 0.0) fail(ErrorKind::kValidation, where + ": negative probability");
          total += p;
        }
        if (std::abs(total - 1.0) > 1e-6) fail(ErrorKind::kValidation, where + ": probabilities do not sum to 1");
      }
    }
    for (std::size_t r = 0; r < count; ++r) {
      std::copy(outputs.row(r).begin(), outputs.row(r).end(), result.outputs.row(first + r).begin());
    }
    if (reply.contains("logits")) {
      const Matrix chunk = to_json_checked(reply["logits"], count, k, where + " logits");
      for (std::size_t r = 0; r < count; ++r) {
        std::copy(chunk.row(r).begin(), chunk.row(r).end(), logits.row(first + r).begin());
      }
    } else {
      all_logits = false;
    }
  }
  if (all_logits) result.logits = std::move(logits);
  return result;
}

Matrix AdapterEndpoint::gradient_batch(const Matrix& batch, std::size_t output_index) {
  std::lock_guard lock(mutex_);
  if (!descriptor_) fail(ErrorKind::kProtocol, "adapter used before handshake");
  if (!descriptor_->gradient) fail(ErrorKind::kCapability, provenance("gradient") + ": gradient not offered");
  if (output_index >= descriptor_->n_outputs) fail(ErrorKind::kArgument, "output_index out of range");
  const std::size_t len = descriptor_->input_len;
  Matrix out(batch.rows(), len);
  if (batch.rows() == 0) return out;
  if (batch.cols() != len) fail(ErrorKind::kShape, provenance("gradient") + ": input length mismatch");
  for (std::size_t first = 0; first < batch.rows(); first += options_.max_batch) {
    const std::size_t count = std::min(options_.max_batch, batch.rows() - first);
    const auto reply = exchange(
        {{"op", "gradient"}, {"output_index", output_index}, {"inputs", rows_json(batch, first, count)}}, true);
    const auto where = provenance("gradient") + " id=" + std::to_string(next_id_ - 1);
    if (!reply.contains("gradients")) fail(ErrorKind::kMalformedFrame, where + ": missing 'gradients'");
    const Matrix chunk = to_json_checked(reply["gradients"], count, len, where + " gradients");
    for (std::size_t r = 0; r < count; ++r) {
      std::copy(chunk.row(r).begin(), chunk.row(r).end(), out.row(first + r).begin());
    }
  }
  return out;
}

void AdapterEndpoint::shutdown() {
  std::lock_guard lock(mutex_);
  if (!process_) return;
  try {
    process_->write_line(nlohmann::json{{"op", "shutdown"}}.dump());
  } catch (const Error&) {
  }
  process_->close_input();
  process_->reap(std::chrono::milliseconds(2000));
  process_.reset();
}

void validate_descriptor(const CapabilityDescriptor& descriptor, const Dataset& dataset) {
  if (descriptor.input_len != dataset.series_len()) {
    fail(ErrorKind::kConfig, "adapter input_len " + std::to_string(descriptor.input_len) +
                                 " does not match dataset series_len " + std::to_string(dataset.series_len()));
  }
  const std::size_t expected = dataset.task() == Task::kClassification ? dataset.n_classes() : 1;
  if (descriptor.n_outputs != expected) {
    fail(ErrorKind::kConfig, "adapter n_outputs " + std::to_string(descriptor.n_outputs) + " does not match the " +
                                 std::to_string(expected) + " the dataset needs");
  }
  if (!descriptor.predict) fail(ErrorKind::kConfig, "adapter does not offer predict");
}

AdapterPredictor::AdapterPredictor(std::unique_ptr<AdapterEndpoint> endpoint, Task task)
    : endpoint_(std::move(endpoint)), task_(task) {
  descriptor_ = endpoint_->descriptor() ? *endpoint_->descriptor() : endpoint_->handshake();
  if (task_ == Task::kRegression && descriptor_.n_outputs != 1) {
    fail(ErrorKind::kConfig, "regression adapters must declare one output");
  }
}

Matrix AdapterPredictor::raw_outputs(const Matrix& batch) const {
  check_batch(batch);
  auto result = endpoint_->predict_batch(batch, task_ == Task::kClassification);
  if (task_ == Task::kRegression) return std::move(result.outputs);
  if (result.logits) return std::move(*result.logits);
  Matrix out = std::move(result.outputs);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (double& p : out.row(r)) p = std::log(std::max(p, 1e-300));
  }
  return out;
}

Matrix AdapterPredictor::input_gradients(const Matrix& batch, std::size_t output_index) const {
  check_batch(batch);
  if (!descriptor_.gradient) fail(ErrorKind::kCapability, "adapter model does not provide input gradients");
  return endpoint_->gradient_batch(batch, output_index);
}

Matrix AdapterPredictor::predict(const Matrix& batch) const {
  check_batch(batch);
  return endpoint_->predict_batch(batch, task_ == Task::kClassification).outputs;
}

}  // namespace xaits
