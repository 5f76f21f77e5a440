#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xaits/dataset.hpp"
#include "xaits/models.hpp"
#include "xaits/random.hpp"

namespace xaits::testing {

// Fresh, empty directory below the system temp dir, unique per name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("xaits-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Series random_series(Rng& rng, std::size_t len, double lo = -1.0, double hi = 1.0) {
  Series s(len);
  for (double& v : s) v = rng.uniform(lo, hi);
  return s;
}

// Untrained network with weights uniform in [-scale, scale].
inline BuiltinModel random_model(ModelKind kind, Activation activation, std::size_t input_len, std::size_t n_outputs,
                                 std::uint64_t seed, double scale = 0.5, std::vector<std::size_t> hidden = {8}) {
  TrainConfig config;
  config.kind = kind;
  config.activation = activation;
  config.hidden = std::move(hidden);
  config.seed = seed;
  BuiltinModel model = init_model(config, Task::kClassification, input_len, n_outputs);
  Rng rng(seed);
  for (double& p : model.parameters()) p = rng.uniform(-scale, scale);
  return model;
}

// Single-output linear "classifier" whose logit row 0 is w.x + b; a second
// output with zero weights makes it a two-class model.
inline BuiltinModel linear_model(const std::vector<double>& w, double b) {
  TrainConfig config;
  config.kind = ModelKind::kLinear;
  BuiltinModel model = init_model(config, Task::kClassification, w.size(), 2);
  auto p = model.parameters();
  std::fill(p.begin(), p.end(), 0.0);
  // Dense layout: W (out x in), then b.
  for (std::size_t i = 0; i < w.size(); ++i) p[i] = w[i];
  p[2 * w.size()] = b;
  return model;
}

}  // namespace xaits::testing
