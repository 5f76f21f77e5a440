#include "xaits/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "xaits/error.hpp"
#include "xaits/random.hpp"
#include "xaits/text.hpp"

namespace xaits {

namespace {

struct MethodName {
  MethodId id;
  std::string_view name;
};

constexpr MethodName kMethodNames[] = {
    {MethodId::kSaliency, "saliency"},
    {MethodId::kInputXGradient, "input_x_gradient"},
    {MethodId::kIntegratedGradients, "integrated_gradients"},
    {MethodId::kSmoothGrad, "smoothgrad"},
    {MethodId::kOcclusion, "occlusion"},
    {MethodId::kLime, "lime"},
    {MethodId::kShapleySampling, "shapley_sampling"},
    {MethodId::kOracle, "oracle"},
    {MethodId::kRandom, "random"},
    {MethodId::kExternal, "external"},
};

AttributionMap make_map(std::string method, std::size_t target, std::vector<double> scores) {
  for (double s : scores) {
    if (!std::isfinite(s)) fail(ErrorKind::kValidation, method + " produced a non-finite score");
  }
  AttributionMap map;
  map.method = std::move(method);
  map.target_output = target;
  map.scores = std::move(scores);
  return map;
}

std::vector<double> column(const Matrix& m, std::size_t c) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, c);
  return out;
}

std::vector<double> resolve_baseline(std::span<const double> sample, std::span<const double> baseline) {
  if (baseline.empty()) return std::vector<double>(sample.size(), 0.0);
  if (baseline.size() != sample.size()) fail(ErrorKind::kShape, "baseline length does not match sample");
  return {baseline.begin(), baseline.end()};
}

void require_gradient(const Predictor& model, std::string_view method) {
  if (!model.has_input_gradient()) {
    fail(ErrorKind::kCapability, std::string(method) + " needs input gradients, which the model does not provide");
  }
}

std::vector<double> mean_gradient(const Predictor& model, const Matrix& points, std::size_t target, bool absolute) {
  const Matrix grads = model.input_gradients(points, target);
  std::vector<double> acc(points.cols(), 0.0);
  for (std::size_t r = 0; r < grads.rows(); ++r) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += absolute ? std::abs(grads(r, i)) : grads(r, i);
  }
  for (double& a : acc) a /= static_cast<double>(grads.rows());
  return acc;
}

// Marginal contributions of one ordering, accumulated into `scores`.
void accumulate_ordering(const Predictor& model, std::span<const double> sample, std::span<const double> baseline,
                         std::span<const std::size_t> order, std::size_t target, std::span<double> scores) {
  const std::size_t len = sample.size();
  Matrix path(len + 1, len);
  std::copy(baseline.begin(), baseline.end(), path.row(0).begin());
  for (std::size_t j = 1; j <= len; ++j) {
    std::copy(path.row(j - 1).begin(), path.row(j - 1).end(), path.row(j).begin());
    path(j, order[j - 1]) = sample[order[j - 1]];
  }
  const auto f = column(model.raw_outputs(path), target);
  for (std::size_t j = 1; j <= len; ++j) scores[order[j - 1]] += f[j] - f[j - 1];
}

}  // namespace

std::string_view to_string(MethodId id) {
  for (const auto& entry : kMethodNames) {
    if (entry.id == id) return entry.name;
  }
  return "?";
}

MethodId parse_method_id(std::string_view text) {
  for (const auto& entry : kMethodNames) {
    if (entry.name == text) return entry.id;
  }
  std::string known;
  for (const auto& name : available_method_ids()) known += (known.empty() ? "" : ", ") + name;
  fail(ErrorKind::kConfig, "unknown method id '" + std::string(text) + "' (available: " + known + ")");
}

std::vector<std::string> available_method_ids() {
  std::vector<std::string> names;
  for (const auto& entry : kMethodNames) names.emplace_back(entry.name);
  return names;
}

bool needs_gradient(MethodId id) {
  return id == MethodId::kSaliency || id == MethodId::kInputXGradient || id == MethodId::kIntegratedGradients ||
         id == MethodId::kSmoothGrad;
}

MethodConfig MethodConfig::of(MethodId id) {
  MethodConfig config;
  config.id = id;
  return config;
}

std::string MethodConfig::effective_label() const {
  if (!label.empty()) return label;
  if (id == MethodId::kExternal) return "external:" + external_path.stem().string();
  return std::string(to_string(id));
}

void MethodConfig::validate() const {
  const auto bad = [&](const std::string& what) {
    fail(ErrorKind::kConfig, effective_label() + ": " + what);
  };
  if (ig_steps == 0) bad("steps must be positive");
  if (smoothgrad_samples == 0 || lime_samples == 0) bad("n_samples must be positive");
  if (!(sigma_fraction > 0.0 && sigma_fraction <= 1.0)) bad("sigma_fraction must lie in (0, 1]");
  if (lime_segments == 0) bad("segments must be positive");
  if (!(lime_kernel_width > 0.0)) bad("kernel_width must be positive");
  if (!(lime_ridge >= 0.0)) bad("ridge must be non-negative");
  if (permutations == 0) bad("permutations must be positive");
  if (id == MethodId::kExternal && external_path.empty()) bad("external methods need a path");
}

AttributionMap saliency(const Predictor& model, std::span<const double> sample) {
  require_gradient(model, "saliency");
  const std::size_t target = model.explained_output(sample);
  auto grad = model.input_gradient(sample, target);
  for (double& g : grad) g = std::abs(g);
  return make_map("saliency", target, std::move(grad));
}

AttributionMap input_x_gradient(const Predictor& model, std::span<const double> sample) {
  require_gradient(model, "input_x_gradient");
  const std::size_t target = model.explained_output(sample);
  auto grad = model.input_gradient(sample, target);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= sample[i];
  return make_map("input_x_gradient", target, std::move(grad));
}

AttributionMap integrated_gradients(const Predictor& model, std::span<const double> sample, std::size_t steps,
                                    std::span<const double> baseline, IgScheme scheme) {
  require_gradient(model, "integrated_gradients");
  if (steps == 0) fail(ErrorKind::kArgument, "integrated_gradients needs steps >= 1");
  const auto base = resolve_baseline(sample, baseline);
  const std::size_t target = model.explained_output(sample);
  const std::size_t len = sample.size();
  Matrix points(steps, len);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < len; ++i) points(k - 1, i) = base[i] + alpha * (sample[i] - base[i]);
  }
  auto scores = mean_gradient(model, points, target, false);
  if (scheme == IgScheme::kTrapezoid) {
    // Shift half of the weight at x onto the baseline.
    const auto at_x = model.input_gradient(sample, target);
    const auto at_base = model.input_gradient(base, target);
    const double half = 0.5 / static_cast<double>(steps);
    for (std::size_t i = 0; i < len; ++i) scores[i] += half * (at_base[i] - at_x[i]);
  }
  for (std::size_t i = 0; i < len; ++i) scores[i] *= sample[i] - base[i];
  return make_map("integrated_gradients", target, std::move(scores));
}

AttributionMap smoothgrad(const Predictor& model, std::span<const double> sample, std::size_t n_samples,
                          double sigma_fraction, std::uint64_t seed) {
  require_gradient(model, "smoothgrad");
  if (n_samples == 0) fail(ErrorKind::kArgument, "smoothgrad needs n_samples >= 1");
  const auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
  const double sigma = sigma_fraction * (*hi - *lo);
  if (sigma == 0.0) {
    auto map = saliency(model, sample);
    map.method = "smoothgrad";
    return map;
  }
  const std::size_t target = model.explained_output(sample);
  Rng rng(seed);
  Matrix noisy(n_samples, sample.size());
  for (std::size_t r = 0; r < n_samples; ++r) {
    for (std::size_t i = 0; i < sample.size(); ++i) noisy(r, i) = sample[i] + sigma * rng.normal();
  }
  return make_map("smoothgrad", target, mean_gradient(model, noisy, target, true));
}

AttributionMap occlusion(const Predictor& model, std::span<const double> sample, std::size_t window,
                         Replacement replacement) {
  const std::size_t len = sample.size();
  if (window == 0) {
    window = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(len) + 0.5)));
  }
  window = std::min(window, len);
  const std::size_t target = model.explained_output(sample);
  const double fill = replacement == Replacement::kZero ? 0.0 : mean(sample);
  const std::size_t placements = len - window + 1;

  Matrix batch(placements + 1, len);
  std::copy(sample.begin(), sample.end(), batch.row(0).begin());
  for (std::size_t p = 0; p < placements; ++p) {
    auto row = batch.row(p + 1);
    std::copy(sample.begin(), sample.end(), row.begin());
    std::fill(row.begin() + static_cast<std::ptrdiff_t>(p), row.begin() + static_cast<std::ptrdiff_t>(p + window),
              fill);
  }
  const auto f = column(model.raw_outputs(batch), target);

  std::vector<double> scores(len, 0.0);
  std::vector<std::size_t> covered(len, 0);
  for (std::size_t p = 0; p < placements; ++p) {
    const double drop = f[0] - f[p + 1];
    for (std::size_t i = p; i < p + window; ++i) {
      scores[i] += drop;
      ++covered[i];
    }
  }
  for (std::size_t i = 0; i < len; ++i) scores[i] /= static_cast<double>(covered[i]);
  return make_map("occlusion", target, std::move(scores));
}

AttributionMap lime_surrogate(const Predictor& model, std::span<const double> sample, const LimeParams& params,
                              std::uint64_t seed) {
  const std::size_t len = sample.size();
  const std::size_t segments = std::min(std::max<std::size_t>(params.segments, 1), len);
  if (params.n_samples == 0) fail(ErrorKind::kArgument, "lime needs n_samples >= 1");
  const std::size_t target = model.explained_output(sample);
  const double fill = mean(sample);

  std::vector<std::size_t> bounds(segments + 1);
  for (std::size_t j = 0; j <= segments; ++j) bounds[j] = j * len / segments;

  Rng rng(seed);
  Eigen::MatrixXd design(params.n_samples, segments + 1);
  Matrix batch(params.n_samples, len);
  Eigen::VectorXd weights(params.n_samples);
  for (std::size_t r = 0; r < params.n_samples; ++r) {
    auto row = batch.row(r);
    std::copy(sample.begin(), sample.end(), row.begin());
    std::size_t kept = 0;
    design(static_cast<Eigen::Index>(r), 0) = 1.0;
    for (std::size_t j = 0; j < segments; ++j) {
      const bool keep = rng.bernoulli(0.5);
      design(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j + 1)) = keep ? 1.0 : 0.0;
      if (keep) {
        ++kept;
      } else {
        std::fill(row.begin() + static_cast<std::ptrdiff_t>(bounds[j]),
                  row.begin() + static_cast<std::ptrdiff_t>(bounds[j + 1]), fill);
      }
    }
    const double distance = 1.0 - static_cast<double>(kept) / static_cast<double>(segments);
    weights(static_cast<Eigen::Index>(r)) =
        std::exp(-(distance * distance) / (params.kernel_width * params.kernel_width));
  }
  const auto f = column(model.raw_outputs(batch), target);
  const Eigen::Map<const Eigen::VectorXd> response(f.data(), static_cast<Eigen::Index>(f.size()));

  // Weighted ridge; the intercept (column 0) is not penalized.
  Eigen::MatrixXd normal = design.transpose() * weights.asDiagonal() * design;
  for (std::size_t j = 1; j <= segments; ++j) {
    normal(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += params.ridge;
  }
  const Eigen::VectorXd rhs = design.transpose() * (weights.asDiagonal() * response);
  const Eigen::VectorXd coef = normal.ldlt().solve(rhs);

  std::vector<double> scores(len, 0.0);
  for (std::size_t j = 0; j < segments; ++j) {
    for (std::size_t i = bounds[j]; i < bounds[j + 1]; ++i) scores[i] = coef(static_cast<Eigen::Index>(j + 1));
  }
  return make_map("lime", target, std::move(scores));
}

AttributionMap shapley_sampling(const Predictor& model, std::span<const double> sample, std::size_t permutations,
                                std::span<const double> baseline, std::uint64_t seed) {
  if (permutations == 0) fail(ErrorKind::kArgument, "shapley_sampling needs permutations >= 1");
  const auto base = resolve_baseline(sample, baseline);
  const std::size_t target = model.explained_output(sample);
  std::vector<double> scores(sample.size(), 0.0);
  std::vector<std::size_t> order(sample.size());
  Rng rng(seed);
  for (std::size_t p = 0; p < permutations; ++p) {
    // Antithetic pairs: every odd draw is the reverse of the one before.
    if (p % 2 == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span(order));
    } else {
      std::reverse(order.begin(), order.end());
    }
    accumulate_ordering(model, sample, base, order, target, scores);
  }
  for (double& s : scores) s /= static_cast<double>(permutations);
  return make_map("shapley_sampling", target, std::move(scores));
}

AttributionMap shapley_exact(const Predictor& model, std::span<const double> sample, std::span<const double> baseline) {
  if (sample.size() > 9) fail(ErrorKind::kArgument, "exact Shapley enumeration is limited to 9 time points");
  const auto base = resolve_baseline(sample, baseline);
  const std::size_t target = model.explained_output(sample);
  std::vector<double> scores(sample.size(), 0.0);
  std::vector<std::size_t> order(sample.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t count = 0;
  do {
    accumulate_ordering(model, sample, base, order, target, scores);
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& s : scores) s /= static_cast<double>(count);
  return make_map("shapley_exact", target, std::move(scores));
}

AttributionMap oracle_attribution(std::span<const std::size_t> relevant, std::size_t series_len) {
  std::vector<double> scores(series_len, 0.0);
  for (std::size_t i : relevant) {
    if (i >= series_len) {
      fail(ErrorKind::kArgument, "oracle index " + std::to_string(i) + " out of range for length " +
                                     std::to_string(series_len));
    }
    scores[i] = 1.0;
  }
  return make_map("oracle", 0, std::move(scores));
}

AttributionMap random_attribution(std::size_t series_len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> scores(series_len);
  for (double& s : scores) s = rng.uniform();
  return make_map("random", 0, std::move(scores));
}

AttributionMap normalize(const AttributionMap& map) {
  AttributionMap out = map;
  out.normalized = true;
  out.degenerate = false;
  if (out.scores.empty()) return out;
  for (double& s : out.scores) s = std::abs(s);
  const auto [lo_it, hi_it] = std::minmax_element(out.scores.begin(), out.scores.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(out.scores.begin(), out.scores.end(), 0.0);
    out.degenerate = true;
    return out;
  }
  for (double& s : out.scores) s = (s - lo) / (hi - lo);
  return out;
}

AttributionMap compute_attribution(const Predictor& model, const TimeSeriesSample& sample,
                                   const MethodConfig& config, std::uint64_t seed, const IndexSet* ground_truth) {
  const std::string label = config.effective_label();
  const std::uint64_t stream = derive_seed(seed, "attribution", label, sample.id);
  const std::span<const double> x = sample.values;
  std::vector<double> baseline;
  if (config.baseline == BaselineKind::kSampleMean) baseline.assign(x.size(), mean(x));

  AttributionMap map;
  switch (config.id) {
    case MethodId::kSaliency: map = saliency(model, x); break;
    case MethodId::kInputXGradient: map = input_x_gradient(model, x); break;
    case MethodId::kIntegratedGradients: map = integrated_gradients(model, x, config.ig_steps, baseline, config.ig_scheme); break;
    case MethodId::kSmoothGrad:
      map = smoothgrad(model, x, config.smoothgrad_samples, config.sigma_fraction, stream);
      break;
    case MethodId::kOcclusion:
      map = occlusion(model, x, config.occlusion_window, config.occlusion_replacement);
      break;
    case MethodId::kLime:
      map = lime_surrogate(model, x,
                           {config.lime_segments, config.lime_samples, config.lime_kernel_width, config.lime_ridge},
                           stream);
      break;
    case MethodId::kShapleySampling: map = shapley_sampling(model, x, config.permutations, baseline, stream); break;
    case MethodId::kOracle:
      if (ground_truth == nullptr) fail(ErrorKind::kConfig, "oracle attribution needs ground-truth relevance");
      map = oracle_attribution(*ground_truth, x.size());
      map.target_output = model.explained_output(x);
      break;
    case MethodId::kRandom:
      map = random_attribution(x.size(), stream);
      map.target_output = model.explained_output(x);
      break;
    case MethodId::kExternal:
      fail(ErrorKind::kArgument, "external attributions are imported, not computed");
  }
  map.method = label;
  map.sample_id = sample.id;
  return map;
}

void write_attributions(std::span<const AttributionMap> maps, const std::filesystem::path& path) {
  const std::string method = maps.empty() ? "" : maps.front().method;
  const bool normalized = !maps.empty() && maps.front().normalized;
  const std::size_t len = maps.empty() ? 0 : maps.front().scores.size();
  std::string out = "# xaits-attributions method=" + method + " normalized=" + (normalized ? "1" : "0") +
                    " series_len=" + std::to_string(len) + " count=" + std::to_string(maps.size()) + "\n";
  for (const auto& map : maps) {
    out += std::to_string(map.sample_id);
    for (double s : map.scores) {
      out += ',';
      out += format_double(s);
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<AttributionMap> load_external_attributions(const std::filesystem::path& path, const Dataset& test_set,
                                                       const std::string& name) {
  const std::string text = read_file(path);
  std::string header_method;
  bool normalized = false;
  std::vector<AttributionMap> maps;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (line.front() == '#') {
      for (auto field : split(line.substr(1), ' ')) {
        const auto eq = field.find('=');
        if (eq == std::string_view::npos) continue;
        const auto key = field.substr(0, eq);
        const auto value = field.substr(eq + 1);
        if (key == "method") header_method = std::string(value);
        if (key == "normalized") normalized = value == "1";
      }
      continue;
    }
    const auto tokens = split(line, ',');
    const auto id = parse_double(tokens.front());
    if (!id || *id < 0 || *id != std::floor(*id)) fail(ErrorKind::kParse, where + ": bad sample id");
    AttributionMap map;
    map.sample_id = static_cast<std::size_t>(*id);
    map.normalized = normalized;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto value = parse_double(tokens[t]);
      if (!value) fail(ErrorKind::kParse, where + ": non-numeric score");
      if (!std::isfinite(*value)) fail(ErrorKind::kValidation, where + ": non-finite score");
      map.scores.push_back(*value);
    }
    if (map.scores.size() != test_set.series_len()) {
      fail(ErrorKind::kAlignment, where + ": " + std::to_string(map.scores.size()) + " scores, expected series_len " +
                                      std::to_string(test_set.series_len()));
    }
    maps.push_back(std::move(map));
  }
  if (maps.size() != test_set.size()) {
    fail(ErrorKind::kAlignment, path.string() + ": " + std::to_string(maps.size()) + " rows for " +
                                    std::to_string(test_set.size()) + " test samples");
  }
  std::string base = name.empty() ? header_method : name;
  if (base.empty()) base = path.stem().string();
  const std::string method = base.rfind("external:", 0) == 0 ? base : "external:" + base;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].sample_id != test_set[i].id) {
      fail(ErrorKind::kAlignment, path.string() + ": row " + std::to_string(i + 1) + " has sample id " +
                                      std::to_string(maps[i].sample_id) + ", expected " +
                                      std::to_string(test_set[i].id));
    }
    maps[i].method = method;
  }
  return maps;
}

}  // namespace xaits
