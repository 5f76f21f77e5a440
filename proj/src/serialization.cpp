#include "xaits/serialization.hpp"

#include "xaits/error.hpp"

namespace xaits {

nlohmann::json train_config_to_json(const TrainConfig& config) {
  return {
      {"kind", to_string(config.kind)},
      {"hidden", config.hidden},
      {"activation", to_string(config.activation)},
      {"epochs", config.epochs},
      {"batch_size", config.batch_size},
      {"learning_rate", config.learning_rate},
      {"seed", config.seed},
      {"ensemble", config.ensemble_size},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  TrainConfig config;
  try {
    if (!doc.is_object()) fail(ErrorKind::kConfig, "model config must be an object");
    if (doc.contains("kind")) config.kind = parse_model_kind(doc.at("kind").get<std::string>());
    if (doc.contains("hidden")) config.hidden = doc.at("hidden").get<std::vector<std::size_t>>();
    if (doc.contains("activation")) config.activation = parse_activation(doc.at("activation").get<std::string>());
    if (doc.contains("epochs")) {
      const auto epochs = doc.at("epochs").get<long long>();
      if (epochs < 1) fail(ErrorKind::kConfig, "epochs must be >= 1");
      config.epochs = static_cast<std::size_t>(epochs);
    }
    if (doc.contains("batch_size")) config.batch_size = doc.at("batch_size").get<std::size_t>();
    if (doc.contains("learning_rate")) config.learning_rate = doc.at("learning_rate").get<double>();
    if (doc.contains("seed")) config.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("ensemble")) config.ensemble_size = doc.at("ensemble").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("model config: ") + e.what());
  }
  config.validate();
  return config;
}

}  // namespace xaits
