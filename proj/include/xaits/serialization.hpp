#pragma once

#include <json.hpp>

#include "xaits/models.hpp"

namespace xaits {

nlohmann::json train_config_to_json(const TrainConfig& config);

// Missing keys keep their defaults; unknown model kinds or activations are
// config errors.
TrainConfig train_config_from_json(const nlohmann::json& doc);

}  // namespace xaits
