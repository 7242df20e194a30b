#pragma once

#include <nlohmann/json.hpp>

#include "rlab/vit/config.hpp"

namespace rlab::vit {

void to_json(nlohmann::json& j, const ViTConfig& cfg);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, ViTConfig& cfg);

}  // namespace rlab::vit
