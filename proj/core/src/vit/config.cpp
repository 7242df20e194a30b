#include "rlab/vit/config.hpp"

#include <cmath>
#include <set>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/vit/config_json.hpp"

namespace rlab::vit {

std::string_view to_string(RegisterMode mode) {
  switch (mode) {
    case RegisterMode::none: return "none";
    case RegisterMode::learnable: return "learnable";
    case RegisterMode::random: return "random";
  }
  return "?";
}

std::string_view to_string(RegisterDepth depth) {
  return depth == RegisterDepth::shallow ? "shallow" : "deep";
}

RegisterMode parse_register_mode(std::string_view text) {
  if (text == "none") return RegisterMode::none;
  if (text == "learnable") return RegisterMode::learnable;
  if (text == "random") return RegisterMode::random;
  throw ConfigError("unknown register_mode \"" + std::string(text) +
                    "\" (expected none | learnable | random)");
}

RegisterDepth parse_register_depth(std::string_view text) {
  if (text == "shallow") return RegisterDepth::shallow;
  if (text == "deep") return RegisterDepth::deep;
  throw ConfigError("unknown register_depth \"" + std::string(text) +
                    "\" (expected shallow | deep)");
}

std::size_t ViTConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(dim)));
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("ViTConfig: " + msg); };
  if (image_size == 0 || patch_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (channels == 0) fail("channels must be positive");
  if (depth == 0) fail("depth must be at least 1");
  if (heads == 0 || dim == 0) fail("heads and dim must be positive");
  if (dim % heads != 0) {
    fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) fail("mlp_ratio must give a positive width");
  if (n_classes == 0) fail("n_classes must be positive");
  if (!(tau_init > 0.0) || !std::isfinite(tau_init)) fail("tau_init must be > 0");
}

void to_json(nlohmann::json& j, const ViTConfig& cfg) {
  j = nlohmann::json{{"image_size", cfg.image_size},
                     {"patch_size", cfg.patch_size},
                     {"channels", cfg.channels},
                     {"depth", cfg.depth},
                     {"heads", cfg.heads},
                     {"dim", cfg.dim},
                     {"mlp_ratio", cfg.mlp_ratio},
                     {"n_classes", cfg.n_classes},
                     {"register_mode", std::string(to_string(cfg.register_mode))},
                     {"register_depth", std::string(to_string(cfg.register_depth))},
                     {"register_count", cfg.register_count},
                     {"tau_init", cfg.tau_init},
                     {"split_tau", cfg.split_tau}};
}

void from_json(const nlohmann::json& j, ViTConfig& cfg) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  static const std::set<std::string> known = {
      "image_size", "patch_size",    "channels",       "depth",          "heads",
      "dim",        "mlp_ratio",     "n_classes",      "register_mode",  "register_depth",
      "register_count", "tau_init",  "split_tau"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("model: unknown key \"" + key + "\"");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("image_size", cfg.image_size);
    get("patch_size", cfg.patch_size);
    get("channels", cfg.channels);
    get("depth", cfg.depth);
    get("heads", cfg.heads);
    get("dim", cfg.dim);
    get("mlp_ratio", cfg.mlp_ratio);
    get("n_classes", cfg.n_classes);
    get("register_count", cfg.register_count);
    get("tau_init", cfg.tau_init);
    get("split_tau", cfg.split_tau);
    if (j.contains("register_mode")) {
      cfg.register_mode = parse_register_mode(j.at("register_mode").get<std::string>());
    }
    if (j.contains("register_depth")) {
      cfg.register_depth = parse_register_depth(j.at("register_depth").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

}  // namespace rlab::vit
