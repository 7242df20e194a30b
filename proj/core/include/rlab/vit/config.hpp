#pragma once

#include <cstddef>
#include <string_view>

namespace rlab::vit {

enum class RegisterMode { none, learnable, random };
enum class RegisterDepth { shallow, deep };

std::string_view to_string(RegisterMode mode);
std::string_view to_string(RegisterDepth depth);
RegisterMode parse_register_mode(std::string_view text);
RegisterDepth parse_register_depth(std::string_view text);

// Defaults are the desk-scale model: 32x32 RGB, 8x8 patches (16 tokens),
// 4 blocks of width 64 with 4 heads.
struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t dim = 64;
  double mlp_ratio = 2.0;
  std::size_t n_classes = 8;
  RegisterMode register_mode = RegisterMode::none;
  RegisterDepth register_depth = RegisterDepth::shallow;
  std::size_t register_count = 16;
  double tau_init = 0.1;
  // Separate noise scale for replaced image slots (REAP); shared by default.
  bool split_tau = false;

  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t mlp_hidden() const;
};

}  // namespace rlab::vit
