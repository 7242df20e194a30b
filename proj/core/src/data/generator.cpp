#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "rlab/data/dataset.hpp"
#include "rlab/errors.hpp"
#include "rlab/numcore/rng.hpp"

namespace rlab::data {

namespace {

using Rgb = std::array<double, 3>;
constexpr double kPi = std::numbers::pi;

Rgb hsv_to_rgb(double hue_deg, double s, double v) {
  double h = std::fmod(hue_deg, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  Rgb rgb{};
  switch (static_cast<int>(h / 60.0)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch += m;
  return rgb;
}

// Membership of a point in local shape coordinates (shape radius 1).
bool inside(std::uint32_t shape, double u, double v) {
  const double au = std::fabs(u), av = std::fabs(v);
  const double r = std::sqrt(u * u + v * v);
  switch (shape) {
    case 0: return r < 1.0;                                    // disk
    case 1: return std::max(au, av) < 0.78;                    // square
    case 2: return v > -0.5 && v < 1.0 - 1.732 * au;           // triangle
    case 3: return (au < 0.3 && av < 1.0) || (av < 0.3 && au < 1.0);  // plus
    case 4: return r < 1.0 && r > 0.55;                        // ring
    case 5: return (u * u) + (v * v) / 0.16 < 1.0;             // bar
    case 6: return au + av < 1.0;                              // diamond
    case 7: {                                                  // two dots
      const double d1 = std::hypot(u - 0.55, v), d2 = std::hypot(u + 0.55, v);
      return d1 < 0.42 || d2 < 0.42;
    }
    default: return false;
  }
}

struct Texture {
  std::uint32_t family = 0;
  std::array<double, 9> p{};       // per-family parameters
  std::array<double, 16> cells{};  // block values

  double at(double x, double y) const {
    switch (family) {
      case 0: {
        double t = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double f = p[3 * k], th = p[3 * k + 1], ph = p[3 * k + 2];
          t += std::sin(2 * kPi * f * (x * std::cos(th) + y * std::sin(th)) + ph);
        }
        return 0.5 + t / 6.0;
      }
      case 1:
        return 0.5 + 0.5 * std::sin(2 * kPi * p[0] * (x * std::cos(p[1]) + y * std::sin(p[1])) +
                                    p[2]);
      case 2: {
        const auto cx = std::min<std::size_t>(3, static_cast<std::size_t>(x / 8.0));
        const auto cy = std::min<std::size_t>(3, static_cast<std::size_t>(y / 8.0));
        return cells[cy * 4 + cx];
      }
      default:
        return 0.5;  // speckle is drawn per pixel
    }
  }
};

}  // namespace

void DomainSpec::validate() const {
  if (class_count == 0 || class_count > kShapeCount) {
    throw ConfigError("domain " + name + ": class_count must lie in [1, " +
                      std::to_string(kShapeCount) + "]");
  }
  if (images_per_class == 0) throw ConfigError("domain " + name + ": images_per_class is 0");
  if (image_size < 8) throw ConfigError("domain " + name + ": image_size below 8");
  if (texture_family >= kTextureFamilies) {
    throw ConfigError("domain " + name + ": texture_family must be below " +
                      std::to_string(kTextureFamilies));
  }
  if (!std::isfinite(palette_rotation_deg)) {
    throw ConfigError("domain " + name + ": palette rotation is not finite");
  }
}

num::Tensor render_image(const DomainSpec& spec, std::uint32_t label, std::size_t index) {
  if (label >= kShapeCount) throw IndexError("render_image: label " + std::to_string(label));
  num::RngStream rng = num::RngStream(spec.seed, "domain/" + spec.name).derive("image", index);
  const std::size_t S = spec.image_size;
  const double scale = static_cast<double>(S) / 32.0;

  const Rgb fg = hsv_to_rgb(rng.uniform() * 60.0 + spec.palette_rotation_deg,
                            0.6 + 0.4 * rng.uniform(), 0.7 + 0.3 * rng.uniform());
  const Rgb bg = hsv_to_rgb(180.0 + rng.uniform() * 60.0 + spec.palette_rotation_deg,
                            0.3 + 0.3 * rng.uniform(), 0.3 + 0.3 * rng.uniform());

  Texture tex;
  tex.family = spec.texture_family;
  for (int k = 0; k < 3; ++k) {
    tex.p[3 * k] = (0.03 + 0.07 * rng.uniform()) / scale;
    tex.p[3 * k + 1] = rng.uniform() * kPi;
    tex.p[3 * k + 2] = rng.uniform() * 2 * kPi;
  }
  if (tex.family == 1) tex.p[0] = (0.12 + 0.15 * rng.uniform()) / scale;
  for (auto& c : tex.cells) c = rng.uniform();

  const double cx = 0.5 * S + (rng.uniform() - 0.5) * 10.0 * scale;
  const double cy = 0.5 * S + (rng.uniform() - 0.5) * 10.0 * scale;
  const double radius = (7.0 + 4.0 * rng.uniform()) * scale;
  const double angle = rng.uniform() * 2 * kPi;
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<double> px(3 * S * S);
  constexpr int kSuper = 3;
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double dx = (x + (sx + 0.5) / kSuper - cx) / radius;
          const double dy = (y + (sy + 0.5) / kSuper - cy) / radius;
          hits += inside(label, ca * dx + sa * dy, -sa * dx + ca * dy);
        }
      }
      const double alpha = hits / double(kSuper * kSuper);
      const double t = tex.family == 3 ? rng.uniform() : tex.at(double(x), double(y));
      for (std::size_t c = 0; c < 3; ++c) {
        const double back = bg[c] * (0.55 + 0.45 * t);
        double v = alpha * fg[c] + (1.0 - alpha) * back + 0.04 * rng.normal();
        px[(c * S + y) * S + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  for (std::size_t i = 0; i < S * S; ++i) {
    if (spec.channel_drop) {
      const double lum = 0.299 * px[i] + 0.587 * px[S * S + i] + 0.114 * px[2 * S * S + i];
      px[i] = px[S * S + i] = px[2 * S * S + i] = lum;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double& v = px[c * S * S + i];
      if (spec.invert) v = 1.0 - v;
      v = static_cast<double>(static_cast<float>(v));
    }
  }
  return num::Tensor({3, S, S}, std::move(px));
}

Dataset generate_domain(const DomainSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.class_count = spec.class_count;
  ds.height = ds.width = spec.image_size;
  ds.records.reserve(spec.class_count * spec.images_per_class);
  std::size_t index = 0;
  for (std::uint32_t c = 0; c < spec.class_count; ++c) {
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      ds.records.push_back({render_image(spec, c, index++), c, spec.name});
    }
  }
  return ds;
}

std::vector<DomainSpec> default_suite(std::uint64_t seed) {
  DomainSpec source;
  source.name = "source";
  source.seed = seed;

  DomainSpec palette = source;
  palette.name = "target_palette";
  palette.class_count = 5;
  palette.images_per_class = 40;
  palette.palette_rotation_deg = 60.0;

  DomainSpec texture = palette;
  texture.name = "target_texture";
  texture.texture_family = 1;

  DomainSpec gray = texture;
  gray.name = "target_gray";
  gray.channel_drop = true;
  gray.invert = true;
  return {source, palette, texture, gray};
}

}  // namespace rlab::data
