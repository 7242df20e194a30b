#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rlab/numcore/tensor.hpp"

namespace rlab::data {

/// One synthetic domain. Class c always draws the same foreground shape;
/// the knobs only change how the domain looks.
struct DomainSpec {
  std::string name = "source";
  std::uint32_t class_count = 8;
  std::size_t images_per_class = 200;
  std::size_t image_size = 32;
  double palette_rotation_deg = 0.0;  // hue rotation about the grey axis
  std::uint32_t texture_family = 0;   // 0 smooth, 1 stripes, 2 blocks, 3 speckle
  bool channel_drop = false;          // keep luminance only
  bool invert = false;                // x -> 1 - x
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::uint32_t kTextureFamilies = 4;
inline constexpr std::uint32_t kShapeCount = 8;

struct ImageRecord {
  num::Tensor image;  // [3 x H x W], values in [0, 1], exactly representable as float
  std::uint32_t label = 0;
  std::string domain;
};

struct Dataset {
  std::uint32_t class_count = 0;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ImageRecord> records;

  std::size_t size() const { return records.size(); }
  /// Record indices of class c, in file order.
  std::vector<std::size_t> indices_of(std::uint32_t c) const;
  /// Stacks records into [batch x C x H x W].
  num::Tensor stack(std::span<const std::size_t> idx) const;
  std::vector<int> labels(std::span<const std::size_t> idx) const;
};

/// Renders one image of class `label` for `spec`; a pure function of
/// (spec, label, index).
num::Tensor render_image(const DomainSpec& spec, std::uint32_t label, std::size_t index);

Dataset generate_domain(const DomainSpec& spec);

/// Source domain plus three targets of increasing shift: palette rotation,
/// then an added texture swap, then added greyscale and inversion.
std::vector<DomainSpec> default_suite(std::uint64_t seed);

inline constexpr char kDatasetMagic[4] = {'R', 'L', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

/// Layout, little-endian: magic "RLDS" | version u32 | class_count u32 |
/// image count u64 | channels u32 | height u32 | width u32, then per image:
/// class u32 | domain name length u32 | name bytes | pixels as f32.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace rlab::data
