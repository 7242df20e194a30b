#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rlab/numcore/tensor.hpp"

namespace rlab::num {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr char kCheckpointMagic[4] = {'R', 'L', 'A', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Parameter file layout, all integers and floats little-endian:
///
///   magic "RLAB" | version u32 | tensor count u64          (16 bytes)
///   per tensor:  name length u32 | name bytes | rank u32 | dims u64 x rank
///   flat data:   every tensor's values as f64, in record order
void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// Little-endian primitives shared with the dataset format.
namespace le {
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(std::istream& in, const char* what);
std::uint64_t get_u64(std::istream& in, const char* what);
double get_f64(std::istream& in, const char* what);
float get_f32(std::istream& in, const char* what);
void get_bytes(std::istream& in, char* dst, std::size_t n, const char* what);
}  // namespace le

}  // namespace rlab::num
