#include "rlab/numcore/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rlab/errors.hpp"

namespace rlab::num {

namespace le {

namespace {
template <typename U>
void put_uint(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_uint(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw TruncatedError(std::string("truncated file while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}
}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_uint(out, v); }
void put_f64(std::ostream& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }
void put_f32(std::ostream& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
std::uint32_t get_u32(std::istream& in, const char* what) { return get_uint<std::uint32_t>(in, what); }
std::uint64_t get_u64(std::istream& in, const char* what) { return get_uint<std::uint64_t>(in, what); }
double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(in, what));
}
float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_uint<std::uint32_t>(in, what));
}

void get_bytes(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw TruncatedError(std::string("truncated file while reading ") + what);
  }
}

}  // namespace le

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kCheckpointMagic, 4);
  le::put_u32(out, kCheckpointVersion);
  le::put_u64(out, tensors.size());
  for (const auto& nt : tensors) {
    le::put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    le::put_u32(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) le::put_u64(out, d);
  }
  for (const auto& nt : tensors) {
    for (double v : nt.tensor.data()) le::put_f64(out, v);
  }
  if (!out) throw IoError("write_tensors: stream write failed");
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  char magic[4];
  le::get_bytes(in, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("not a parameter file: expected magic \"RLAB\"");
  }
  const auto version = le::get_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw VersionError("parameter file version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  const auto count = le::get_u64(in, "tensor count");
  constexpr std::uint64_t kMaxTensors = 1u << 20;
  if (count > kMaxTensors) throw FormatError("implausible tensor count " + std::to_string(count));
  std::vector<std::pair<std::string, Shape>> records;
  records.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = le::get_u32(in, "tensor name length");
    if (name_len > 4096) throw FormatError("implausible tensor name length");
    std::string name(name_len, '\0');
    le::get_bytes(in, name.data(), name_len, "tensor name");
    const auto rank = le::get_u32(in, "tensor rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = le::get_u64(in, "tensor dims");
    records.emplace_back(std::move(name), std::move(shape));
  }
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (auto& [name, shape] : records) {
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = le::get_f64(in, "tensor data");
    out.push_back({name, Tensor(shape, std::move(values))});
  }
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensors(in);
}

}  // namespace rlab::num
