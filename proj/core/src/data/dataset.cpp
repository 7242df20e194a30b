#include "rlab/data/dataset.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <string>

#include "rlab/errors.hpp"
#include "rlab/numcore/serialize.hpp"

namespace rlab::data {

namespace le = num::le;

std::vector<std::size_t> Dataset::indices_of(std::uint32_t c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].label == c) out.push_back(i);
  }
  return out;
}

num::Tensor Dataset::stack(std::span<const std::size_t> idx) const {
  const std::size_t per = channels * height * width;
  std::vector<double> values(idx.size() * per);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto px = records.at(idx[b]).image.data();
    std::copy(px.begin(), px.end(), values.begin() + b * per);
  }
  return num::Tensor({idx.size(), channels, height, width}, std::move(values));
}

std::vector<int> Dataset::labels(std::span<const std::size_t> idx) const {
  std::vector<int> out(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) out[b] = static_cast<int>(records.at(idx[b]).label);
  return out;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  const std::size_t per = ds.channels * ds.height * ds.width;
  out.write(kDatasetMagic, 4);
  le::put_u32(out, kDatasetVersion);
  le::put_u32(out, ds.class_count);
  le::put_u64(out, ds.records.size());
  le::put_u32(out, static_cast<std::uint32_t>(ds.channels));
  le::put_u32(out, static_cast<std::uint32_t>(ds.height));
  le::put_u32(out, static_cast<std::uint32_t>(ds.width));
  for (const auto& r : ds.records) {
    if (r.image.size() != per) {
      throw DimensionError("write_dataset: image " + num::to_string(r.image.shape()) +
                           " does not match the dataset geometry");
    }
    le::put_u32(out, r.label);
    le::put_u32(out, static_cast<std::uint32_t>(r.domain.size()));
    out.write(r.domain.data(), static_cast<std::streamsize>(r.domain.size()));
    for (double v : r.image.data()) {
      const float f = static_cast<float>(v);
      if (static_cast<double>(f) != v) {
        throw NumericError("write_dataset: pixel " + std::to_string(v) +
                           " is not exactly representable as f32");
      }
      le::put_f32(out, f);
    }
  }
  if (!out) throw IoError("write_dataset: stream write failed");
}

Dataset read_dataset(std::istream& in) {
  char magic[4];
  le::get_bytes(in, magic, 4, "dataset magic");
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw FormatError("not a dataset file: expected magic \"RLDS\"");
  }
  const auto version = le::get_u32(in, "dataset version");
  if (version != kDatasetVersion) {
    throw VersionError("dataset version " + std::to_string(version) + ", expected " +
                       std::to_string(kDatasetVersion));
  }
  Dataset ds;
  ds.class_count = le::get_u32(in, "class count");
  const auto count = le::get_u64(in, "image count");
  ds.channels = le::get_u32(in, "channels");
  ds.height = le::get_u32(in, "height");
  ds.width = le::get_u32(in, "width");
  const std::size_t per = ds.channels * ds.height * ds.width;
  if (per == 0 || per > (1u << 24)) throw FormatError("implausible image geometry");
  if (count > (1u << 26)) throw FormatError("implausible image count " + std::to_string(count));

  std::set<std::uint32_t> seen;
  ds.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ImageRecord r;
    r.label = le::get_u32(in, "record class");
    if (r.label >= ds.class_count) {
      throw IntegrityError("record " + std::to_string(i) + " has class " +
                           std::to_string(r.label) + " but the header declares " +
                           std::to_string(ds.class_count) + " classes");
    }
    seen.insert(r.label);
    const auto name_len = le::get_u32(in, "domain name length");
    if (name_len > 4096) throw FormatError("implausible domain name length");
    r.domain.resize(name_len);
    le::get_bytes(in, r.domain.data(), name_len, "domain name");
    std::vector<double> px(per);
    for (auto& v : px) v = static_cast<double>(le::get_f32(in, "pixels"));
    r.image = num::Tensor({ds.channels, ds.height, ds.width}, std::move(px));
    ds.records.push_back(std::move(r));
  }
  if (seen.size() != ds.class_count) {
    throw IntegrityError("header declares " + std::to_string(ds.class_count) +
                         " classes, records contain " + std::to_string(seen.size()));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IntegrityError("trailing bytes after the last record");
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  try {
    return read_dataset(in);
  } catch (const Error& e) {
    // Keep the error type, add the path.
    if (dynamic_cast<const FormatError*>(&e)) throw FormatError(path.string() + ": " + e.what());
    if (dynamic_cast<const TruncatedError*>(&e)) {
      throw TruncatedError(path.string() + ": " + e.what());
    }
    if (dynamic_cast<const VersionError*>(&e)) throw VersionError(path.string() + ": " + e.what());
    if (dynamic_cast<const IntegrityError*>(&e)) {
      throw IntegrityError(path.string() + ": " + e.what());
    }
    throw;
  }
}

}  // namespace rlab::data
