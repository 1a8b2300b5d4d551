#include "divlab/param_vector.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "divlab/errors.hpp"
#include "divlab/rng.hpp"

namespace divlab {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'P', 'V'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("DVPV: truncated header field");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("DVPV: truncated field");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) {
  const uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

ParamVector::ParamVector(std::vector<ParamDescriptor> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  validate();
}

void ParamVector::validate() const {
  int64_t expected_offset = 0;
  for (const ParamDescriptor& d : layout_) {
    if (d.offset != expected_offset) {
      throw ContractError("ParamVector: descriptor '" + d.name + "' at offset " +
                          std::to_string(d.offset) + ", expected " +
                          std::to_string(expected_offset) + " (gaps/overlaps not allowed)");
    }
    expected_offset += d.size();
  }
  if (expected_offset != size()) {
    throw ContractError("ParamVector: descriptors cover " + std::to_string(expected_offset) +
                        " values, vector holds " + std::to_string(size()));
  }
}

ParamVector ParamVector::from_named(const std::vector<std::pair<std::string, Array>>& entries) {
  std::vector<ParamDescriptor> layout;
  std::vector<double> values;
  int64_t offset = 0;
  for (const auto& [name, arr] : entries) {
    layout.push_back({name, arr.shape(), offset});
    values.insert(values.end(), arr.values().begin(), arr.values().end());
    offset += arr.size();
  }
  return ParamVector(std::move(layout), std::move(values));
}

ParamVector ParamVector::from_diffvalues(const std::vector<std::string>& names,
                                         std::span<const DiffValue> values) {
  if (names.size() != values.size()) {
    throw ContractError("ParamVector: " + std::to_string(names.size()) + " names for " +
                        std::to_string(values.size()) + " tensors");
  }
  std::vector<std::pair<std::string, Array>> entries;
  entries.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) entries.emplace_back(names[i], values[i].value());
  return from_named(entries);
}

Array ParamVector::tensor(size_t descriptor_index) const {
  const ParamDescriptor& d = layout_.at(descriptor_index);
  std::vector<double> vals(values_.begin() + d.offset, values_.begin() + d.offset + d.size());
  return Array(d.shape, std::move(vals));
}

std::vector<Array> ParamVector::tensors() const {
  std::vector<Array> out;
  out.reserve(layout_.size());
  for (size_t i = 0; i < layout_.size(); ++i) out.push_back(tensor(i));
  return out;
}

std::vector<DiffValue> ParamVector::to_leaves() const {
  std::vector<DiffValue> out;
  out.reserve(layout_.size());
  for (size_t i = 0; i < layout_.size(); ++i) out.push_back(DiffValue::leaf(tensor(i)));
  return out;
}

uint64_t ParamVector::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  const auto mix_bytes = [&h](const void* p, size_t n) {
    const unsigned char* bytes = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const ParamDescriptor& d : layout_) {
    mix_bytes(d.name.data(), d.name.size());
    for (const int64_t s : d.shape) mix_bytes(&s, sizeof(s));
  }
  if (!values_.empty()) mix_bytes(values_.data(), values_.size() * sizeof(double));
  return h;
}

std::string ParamVector::content_hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(content_hash()));
  return buf;
}

void ParamVector::save(std::ostream& out) const {
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<uint32_t>(layout_.size()));
  for (const ParamDescriptor& d : layout_) {
    write_u32(out, static_cast<uint32_t>(d.name.size()));
    out.write(d.name.data(), static_cast<std::streamsize>(d.name.size()));
    write_u64(out, static_cast<uint64_t>(d.shape.size()));
    for (const int64_t s : d.shape) write_u64(out, static_cast<uint64_t>(s));
  }
  for (const double v : values_) write_f64(out, v);
}

ParamVector ParamVector::load(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("DVPV: bad magic");
  }
  const uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw FormatError("DVPV: unsupported version " + std::to_string(version));
  }
  const uint32_t count = read_u32(in);
  std::vector<ParamDescriptor> layout;
  layout.reserve(count);
  int64_t offset = 0;
  for (uint32_t i = 0; i < count; ++i) {
    ParamDescriptor d;
    const uint32_t name_len = read_u32(in);
    d.name.resize(name_len);
    if (name_len > 0 && !in.read(d.name.data(), name_len)) {
      throw FormatError("DVPV: truncated descriptor name");
    }
    const uint64_t rank = read_u64(in);
    d.shape.resize(rank);
    for (uint64_t r = 0; r < rank; ++r) d.shape[r] = static_cast<int64_t>(read_u64(in));
    d.offset = offset;
    offset += d.size();
    layout.push_back(std::move(d));
  }
  std::vector<double> values(static_cast<size_t>(offset));
  for (int64_t i = 0; i < offset; ++i) values[static_cast<size_t>(i)] = read_f64(in);
  return ParamVector(std::move(layout), std::move(values));
}

void ParamVector::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("DVPV: cannot open " + path.string() + " for writing");
  save(out);
}

ParamVector ParamVector::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("DVPV: cannot open " + path.string());
  return load(in);
}

bool ParamVector::operator==(const ParamVector& other) const {
  if (values_ != other.values_ || layout_.size() != other.layout_.size()) return false;
  for (size_t i = 0; i < layout_.size(); ++i) {
    if (layout_[i].name != other.layout_[i].name || layout_[i].shape != other.layout_[i].shape ||
        layout_[i].offset != other.layout_[i].offset) {
      return false;
    }
  }
  return true;
}

}  // namespace divlab
