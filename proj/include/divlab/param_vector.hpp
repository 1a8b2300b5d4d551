#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "divlab/array.hpp"
#include "divlab/diffvalue.hpp"

namespace divlab {

struct ParamDescriptor {
  std::string name;
  std::vector<int64_t> shape;
  int64_t offset = 0;

  int64_t size() const { return shape_size(shape); }
};

// Flat view of a model's parameters. Descriptors are non-overlapping, in
// offset order, and cover the value vector exactly.
//
// Serialized form ("DVPV", little-endian):
//   magic "DVPV" | version u32 = 1 | descriptor count u32
//   per descriptor: name length u32, UTF-8 name bytes, rank u64, dims u64[rank]
//   raw f64 values (sum of descriptor sizes)
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<ParamDescriptor> layout, std::vector<double> values);

  static ParamVector from_named(const std::vector<std::pair<std::string, Array>>& entries);
  static ParamVector from_diffvalues(const std::vector<std::string>& names,
                                     std::span<const DiffValue> values);

  int64_t size() const { return static_cast<int64_t>(values_.size()); }
  const std::vector<double>& values() const { return values_; }
  const std::vector<ParamDescriptor>& layout() const { return layout_; }

  Array tensor(size_t descriptor_index) const;
  std::vector<Array> tensors() const;
  std::vector<DiffValue> to_leaves() const;

  uint64_t content_hash() const;  // over layout and raw value bytes
  std::string content_hash_hex() const;

  void save(std::ostream& out) const;
  static ParamVector load(std::istream& in);
  void save_file(const std::filesystem::path& path) const;
  static ParamVector load_file(const std::filesystem::path& path);

  bool operator==(const ParamVector& other) const;

 private:
  void validate() const;

  std::vector<ParamDescriptor> layout_;
  std::vector<double> values_;
};

}  // namespace divlab
