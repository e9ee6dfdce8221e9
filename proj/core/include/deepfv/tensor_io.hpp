#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "deepfv/tensor.hpp"

namespace deepfv {

// On-disk tensor: magic "FNT1", dtype byte (0 = f32, 1 = f64), u8 ndim,
// ndim x u64 little-endian dims, payload row-major little-endian.
// Checkpoint: magic "FNC1", u32 entry count, per entry a u16 name length,
// the UTF-8 name, and an embedded tensor record. Both formats are byte-order
// fixed and platform independent.

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

// Type-erased tensor as stored on disk. Round-trips bitwise.
struct TensorData {
  Dtype dtype = Dtype::F64;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian scalars

  static TensorData from(const Tensor& t);
  static TensorData from(const TensorF& t);
  Tensor as_f64() const;   // converts f32 payloads losslessly
  TensorF as_f32() const;  // requires dtype == F32
  std::size_t numel() const;

  friend bool operator==(const TensorData&, const TensorData&) = default;
};

void write_tensor(std::ostream& os, const TensorData& t);
TensorData read_tensor(std::istream& is);
void write_tensor_file(const std::string& path, const TensorData& t);
TensorData read_tensor_file(const std::string& path);

// Ordered name -> tensor archive. Entry order is preserved so writes are
// deterministic; names must be unique.
class Checkpoint {
 public:
  void put(const std::string& name, TensorData t);  // insert or replace
  void put(const std::string& name, const Tensor& t);
  bool contains(const std::string& name) const;
  const TensorData& raw(const std::string& name) const;
  Tensor get(const std::string& name) const;  // as f64
  void erase(const std::string& name);
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, TensorData>>& entries() const {
    return entries_;
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, TensorData>> entries_;
  std::map<std::string, std::size_t> index_;
};

void write_checkpoint(std::ostream& os, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& is);
void write_checkpoint_file(const std::string& path, const Checkpoint& c);
Checkpoint read_checkpoint_file(const std::string& path);

}  // namespace deepfv
