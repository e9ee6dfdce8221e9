#include "deepfv/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace deepfv {

namespace {

constexpr char kTensorMagic[4] = {'F', 'N', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'F', 'N', 'C', '1'};

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v & 0xff),
                             static_cast<std::uint8_t>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void read_bytes(std::istream& is, void* dst, std::size_t n,
                const char* what) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    fail(std::string("truncated ") + what);
}

std::uint16_t get_u16(std::istream& is, const char* what) {
  std::uint8_t b[2];
  read_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint8_t b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  std::uint8_t b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::size_t elem_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

}  // namespace

TensorData TensorData::from(const Tensor& t) {
  TensorData out;
  out.dtype = Dtype::F64;
  out.dims = t.dims;
  out.payload.resize(t.numel() * 8);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(t.data[i]);
    for (int b = 0; b < 8; ++b)
      out.payload[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

TensorData TensorData::from(const TensorF& t) {
  TensorData out;
  out.dtype = Dtype::F32;
  out.dims = t.dims;
  out.payload.resize(t.numel() * 4);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(t.data[i]);
    for (int b = 0; b < 4; ++b)
      out.payload[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

std::size_t TensorData::numel() const {
  return Tensor::numel_of(dims);
}

Tensor TensorData::as_f64() const {
  Tensor t(dims);
  if (dtype == Dtype::F64) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(payload[i * 8 + b]) << (8 * b);
      t.data[i] = std::bit_cast<double>(bits);
    }
  } else {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(payload[i * 4 + b]) << (8 * b);
      t.data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return t;
}

TensorF TensorData::as_f32() const {
  check(dtype == Dtype::F32, "as_f32: tensor is not f32");
  TensorF t(dims);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(payload[i * 4 + b]) << (8 * b);
    t.data[i] = std::bit_cast<float>(bits);
  }
  return t;
}

void write_tensor(std::ostream& os, const TensorData& t) {
  check(t.payload.size() == t.numel() * elem_size(t.dtype),
        "write_tensor: payload length mismatch");
  check(t.dims.size() <= 255, "write_tensor: too many dimensions");
  os.write(kTensorMagic, 4);
  const std::uint8_t head[2] = {static_cast<std::uint8_t>(t.dtype),
                                static_cast<std::uint8_t>(t.dims.size())};
  os.write(reinterpret_cast<const char*>(head), 2);
  for (std::size_t d : t.dims) put_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.payload.data()),
           static_cast<std::streamsize>(t.payload.size()));
}

TensorData read_tensor(std::istream& is) {
  char magic[4];
  read_bytes(is, magic, 4, "tensor header");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) fail("not a tensor file");
  std::uint8_t head[2];
  read_bytes(is, head, 2, "tensor header");
  if (head[0] > 1) fail("not a tensor file: unknown dtype");
  TensorData t;
  t.dtype = static_cast<Dtype>(head[0]);
  t.dims.resize(head[1]);
  for (auto& d : t.dims)
    d = static_cast<std::size_t>(get_u64(is, "tensor dims"));
  const std::size_t n = t.numel() * elem_size(t.dtype);
  t.payload.resize(n);
  read_bytes(is, t.payload.data(), n, "tensor payload");
  return t;
}

void write_tensor_file(const std::string& path, const TensorData& t) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "cannot open for writing: " + path);
  write_tensor(os, t);
  os.flush();
  check(os.good(), "write failed: " + path);
}

TensorData read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "cannot open: " + path);
  return read_tensor(is);
}

void Checkpoint::put(const std::string& name, TensorData t) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(t);
  } else {
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
  put(name, TensorData::from(t));
}

bool Checkpoint::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

const TensorData& Checkpoint::raw(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail("checkpoint is missing tensor: " + name);
  return entries_[it->second].second;
}

Tensor Checkpoint::get(const std::string& name) const {
  return raw(name).as_f64();
}

void Checkpoint::erase(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return;
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i)
    index_[entries_[i].first] = i;
}

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os.write(kCheckpointMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(c.size()));
  for (const auto& [name, t] : c.entries()) {
    check(name.size() <= 0xffff, "checkpoint name too long: " + name);
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  read_bytes(is, magic, 4, "checkpoint header");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    fail("not a checkpoint file");
  const std::uint32_t count = get_u32(is, "checkpoint header");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = get_u16(is, "checkpoint entry");
    std::string name(len, '\0');
    read_bytes(is, name.data(), len, "checkpoint entry name");
    if (c.contains(name)) fail("corrupt checkpoint: duplicate name " + name);
    c.put(name, read_tensor(is));
  }
  return c;
}

void write_checkpoint_file(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "cannot open for writing: " + path);
  write_checkpoint(os, c);
  os.flush();
  check(os.good(), "write failed: " + path);
}

Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "cannot open: " + path);
  return read_checkpoint(is);
}

}  // namespace deepfv
