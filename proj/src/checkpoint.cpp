#include "truenet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace truenet {

namespace {

// tensor payloads are memcpy'd, so the host must already be little-endian
static_assert(std::endian::native == std::endian::little);

constexpr char kMagic[4] = {'T', 'N', 'N', 'C'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const uint8_t* data, size_t size, std::string path) : data_(data), size_(size), path_(std::move(path)) {}
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> b(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return b;
  }
  size_t remaining() const { return size_ - pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > size_)
      throw std::runtime_error("checkpoint '" + path_ + "': truncated (need " + std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + ")");
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  std::string path_;
};

size_t dtype_size(const std::string& dtype, const std::string& path) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  if (dtype == "u64") return 8;
  if (dtype == "u8") return 1;
  throw std::runtime_error("checkpoint '" + path + "': unknown dtype '" + dtype + "'");
}

}  // namespace

void write_container(const std::string& path, const std::vector<TensorBlob>& blobs) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(blobs.size()));
  for (const TensorBlob& b : blobs) {
    put_u32(out, static_cast<uint32_t>(b.name.size()));
    out += b.name;
    put_u32(out, static_cast<uint32_t>(b.dtype.size()));
    out += b.dtype;
    put_u32(out, static_cast<uint32_t>(b.shape.size()));
    for (int64_t d : b.shape) put_u64(out, static_cast<uint64_t>(d));
    const size_t expected = static_cast<size_t>(b.numel()) * dtype_size(b.dtype, path);
    if (b.payload.size() != expected)
      throw std::logic_error("checkpoint: blob '" + b.name + "' payload size " + std::to_string(b.payload.size()) +
                             " does not match manifest (" + std::to_string(expected) + ")");
  }
  for (const TensorBlob& b : blobs) out.append(reinterpret_cast<const char*>(b.payload.data()), b.payload.size());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + tmp + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: cannot move '" + tmp + "' to '" + path + "'");
}

std::vector<TensorBlob> read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(reinterpret_cast<const uint8_t*>(content.data()), content.size(), path);

  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint '" + path + "': bad magic bytes");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint '" + path + "': format version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  const uint32_t count = r.u32();
  std::vector<TensorBlob> blobs(count);
  for (TensorBlob& b : blobs) {
    b.name = r.str(r.u32());
    b.dtype = r.str(r.u32());
    const uint32_t rank = r.u32();
    b.shape.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) b.shape[i] = static_cast<int64_t>(r.u64());
  }
  for (TensorBlob& b : blobs) b.payload = r.bytes(static_cast<size_t>(b.numel()) * dtype_size(b.dtype, path));
  if (r.remaining() != 0)
    throw std::runtime_error("checkpoint '" + path + "': " + std::to_string(r.remaining()) + " trailing bytes");
  return blobs;
}

const TensorBlob* find_blob_opt(const std::vector<TensorBlob>& blobs, const std::string& name) {
  for (const TensorBlob& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

const TensorBlob& find_blob(const std::vector<TensorBlob>& blobs, const std::string& name) {
  const TensorBlob* b = find_blob_opt(blobs, name);
  if (!b) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return *b;
}

template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

template <typename T>
TensorBlob blob_from_tensor(const std::string& name, const Tensor<T>& t) {
  TensorBlob b;
  b.name = name;
  b.dtype = dtype_name<T>();
  b.shape = t.shape;
  b.payload.resize(t.data.size() * sizeof(T));
  std::memcpy(b.payload.data(), t.data.data(), b.payload.size());
  return b;
}

template <typename T>
Tensor<T> tensor_from_blob(const TensorBlob& blob) {
  if (blob.dtype != dtype_name<T>())
    throw std::runtime_error("checkpoint: tensor '" + blob.name + "' has dtype " + blob.dtype + ", expected " +
                             dtype_name<T>());
  Tensor<T> t = Tensor<T>::zeros(blob.shape);
  std::memcpy(t.data.data(), blob.payload.data(), blob.payload.size());
  return t;
}

TensorBlob blob_from_string(const std::string& name, const std::string& s) {
  TensorBlob b;
  b.name = name;
  b.dtype = "u8";
  b.shape = {static_cast<int64_t>(s.size())};
  b.payload.assign(s.begin(), s.end());
  return b;
}

std::string string_from_blob(const TensorBlob& blob) {
  if (blob.dtype != "u8") throw std::runtime_error("checkpoint: blob '" + blob.name + "' is not u8");
  return std::string(blob.payload.begin(), blob.payload.end());
}

TensorBlob blob_from_u64s(const std::string& name, const std::vector<uint64_t>& v) {
  TensorBlob b;
  b.name = name;
  b.dtype = "u64";
  b.shape = {static_cast<int64_t>(v.size())};
  b.payload.resize(v.size() * 8);
  for (size_t i = 0; i < v.size(); ++i)
    for (int j = 0; j < 8; ++j) b.payload[i * 8 + j] = static_cast<uint8_t>((v[i] >> (8 * j)) & 0xff);
  return b;
}

std::vector<uint64_t> u64s_from_blob(const TensorBlob& blob) {
  if (blob.dtype != "u64") throw std::runtime_error("checkpoint: blob '" + blob.name + "' is not u64");
  std::vector<uint64_t> v(blob.payload.size() / 8);
  for (size_t i = 0; i < v.size(); ++i) {
    uint64_t x = 0;
    for (int j = 0; j < 8; ++j) x |= static_cast<uint64_t>(blob.payload[i * 8 + j]) << (8 * j);
    v[i] = x;
  }
  return v;
}

template TensorBlob blob_from_tensor<float>(const std::string&, const Tensor<float>&);
template TensorBlob blob_from_tensor<double>(const std::string&, const Tensor<double>&);
template Tensor<float> tensor_from_blob<float>(const TensorBlob&);
template Tensor<double> tensor_from_blob<double>(const TensorBlob&);

}  // namespace truenet
