#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "truenet/tensor.hpp"

namespace truenet {

// Binary container: magic "TNNC", format version u32, a length-prefixed
// manifest of (name, dtype, shape), then the raw little-endian tensor
// payloads in manifest order.
struct TensorBlob {
  std::string name;
  std::string dtype;  // f32 | f64 | u64 | u8
  std::vector<int64_t> shape;
  std::vector<uint8_t> payload;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

constexpr uint32_t kCheckpointVersion = 1;

void write_container(const std::string& path, const std::vector<TensorBlob>& blobs);
std::vector<TensorBlob> read_container(const std::string& path);

const TensorBlob& find_blob(const std::vector<TensorBlob>& blobs, const std::string& name);
const TensorBlob* find_blob_opt(const std::vector<TensorBlob>& blobs, const std::string& name);

template <typename T>
const char* dtype_name();

template <typename T>
TensorBlob blob_from_tensor(const std::string& name, const Tensor<T>& t);
template <typename T>
Tensor<T> tensor_from_blob(const TensorBlob& blob);

TensorBlob blob_from_string(const std::string& name, const std::string& s);
std::string string_from_blob(const TensorBlob& blob);
TensorBlob blob_from_u64s(const std::string& name, const std::vector<uint64_t>& v);
std::vector<uint64_t> u64s_from_blob(const TensorBlob& blob);

}  // namespace truenet
