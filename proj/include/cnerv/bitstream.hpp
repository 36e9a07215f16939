#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cnerv/quantize.hpp"
#include "cnerv/tensor.hpp"

namespace cnerv {

// .cnrv container, all integers little-endian, reals IEEE-754:
//
//   "CNRV" | u32 version | u32 meta_len | meta (UTF-8 JSON)
//   | u64 manifest_digest | u64 split_digest | u64 model_digest
//   | u32 n_tensors | tensor record x n_tensors
//   | u32 n_embeddings | (u32 frame_id | tensor record) x n_embeddings
//   | u32 crc32 of all preceding bytes
//
// tensor record:
//   u16 name_len | name | u8 rank | rank x u32 extent
//   | u8 has_mask | [ceil(n/8) bytes, element i at bit (i % 8) of byte i / 8]
//   | u8 encoding
//     0 raw f32: n x f32
//     1 raw f64: n x f64
//     2 quantized: f64 mu_min | f64 scale | u8 bit | u8 constant | u64 n_codes
//                  | u8 storage (0 huffman stream, 1 fixed width bit+1) | u64 payload_len | payload
//
// With a mask, only surviving elements carry codes; pruned elements decode to 0.

inline constexpr std::uint32_t kContainerVersion = 1;

enum class TensorEncoding : std::uint8_t { kRawF32 = 0, kRawF64 = 1, kQuantized = 2 };
enum class CodeStorage : std::uint8_t { kHuffman = 0, kPacked = 1 };

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<bool> mask;  // empty: no pruning bitmap
  TensorEncoding encoding = TensorEncoding::kRawF64;
  std::vector<double> raw;
  QuantizedTensor quant;
  CodeStorage storage = CodeStorage::kHuffman;

  Index size() const { return shape_size(shape); }
};

struct EmbeddingRecord {
  std::uint32_t frame_id = 0;
  TensorRecord tensor;
};

struct Container {
  std::uint32_t version = kContainerVersion;
  nlohmann::json meta = nlohmann::json::object();
  std::uint64_t manifest_digest = 0;
  std::uint64_t split_digest = 0;
  std::uint64_t model_digest = 0;
  std::vector<TensorRecord> tensors;
  std::vector<EmbeddingRecord> embeddings;
};

struct ContainerStats {
  std::size_t total_bytes = 0;
  std::size_t model_bytes = 0;      // tensor records
  std::size_t embedding_bytes = 0;  // embedding records
};

std::vector<std::uint8_t> serialize(const Container& container, ContainerStats* stats = nullptr);
Container parse_container(std::span<const std::uint8_t> bytes);

/// Encodes payload codes with whichever of Huffman / fixed width is smaller.
CodeStorage choose_storage(const QuantizedTensor& q);

template <typename Scalar>
TensorRecord raw_record(const std::string& name, const Tensor<Scalar>& t) {
  TensorRecord r;
  r.name = name;
  r.shape = t.shape();
  r.encoding = sizeof(Scalar) == 4 ? TensorEncoding::kRawF32 : TensorEncoding::kRawF64;
  r.raw.resize(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) r.raw[static_cast<std::size_t>(i)] = static_cast<double>(t.data()[i]);
  return r;
}

TensorRecord quantized_record(const std::string& name, const Shape& shape, std::span<const double> values, int bit,
                              const std::vector<bool>& mask = {});

template <typename Scalar>
TensorRecord quantized_record(const std::string& name, const Tensor<Scalar>& t, int bit,
                              const std::vector<bool>& mask = {}) {
  const Eigen::VectorXd v = t.data().template cast<double>();
  return quantized_record(name, t.shape(), std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), bit,
                          mask);
}

/// Element values of a record after decoding (dequantized, pruned entries zero).
std::vector<double> record_values(const TensorRecord& r);

template <typename Scalar>
Tensor<Scalar> record_tensor(const TensorRecord& r) {
  const auto values = record_values(r);
  typename Tensor<Scalar>::Vector v(static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Index>(i)] = static_cast<Scalar>(values[i]);
  return Tensor<Scalar>(r.shape, std::move(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// bits per pixel for `bytes` spread over `frames` frames of height x width.
inline double bits_per_pixel(std::size_t bytes, Index frames, Index height, Index width) {
  return static_cast<double>(bytes) * 8.0 / static_cast<double>(frames * height * width);
}

}  // namespace cnerv
