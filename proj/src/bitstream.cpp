#include "cnerv/bitstream.hpp"

#include <fstream>
#include <iterator>

#include "cnerv/bytes.hpp"
#include "cnerv/entropy.hpp"

namespace cnerv {

namespace {

constexpr char kMagic[4] = {'C', 'N', 'R', 'V'};

std::vector<std::uint8_t> encode_codes(const QuantizedTensor& q, CodeStorage storage) {
  if (storage == CodeStorage::kHuffman) return entropy_encode(q.codes, q.bit);
  return pack_codes(q.codes, code_width(q.bit));
}

void write_record(ByteWriter& out, const TensorRecord& r) {
  if (r.name.size() > 0xffff) throw FormatError("tensor name too long");
  out.u16(static_cast<std::uint16_t>(r.name.size()));
  out.str(r.name);
  out.u8(static_cast<std::uint8_t>(r.shape.size()));
  for (Index d : r.shape) out.u32(static_cast<std::uint32_t>(d));
  const auto n = static_cast<std::size_t>(r.size());
  out.u8(r.mask.empty() ? 0 : 1);
  if (!r.mask.empty()) {
    if (r.mask.size() != n) throw FormatError("mask length does not match tensor " + r.name);
    std::vector<std::uint8_t> bits((n + 7) / 8, 0);
    for (std::size_t i = 0; i < n; ++i)
      if (r.mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    out.bytes(bits);
  }
  out.u8(static_cast<std::uint8_t>(r.encoding));
  switch (r.encoding) {
    case TensorEncoding::kRawF32:
    case TensorEncoding::kRawF64:
      if (r.raw.size() != n) throw FormatError("raw value count does not match tensor " + r.name);
      for (double v : r.raw) {
        if (r.encoding == TensorEncoding::kRawF32) out.f32(static_cast<float>(v)); else out.f64(v);
      }
      break;
    case TensorEncoding::kQuantized: {
      out.f64(r.quant.mu_min);
      out.f64(r.quant.scale);
      out.u8(static_cast<std::uint8_t>(r.quant.bit));
      out.u8(r.quant.constant ? 1 : 0);
      out.u64(r.quant.codes.size());
      out.u8(static_cast<std::uint8_t>(r.storage));
      const auto payload = encode_codes(r.quant, r.storage);
      out.u64(payload.size());
      out.bytes(payload);
      break;
    }
    default:
      throw FormatError("unknown tensor encoding");
  }
}

TensorRecord read_record(ByteReader& in) {
  TensorRecord r;
  r.name = in.str(in.u16());
  const int rank = in.u8();
  if (rank < 1) throw FormatError("tensor record with rank 0");
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = in.u32();
    if (d == 0) throw FormatError("tensor record with zero extent");
    r.shape.push_back(static_cast<Index>(d));
  }
  const auto n = static_cast<std::size_t>(r.size());
  const int has_mask = in.u8();
  if (has_mask > 1) throw FormatError("invalid mask flag");
  std::size_t survivors = n;
  if (has_mask) {
    const auto bits = in.bytes((n + 7) / 8);
    r.mask.resize(n);
    survivors = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r.mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
      survivors += r.mask[i] ? 1 : 0;
    }
  }
  const int encoding = in.u8();
  switch (encoding) {
    case 0:
    case 1:
      r.encoding = static_cast<TensorEncoding>(encoding);
      r.raw.resize(n);
      for (auto& v : r.raw) v = encoding == 0 ? static_cast<double>(in.f32()) : in.f64();
      break;
    case 2: {
      r.encoding = TensorEncoding::kQuantized;
      r.quant.shape = r.shape;
      r.quant.mu_min = in.f64();
      r.quant.scale = in.f64();
      r.quant.bit = in.u8();
      if (r.quant.bit < 1 || r.quant.bit > 32) throw FormatError("invalid quantization bit width");
      r.quant.constant = in.u8() != 0;
      const std::uint64_t n_codes = in.u64();
      if (n_codes != survivors) throw FormatError("code count does not match tensor " + r.name);
      const int storage = in.u8();
      if (storage > 1) throw FormatError("unknown code storage");
      r.storage = static_cast<CodeStorage>(storage);
      const auto payload = in.bytes(static_cast<std::size_t>(in.u64()));
      r.quant.codes = r.storage == CodeStorage::kHuffman
                          ? entropy_decode(payload)
                          : unpack_codes(payload, static_cast<std::size_t>(n_codes), code_width(r.quant.bit));
      if (r.quant.codes.size() != n_codes) throw FormatError("decoded code count mismatch in " + r.name);
      for (auto c : r.quant.codes)
        if (c > r.quant.max_code()) throw FormatError("code exceeds 2^bit in " + r.name);
      break;
    }
    default:
      throw FormatError("unknown tensor encoding " + std::to_string(encoding));
  }
  return r;
}

}  // namespace

CodeStorage choose_storage(const QuantizedTensor& q) {
  const auto huff = entropy_encode(q.codes, q.bit).size();
  const auto packed = (q.codes.size() * static_cast<std::size_t>(code_width(q.bit)) + 7) / 8;
  return huff < packed ? CodeStorage::kHuffman : CodeStorage::kPacked;
}

TensorRecord quantized_record(const std::string& name, const Shape& shape, std::span<const double> values, int bit,
                              const std::vector<bool>& mask) {
  TensorRecord r;
  r.name = name;
  r.shape = shape;
  r.encoding = TensorEncoding::kQuantized;
  r.mask = mask;
  std::vector<double> kept;
  if (mask.empty()) {
    kept.assign(values.begin(), values.end());
  } else {
    if (mask.size() != values.size()) throw Error("quantized_record: mask length mismatch for " + name);
    for (std::size_t i = 0; i < values.size(); ++i)
      if (mask[i]) kept.push_back(values[i]);
  }
  if (kept.empty()) {
    r.quant.bit = bit;
    r.quant.constant = true;
    r.quant.shape = shape;
  } else {
    r.quant = quantize_values(kept, bit, shape);
  }
  r.storage = choose_storage(r.quant);
  return r;
}

std::vector<double> record_values(const TensorRecord& r) {
  if (r.encoding != TensorEncoding::kQuantized) return r.raw;
  const auto kept = dequantize_values(r.quant);
  if (r.mask.empty()) return kept;
  std::vector<double> out(r.mask.size(), 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (r.mask[i]) out[i] = kept.at(k++);
  return out;
}

std::vector<std::uint8_t> serialize(const Container& c, ContainerStats* stats) {
  ByteWriter out;
  out.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  out.u32(c.version);
  const std::string meta = c.meta.dump();
  out.u32(static_cast<std::uint32_t>(meta.size()));
  out.str(meta);
  out.u64(c.manifest_digest);
  out.u64(c.split_digest);
  out.u64(c.model_digest);
  const std::size_t model_start = out.size();
  out.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& r : c.tensors) write_record(out, r);
  const std::size_t embed_start = out.size();
  out.u32(static_cast<std::uint32_t>(c.embeddings.size()));
  for (const auto& e : c.embeddings) {
    out.u32(e.frame_id);
    write_record(out, e.tensor);
  }
  const std::size_t embed_end = out.size();
  out.u32(crc32(out.buffer()));
  if (stats) {
    stats->total_bytes = out.size();
    stats->model_bytes = embed_start - model_start;
    stats->embedding_bytes = embed_end - embed_start;
  }
  return out.take();
}

Container parse_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("container too short");
  ByteReader tail(bytes.last(4));
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader in(body);
  const auto magic = in.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("not a .cnrv container (bad magic)");
  if (tail.u32() != crc32(body)) throw ChecksumError("container CRC32 mismatch");
  Container c;
  c.version = in.u32();
  if (c.version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(c.version));
  const std::string meta = in.str(in.u32());
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container metadata is not valid JSON: ") + e.what());
  }
  c.manifest_digest = in.u64();
  c.split_digest = in.u64();
  c.model_digest = in.u64();
  const std::uint32_t n_tensors = in.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) c.tensors.push_back(read_record(in));
  const std::uint32_t n_embed = in.u32();
  for (std::uint32_t i = 0; i < n_embed; ++i) {
    EmbeddingRecord e;
    e.frame_id = in.u32();
    e.tensor = read_record(in);
    c.embeddings.push_back(std::move(e));
  }
  if (in.remaining() != 0) throw FormatError("container has trailing bytes");
  return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace cnerv
