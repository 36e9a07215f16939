#include "cnerv/entropy.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <tuple>

#include "cnerv/bytes.hpp"
#include "cnerv/error.hpp"

namespace cnerv {

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

class BitWriter {
 public:
  void put(std::uint64_t value, int width) {
    for (int i = width - 1; i >= 0; --i) {
      if (bits_ % 8 == 0) bytes_.push_back(0);
      if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
      ++bits_;
    }
  }
  std::uint64_t bits() const { return bits_; }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bits) : bytes_(bytes), bits_(bits) {}
  int next() {
    if (pos_ >= bits_) throw FormatError("entropy stream: payload exhausted");
    const int b = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1;
    ++pos_;
    return b;
  }
  std::uint64_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t bits_;
  std::uint64_t pos_ = 0;
};

struct CanonicalCode {
  std::vector<std::pair<std::uint64_t, int>> table;  // canonical order
  std::vector<std::uint64_t> codes;                   // parallel to table
};

CanonicalCode assign_codes(std::vector<std::pair<std::uint64_t, int>> table) {
  CanonicalCode out;
  std::uint64_t code = 0;
  int len = table.empty() ? 0 : table.front().second;
  for (const auto& [sym, l] : table) {
    code <<= (l - len);
    len = l;
    out.codes.push_back(code);
    ++code;
  }
  out.table = std::move(table);
  return out;
}

}  // namespace

std::vector<std::pair<std::uint64_t, int>> huffman_code_lengths(const std::map<std::uint64_t, std::uint64_t>& freq) {
  std::vector<std::pair<std::uint64_t, int>> lengths;
  if (freq.empty()) return lengths;
  if (freq.size() == 1) {
    lengths.emplace_back(freq.begin()->first, 1);
    return lengths;
  }
  // Nodes 0..n-1 are leaves in symbol order; ties break on node id for determinism.
  const std::size_t n = freq.size();
  std::vector<std::uint64_t> symbols;
  std::vector<std::size_t> parent(2 * n - 1, 0);
  using Item = std::tuple<std::uint64_t, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (const auto& [sym, count] : freq) {
    heap.emplace(count, symbols.size());
    symbols.push_back(sym);
  }
  std::size_t next = n;
  while (heap.size() > 1) {
    const auto [wa, a] = heap.top();
    heap.pop();
    const auto [wb, b] = heap.top();
    heap.pop();
    parent[a] = parent[b] = next;
    heap.emplace(wa + wb, next++);
  }
  const std::size_t root = next - 1;
  std::vector<int> depth(2 * n - 1, 0);
  for (std::size_t node = root; node-- > 0;) depth[node] = depth[parent[node]] + 1;
  for (std::size_t i = 0; i < n; ++i) lengths.emplace_back(symbols[i], depth[i]);
  std::sort(lengths.begin(), lengths.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second < y.second : x.first < y.first;
  });
  return lengths;
}

std::vector<std::uint8_t> entropy_encode(std::span<const std::uint64_t> codes, int bit) {
  if (bit < 1 || bit > 32) throw Error("entropy_encode: bit width outside 1..32");
  const std::uint64_t limit = std::uint64_t{1} << bit;
  std::map<std::uint64_t, std::uint64_t> freq;
  for (std::uint64_t c : codes) {
    if (c > limit) throw Error("entropy_encode: code " + std::to_string(c) + " exceeds 2^" + std::to_string(bit));
    ++freq[c];
  }
  const auto canon = assign_codes(huffman_code_lengths(freq));
  std::map<std::uint64_t, std::pair<std::uint64_t, int>> lookup;
  for (std::size_t i = 0; i < canon.table.size(); ++i) {
    lookup[canon.table[i].first] = {canon.codes[i], canon.table[i].second};
  }
  BitWriter bits;
  for (std::uint64_t c : codes) {
    const auto& [code, len] = lookup[c];
    bits.put(code, len);
  }
  ByteWriter out;
  out.u64(codes.size());
  out.u8(static_cast<std::uint8_t>(bit));
  out.u32(static_cast<std::uint32_t>(canon.table.size()));
  for (const auto& [sym, len] : canon.table) {
    out.varint(sym);
    out.u8(static_cast<std::uint8_t>(len));
  }
  out.u64(bits.bits());
  out.bytes(bits.bytes());
  out.u32(crc32(out.buffer()));
  return out.take();
}

std::vector<std::uint64_t> entropy_decode(std::span<const std::uint8_t> stream) {
  if (stream.size() < 4) throw FormatError("entropy stream: too short");
  const auto body = stream.first(stream.size() - 4);
  ByteReader tail(stream.last(4));
  if (tail.u32() != crc32(body)) throw ChecksumError("entropy stream: CRC32 mismatch");

  ByteReader in(body);
  const std::uint64_t count = in.u64();
  const int bit = in.u8();
  if (bit < 1 || bit > 32) throw FormatError("entropy stream: invalid bit width");
  const std::uint32_t table_size = in.u32();
  std::vector<std::pair<std::uint64_t, int>> table;
  table.reserve(table_size);
  int prev_len = 0;
  for (std::uint32_t i = 0; i < table_size; ++i) {
    const std::uint64_t sym = in.varint();
    const int len = in.u8();
    if (len < 1 || len > 63 || len < prev_len) throw FormatError("entropy stream: invalid code length table");
    if (sym > (std::uint64_t{1} << bit)) throw FormatError("entropy stream: symbol exceeds 2^bit");
    prev_len = len;
    table.emplace_back(sym, len);
  }
  if (table_size > 1) {
    // Huffman codes are complete: sum 2^-len == 1.
    long double kraft = 0;
    for (const auto& [sym, len] : table) kraft += std::ldexp(1.0L, -len);
    if (kraft != 1.0L) throw FormatError("entropy stream: code lengths are not a complete prefix code");
  }
  if (count > 0 && table.empty()) throw FormatError("entropy stream: symbols without a code table");
  const std::uint64_t payload_bits = in.u64();
  if (payload_bits > static_cast<std::uint64_t>(in.remaining()) * 8) throw FormatError("truncated stream");
  const auto payload = in.bytes(static_cast<std::size_t>((payload_bits + 7) / 8));
  if (in.remaining() != 0) throw FormatError("entropy stream: trailing bytes");

  const auto canon = assign_codes(std::move(table));
  // first code / first index / count per length
  const int max_len = canon.table.empty() ? 0 : canon.table.back().second;
  std::vector<std::uint64_t> first_code(static_cast<std::size_t>(max_len + 1), 0);
  std::vector<std::size_t> first_index(static_cast<std::size_t>(max_len + 1), 0), per_len(static_cast<std::size_t>(max_len + 1), 0);
  for (std::size_t i = 0; i < canon.table.size(); ++i) {
    const auto l = static_cast<std::size_t>(canon.table[i].second);
    if (per_len[l]++ == 0) {
      first_code[l] = canon.codes[i];
      first_index[l] = i;
    }
  }
  std::vector<std::uint64_t> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, payload_bits + 1)));
  BitReader reader(payload, payload_bits);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::uint64_t code = 0;
    for (int len = 1;; ++len) {
      if (len > max_len) throw FormatError("entropy stream: invalid code in payload");
      code = (code << 1) | static_cast<std::uint64_t>(reader.next());
      const auto l = static_cast<std::size_t>(len);
      if (per_len[l] && code >= first_code[l] && code - first_code[l] < per_len[l]) {
        out.push_back(canon.table[first_index[l] + (code - first_code[l])].first);
        break;
      }
    }
  }
  if (reader.position() != payload_bits) throw FormatError("entropy stream: payload length mismatch");
  return out;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint64_t> codes, int width) {
  if (width < 1 || width > 64) throw Error("pack_codes: invalid width");
  BitWriter bits;
  for (std::uint64_t c : codes) {
    if (width < 64 && (c >> width) != 0) throw Error("pack_codes: code does not fit width");
    bits.put(c, width);
  }
  return std::move(bits.bytes());
}

std::vector<std::uint64_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int width) {
  if (width < 1 || width > 64) throw FormatError("unpack_codes: invalid width");
  const std::uint64_t total = static_cast<std::uint64_t>(count) * static_cast<std::uint64_t>(width);
  if ((total + 7) / 8 != bytes.size()) throw FormatError("unpack_codes: size mismatch");
  BitReader reader(bytes, total);
  std::vector<std::uint64_t> out(count);
  for (auto& c : out) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v = (v << 1) | static_cast<std::uint64_t>(reader.next());
    c = v;
  }
  return out;
}

}  // namespace cnerv
