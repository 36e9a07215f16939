#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace cnerv {

/// Huffman code lengths for a symbol -> frequency table, returned in canonical
/// order (ascending length, then symbol). A lone symbol gets length 1.
std::vector<std::pair<std::uint64_t, int>> huffman_code_lengths(const std::map<std::uint64_t, std::uint64_t>& freq);

/// Canonical Huffman stream:
///   u64 count | u8 bit | u32 table_size | table_size x (varint symbol, u8 length)
///   | u64 payload_bits | payload (MSB-first) | u32 crc32 of all preceding bytes
std::vector<std::uint8_t> entropy_encode(std::span<const std::uint64_t> codes, int bit);
std::vector<std::uint64_t> entropy_decode(std::span<const std::uint8_t> stream);

/// Fixed-width MSB-first bit packing of `count` codes.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint64_t> codes, int width);
std::vector<std::uint64_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int width);

}  // namespace cnerv
