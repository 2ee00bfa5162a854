#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tvalign/linalg.hpp"

namespace tvalign {

/// Binary record container shared by task vectors ("TVEC"), model
/// parameters ("MPAR") and alignments ("ALGN").
///
///   magic[4] | u32 version | u32 record_count
///   record*: u8 kind | u32 name_len | name | u32 matrix_count
///            | (u32 rows | u32 cols | u64 payload_bytes | f64[rows*cols])*
///   u32 meta_count | (u32 key_len | key | u32 value_len | value)*
///   u64 checksum (FNV-1a of every preceding byte)
///
/// All integers and doubles are little-endian; doubles are stored by bit
/// pattern so round trips are exact.
inline constexpr std::uint32_t kFormatVersion = 1;

enum class RecordKind : std::uint8_t {
  dense = 1,
  low_rank = 2,
  head = 3,
  aux = 4,
  frame = 5,
  bias = 6,
  input_proj = 7,
};

struct Record {
  RecordKind kind = RecordKind::dense;
  std::string name;
  std::vector<Matrix> matrices;
  friend bool operator==(const Record&, const Record&) = default;
};

struct Container {
  std::array<char, 4> magic{};
  std::vector<Record> records;
  std::map<std::string, std::string> meta;
  friend bool operator==(const Container&, const Container&) = default;
};

class FormatError : public std::runtime_error {
 public:
  enum class Code {
    bad_magic,
    unsupported_version,
    truncated,
    inconsistent_dims,
    checksum_mismatch,
    malformed,
  };

  FormatError(Code code, const std::string& what);
  Code code() const { return code_; }

 private:
  Code code_;
};

std::string_view to_string(FormatError::Code code);

std::vector<std::uint8_t> encode(const Container& c);

/// Parses `bytes`, requiring the given 4-character magic. Every malformed
/// input raises FormatError; nothing is allocated beyond what the buffer
/// can actually back.
Container decode(std::span<const std::uint8_t> bytes, std::string_view magic);

std::array<char, 4> make_magic(std::string_view magic);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace tvalign
