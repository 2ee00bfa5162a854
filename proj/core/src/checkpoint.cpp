#include "tvalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tvalign/random.hpp"

namespace tvalign {
namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(std::span<const char> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatError::Code::truncated,
                        std::string("truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

FormatError::FormatError(Code code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

std::string_view to_string(FormatError::Code code) {
  switch (code) {
    case FormatError::Code::bad_magic: return "bad magic";
    case FormatError::Code::unsupported_version: return "unsupported version";
    case FormatError::Code::truncated: return "truncated";
    case FormatError::Code::inconsistent_dims: return "inconsistent dimensions";
    case FormatError::Code::checksum_mismatch: return "checksum mismatch";
    case FormatError::Code::malformed: return "malformed";
  }
  return "unknown";
}

std::array<char, 4> make_magic(std::string_view magic) {
  if (magic.size() != 4) throw std::invalid_argument("magic must be 4 characters");
  return {magic[0], magic[1], magic[2], magic[3]};
}

std::vector<std::uint8_t> encode(const Container& c) {
  Writer w;
  w.raw(c.magic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(c.records.size()));
  for (const Record& r : c.records) {
    w.u8(static_cast<std::uint8_t>(r.kind));
    w.str(r.name);
    w.u32(static_cast<std::uint32_t>(r.matrices.size()));
    for (const Matrix& m : r.matrices) {
      w.u32(static_cast<std::uint32_t>(m.rows()));
      w.u32(static_cast<std::uint32_t>(m.cols()));
      w.u64(static_cast<std::uint64_t>(m.size()) * 8);
      for (double x : m.entries()) w.u64(std::bit_cast<std::uint64_t>(x));
    }
  }
  w.u32(static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    w.str(k);
    w.str(v);
  }
  auto& bytes = w.bytes();
  w.u64(fnv1a(bytes.data(), bytes.size()));
  return std::move(w.bytes());
}

Container decode(std::span<const std::uint8_t> bytes, std::string_view magic) {
  const auto expected = make_magic(magic);
  Reader rd(bytes);
  rd.need(4, "magic");
  Container c;
  for (std::size_t i = 0; i < 4; ++i) c.magic[i] = static_cast<char>(rd.u8("magic"));
  if (c.magic != expected) {
    throw FormatError(FormatError::Code::bad_magic,
                      "expected '" + std::string(magic) + "', got '" +
                          std::string(c.magic.begin(), c.magic.end()) + "'");
  }
  const std::uint32_t version = rd.u32("version");
  if (version != kFormatVersion) {
    throw FormatError(FormatError::Code::unsupported_version,
                      "version " + std::to_string(version) + ", supported " +
                          std::to_string(kFormatVersion));
  }

  const std::uint32_t record_count = rd.u32("record count");
  for (std::uint32_t ri = 0; ri < record_count; ++ri) {
    Record r;
    const std::uint8_t kind = rd.u8("record kind");
    if (kind < 1 || kind > 7) {
      throw FormatError(FormatError::Code::malformed, "unknown record kind " + std::to_string(kind));
    }
    r.kind = static_cast<RecordKind>(kind);
    r.name = rd.str("record name");
    const std::uint32_t matrix_count = rd.u32("matrix count");
    if (matrix_count > 2) {
      throw FormatError(FormatError::Code::malformed,
                        "record '" + r.name + "' holds " + std::to_string(matrix_count) +
                            " matrices");
    }
    for (std::uint32_t mi = 0; mi < matrix_count; ++mi) {
      const std::uint32_t rows = rd.u32("rows");
      const std::uint32_t cols = rd.u32("cols");
      const std::uint64_t payload = rd.u64("payload length");
      if (rows == 0 || cols == 0 || rows > kMaxDim || cols > kMaxDim) {
        throw FormatError(FormatError::Code::inconsistent_dims,
                          "record '" + r.name + "' has dimensions " + std::to_string(rows) + "x" +
                              std::to_string(cols));
      }
      if (payload != static_cast<std::uint64_t>(rows) * cols * 8) {
        throw FormatError(FormatError::Code::inconsistent_dims,
                          "record '" + r.name + "' declares " + std::to_string(payload) +
                              " payload bytes for " + std::to_string(rows) + "x" +
                              std::to_string(cols));
      }
      rd.need(payload, "matrix payload");
      std::vector<double> data(static_cast<std::size_t>(rows) * cols);
      for (double& x : data) x = std::bit_cast<double>(rd.u64("matrix entry"));
      r.matrices.emplace_back(rows, cols, std::move(data));
    }
    c.records.push_back(std::move(r));
  }

  const std::uint32_t meta_count = rd.u32("meta count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string key = rd.str("meta key");
    std::string value = rd.str("meta value");
    if (!c.meta.emplace(std::move(key), std::move(value)).second) {
      throw FormatError(FormatError::Code::malformed, "duplicate meta key");
    }
  }

  const std::size_t body = rd.position();
  const std::uint64_t stored = rd.u64("checksum");
  if (stored != fnv1a(bytes.data(), body)) {
    throw FormatError(FormatError::Code::checksum_mismatch, "payload does not match checksum");
  }
  if (rd.remaining() != 0) {
    throw FormatError(FormatError::Code::malformed,
                      std::to_string(rd.remaining()) + " trailing bytes");
  }
  return c;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace tvalign
