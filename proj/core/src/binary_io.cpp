#include "red/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "red/error.hpp"

namespace red::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

template <typename T>
void append_raw(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

}  // namespace

void BinaryWriter::put_u32(std::uint32_t v) { append_raw(buf_, v); }
void BinaryWriter::put_u64(std::uint64_t v) { append_raw(buf_, v); }
void BinaryWriter::put_f64(double v) { append_raw(buf_, v); }

void BinaryWriter::put_envelope(std::string_view magic, std::uint32_t version,
                                std::string_view header) {
  put_bytes(magic);
  put_u32(version);
  put_u64(header.size());
  put_bytes(header);
}

void BinaryReader::require(std::size_t n, const std::string& record) const {
  if (data_.size() - pos_ < n) {
    throw ParseError(record, "truncated (need " + std::to_string(n) + " bytes at offset " +
                                 std::to_string(pos_) + ", have " +
                                 std::to_string(data_.size() - pos_) + ")");
  }
}

std::uint8_t BinaryReader::get_u8(const std::string& record) {
  require(1, record);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t BinaryReader::get_u32(const std::string& record) {
  require(4, record);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::get_u64(const std::string& record) {
  require(8, record);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double BinaryReader::get_f64(const std::string& record) {
  require(8, record);
  double v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::string_view BinaryReader::get_bytes(std::size_t n, const std::string& record) {
  require(n, record);
  std::string_view v(data_.data() + pos_, n);
  pos_ += n;
  return v;
}

EnvelopeHeader read_envelope(BinaryReader& reader, std::string_view expected_magic) {
  const auto magic = reader.get_bytes(expected_magic.size(), "magic");
  if (magic != expected_magic) {
    throw ParseError("magic", "expected \"" + std::string(expected_magic) + "\"");
  }
  EnvelopeHeader env;
  env.version = reader.get_u32("version");
  const std::uint64_t len = reader.get_u64("header length");
  if (len > reader.remaining()) {
    throw ParseError("header", "declared length " + std::to_string(len) + " exceeds file size");
  }
  env.header_json = std::string(reader.get_bytes(len, "header"));
  return env;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace red::io
