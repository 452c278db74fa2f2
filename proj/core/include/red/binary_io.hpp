#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace red::io {

// Little-endian encoder for the binary envelope shared by datasets (.ords)
// and parameter checkpoints:
//   magic[4] | u32 version | u64 header_len | header (JSON text) | payload
class BinaryWriter {
 public:
  void put_bytes(std::string_view bytes) { buf_.append(bytes); }
  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);

  void put_envelope(std::string_view magic, std::uint32_t version, std::string_view header);

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Bounds-checked decoder. Every getter takes the name of the record being
// decoded so truncation errors point at the offending record.
class BinaryReader {
 public:
  explicit BinaryReader(std::span<const char> data) : data_(data) {}

  std::uint8_t get_u8(const std::string& record);
  std::uint32_t get_u32(const std::string& record);
  std::uint64_t get_u64(const std::string& record);
  double get_f64(const std::string& record);
  std::string_view get_bytes(std::size_t n, const std::string& record);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t n, const std::string& record) const;

  std::span<const char> data_;
  std::size_t pos_ = 0;
};

struct EnvelopeHeader {
  std::uint32_t version = 0;
  std::string header_json;
};

// Reads magic, version and JSON header; leaves the reader at the payload.
EnvelopeHeader read_envelope(BinaryReader& reader, std::string_view expected_magic);

std::string read_file(const std::filesystem::path& path);

// Writes through a temporary sibling and renames, so a crash never leaves a
// half-written file under the final name.
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::string hex64(std::uint64_t v);

}  // namespace red::io
