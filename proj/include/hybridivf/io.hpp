#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hybridivf/core.hpp"

namespace hybridivf {

using Magic = std::array<char, 4>;

inline constexpr Magic kVectorsMagic{'H', 'V', 'E', 'C'};
inline constexpr Magic kAttributesMagic{'H', 'A', 'T', 'T'};
inline constexpr Magic kCentroidsMagic{'H', 'C', 'E', 'N'};
inline constexpr Magic kListsMagic{'H', 'I', 'V', 'F'};
inline constexpr Magic kSegmentMagic{'H', 'S', 'E', 'G'};
inline constexpr std::uint32_t kFormatVersion = 1;

/// Little-endian byte buffer builder for the binary formats.
class ByteWriter {
 public:
  void magic(const Magic& m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64s(std::span<const std::int64_t> v);
  void u64s(std::span<const std::uint64_t> v);
  void f32s(std::span<const float> v);

  const std::vector<char>& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }
  void clear() { bytes_.clear(); }

 private:
  std::vector<char> bytes_;
};

/// Bounds-checked little-endian reader over a byte span. Running past the
/// end throws IoError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes, std::string what = "file")
      : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(const Magic& m);
  std::uint32_t u32();
  std::uint64_t u64();
  void i64s(std::span<std::int64_t> out);
  void u64s(std::span<std::uint64_t> out);
  void f32s(std::span<float> out);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const char> take(std::size_t n);

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

// Typed array decode/encode, shared by the readers above and the index.
void decode_f32(std::span<const char> in, std::span<float> out);
void decode_i64(std::span<const char> in, std::span<std::int64_t> out);
void decode_u64(std::span<const char> in, std::span<std::uint64_t> out);

/// Read-only file with positional reads; safe for concurrent readers.
class RandomAccessFile {
 public:
  explicit RandomAccessFile(const std::filesystem::path& path);
  ~RandomAccessFile();
  RandomAccessFile(const RandomAccessFile&) = delete;
  RandomAccessFile& operator=(const RandomAccessFile&) = delete;

  std::uint64_t size() const { return size_; }
  const std::filesystem::path& path() const { return path_; }
  /// Reads exactly out.size() bytes at `offset`; a short read is an IoError.
  void read_at(std::uint64_t offset, std::span<char> out) const;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);

// Dataset files.
//   vectors:    "HVEC", u32 version, u64 N, u32 D, N*D float32
//   attributes: "HATT", u32 version, u64 N, u32 M, N*M int64
void write_vectors_file(const std::filesystem::path& path, const FloatMatrix& vectors);
FloatMatrix read_vectors_file(const std::filesystem::path& path);
void write_attributes_file(const std::filesystem::path& path, const AttrMatrix& attrs);
AttrMatrix read_attributes_file(const std::filesystem::path& path);

}  // namespace hybridivf
