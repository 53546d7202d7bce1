#include "hybridivf/io.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>

namespace hybridivf {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

template <typename T>
void append_array(std::vector<char>& out, std::span<const T> v) {
  const std::size_t start = out.size();
  out.resize(start + v.size_bytes());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + start, v.data(), v.size_bytes());
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T le = to_little(v[i]);
      std::memcpy(out.data() + start + i * sizeof(T), &le, sizeof(T));
    }
  }
}

template <typename T>
void decode_array(std::span<const char> in, std::span<T> out) {
  if (in.size() != out.size_bytes()) throw IoError("decode: byte count does not match element count");
  std::memcpy(out.data(), in.data(), in.size());
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& x : out) x = to_little(x);
  }
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  const auto le = to_little(v);
  append_array(bytes_, std::span<const std::uint32_t>(&le, 1));
}

void ByteWriter::u64(std::uint64_t v) {
  const auto le = to_little(v);
  append_array(bytes_, std::span<const std::uint64_t>(&le, 1));
}

void ByteWriter::i64s(std::span<const std::int64_t> v) { append_array(bytes_, v); }
void ByteWriter::u64s(std::span<const std::uint64_t> v) { append_array(bytes_, v); }
void ByteWriter::f32s(std::span<const float> v) { append_array(bytes_, v); }

std::span<const char> ByteReader::take(std::size_t n) {
  if (n > remaining()) {
    throw IoError(what_ + ": truncated (wanted " + std::to_string(n) + " bytes at offset " +
                  std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
  }
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::expect_magic(const Magic& m) {
  const auto s = take(4);
  if (!std::equal(m.begin(), m.end(), s.begin())) {
    throw IoError(what_ + ": bad magic (expected '" + std::string(m.data(), 4) + "')");
  }
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v = 0;
  decode_array(take(4), std::span<std::uint32_t>(&v, 1));
  return v;
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v = 0;
  decode_array(take(8), std::span<std::uint64_t>(&v, 1));
  return v;
}

void ByteReader::i64s(std::span<std::int64_t> out) { decode_array(take(out.size_bytes()), out); }
void ByteReader::u64s(std::span<std::uint64_t> out) { decode_array(take(out.size_bytes()), out); }
void ByteReader::f32s(std::span<float> out) { decode_array(take(out.size_bytes()), out); }

void decode_f32(std::span<const char> in, std::span<float> out) { decode_array(in, out); }
void decode_i64(std::span<const char> in, std::span<std::int64_t> out) { decode_array(in, out); }
void decode_u64(std::span<const char> in, std::span<std::uint64_t> out) { decode_array(in, out); }

RandomAccessFile::RandomAccessFile(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd_ < 0) throw IoError("cannot open " + path.string() + ": " + errno_text());
  struct stat st {};
  if (::fstat(fd_, &st) != 0) {
    ::close(fd_);
    throw IoError("cannot stat " + path.string() + ": " + errno_text());
  }
  size_ = static_cast<std::uint64_t>(st.st_size);
}

RandomAccessFile::~RandomAccessFile() {
  if (fd_ >= 0) ::close(fd_);
}

void RandomAccessFile::read_at(std::uint64_t offset, std::span<char> out) const {
  if (offset + out.size() > size_) {
    throw IoError(path_.string() + ": read of " + std::to_string(out.size()) + " bytes at offset " +
                  std::to_string(offset) + " runs past end of file (" + std::to_string(size_) +
                  " bytes)");
  }
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::pread(fd_, out.data() + done, out.size() - done,
                              static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(path_.string() + ": read failed: " + errno_text());
    }
    if (n == 0) throw IoError(path_.string() + ": unexpected end of file");
    done += static_cast<std::size_t>(n);
  }
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> bytes(size);
  if (!in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw IoError("cannot read " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_vectors_file(const std::filesystem::path& path, const FloatMatrix& vectors) {
  ByteWriter w;
  w.magic(kVectorsMagic);
  w.u32(kFormatVersion);
  w.u64(vectors.rows());
  w.u32(static_cast<std::uint32_t>(vectors.cols()));
  w.f32s(vectors.data());
  write_file_atomic(path, w.bytes());
}

FloatMatrix read_vectors_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic(kVectorsMagic);
  if (const auto v = r.u32(); v != kFormatVersion) {
    throw IoError(path.string() + ": unsupported version " + std::to_string(v));
  }
  const std::uint64_t n = r.u64();
  const std::uint32_t d = r.u32();
  if (d == 0) throw IoError(path.string() + ": zero dimensionality");
  if (r.remaining() != n * d * sizeof(float)) {
    throw IoError(path.string() + ": payload size does not match header (N=" + std::to_string(n) +
                  ", D=" + std::to_string(d) + ")");
  }
  FloatMatrix m(n, d);
  r.f32s(m.data());
  return m;
}

void write_attributes_file(const std::filesystem::path& path, const AttrMatrix& attrs) {
  ByteWriter w;
  w.magic(kAttributesMagic);
  w.u32(kFormatVersion);
  w.u64(attrs.rows());
  w.u32(static_cast<std::uint32_t>(attrs.cols()));
  w.i64s(attrs.data());
  write_file_atomic(path, w.bytes());
}

AttrMatrix read_attributes_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic(kAttributesMagic);
  if (const auto v = r.u32(); v != kFormatVersion) {
    throw IoError(path.string() + ": unsupported version " + std::to_string(v));
  }
  const std::uint64_t n = r.u64();
  const std::uint32_t m = r.u32();
  if (r.remaining() != n * m * sizeof(std::int64_t)) {
    throw IoError(path.string() + ": payload size does not match header (N=" + std::to_string(n) +
                  ", M=" + std::to_string(m) + ")");
  }
  AttrMatrix a(n, m);
  r.i64s(a.data());
  return a;
}

}  // namespace hybridivf
