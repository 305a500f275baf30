#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vimprint/errors.hpp"

namespace vimprint::io {

/// Little-endian encoder shared by every binary artifact.
class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> vs) {
    for (float v : vs) f32(v);
  }
  void f32s(std::span<const double> vs) {
    for (double v : vs) f32(static_cast<float>(v));
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  void expect_magic(std::string_view tag) {
    if (bytes_.size() < tag.size() || std::memcmp(bytes_.data(), tag.data(), tag.size()) != 0)
      throw ParseError(ParseFailure::kBadMagic, context_ + ": bad magic (expected \"" + std::string(tag) + "\")");
    pos_ = tag.size();
  }
  void expect_version(std::uint32_t version) {
    const std::uint32_t v = u32();
    if (v != version)
      throw ParseError(ParseFailure::kBadVersion, context_ + ": unsupported version " + std::to_string(v));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (float& v : out) v = f32();
  }
  void f32s(std::span<double> out) {
    need(out.size() * 4);
    for (double& v : out) v = f32();
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const {
    if (pos_ != bytes_.size())
      throw ParseError(ParseFailure::kTrailingBytes,
                       context_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }
  /// Throws kTruncated unless at least `n` more bytes are present.
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError(ParseFailure::kTruncated, context_ + ": truncated payload");
  }
  const std::string& context() const { return context_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

/// Product of dimensions, throwing kShapeOverflow when it exceeds `limit`
/// elements or overflows.
std::size_t checked_volume(std::initializer_list<std::uint64_t> dims, const std::string& context,
                           std::uint64_t limit = (std::uint64_t{1} << 40));

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vimprint::io
