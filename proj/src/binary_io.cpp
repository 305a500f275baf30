#include "vimprint/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace vimprint::io {

std::size_t checked_volume(std::initializer_list<std::uint64_t> dims, const std::string& context,
                           std::uint64_t limit) {
  std::uint64_t volume = 1;
  for (std::uint64_t d : dims) {
    if (d != 0 && volume > limit / d)
      throw ParseError(ParseFailure::kShapeOverflow, context + ": declared shape is too large");
    volume *= d;
  }
  return static_cast<std::size_t>(volume);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("io: cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("io: write failed for " + path.string());
}

}  // namespace vimprint::io
