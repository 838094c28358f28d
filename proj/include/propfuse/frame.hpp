#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "propfuse/error.hpp"
#include "propfuse/geometry.hpp"

namespace propfuse {

// 8-bit image, row-major, 1 (gray) or 3 (RGB) interleaved channels.
struct Frame {
  FrameSize size;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Frame() = default;
  Frame(FrameSize s, int c) : size(s), channels(c) {
    if (!s.valid() || (c != 1 && c != 3))
      throw ValidationError("frame: invalid size or channel count");
    pixels.assign(static_cast<std::size_t>(s.width) * s.height * c, 0);
  }

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * size.width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * size.width + x) * channels + c];
  }

  // Rec. 601 luma in [0,255].
  double luminance(int x, int y) const {
    if (channels == 1) return at(x, y);
    return 0.299 * at(x, y, 0) + 0.587 * at(x, y, 1) + 0.114 * at(x, y, 2);
  }

  bool operator==(const Frame&) const = default;
};

inline void write_pnm(const Frame& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path);
  out << (f.channels == 1 ? "P5" : "P6") << "\n"
      << f.size.width << " " << f.size.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(f.pixels.data()),
            static_cast<std::streamsize>(f.pixels.size()));
  if (!out) throw IoError("short write to image " + path);
}

inline Frame read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };

  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") throw FormatError(path + ": not a binary PGM/PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError(path + ": malformed PNM header");
  }
  if (maxval != 255) throw FormatError(path + ": only 8-bit PNM is supported");
  ++pos;  // single whitespace byte after maxval
  Frame f(FrameSize{w, h}, magic == "P5" ? 1 : 3);
  if (bytes.size() < pos + f.pixels.size()) throw LengthError(path + ": truncated PNM payload");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), f.pixels.size(), f.pixels.begin());
  return f;
}

}  // namespace propfuse
