#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lvmark/common.hpp"

// Minimal PNG codec: 8-bit gray / RGB / RGBA, no interlacing. Enough for
// frame-folder ingestion and report plots without an image library.

namespace lvmark::png {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1, 3 or 4
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

namespace detail {

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

inline std::vector<std::uint8_t> inflate_all(const std::vector<std::uint8_t>& in,
                                             std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw FormatError("png: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0)
    throw FormatError("png: IDAT payload is truncated or corrupt");
  return out;
}

inline std::vector<std::uint8_t> deflate_all(const std::vector<std::uint8_t>& in) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK)
    throw FormatError("png: deflate failed");
  out.resize(bound);
  return out;
}

}  // namespace detail

inline Image decode(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw FormatError("png: bad signature");
  Image img;
  int bit_depth = 0, color_type = -1;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  while (pos + 12 <= bytes.size()) {
    const std::uint32_t len = detail::be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw FormatError("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError("png: bad IHDR length");
      img.width = static_cast<int>(detail::be32(data));
      img.height = static_cast<int>(detail::be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw FormatError("png: interlaced images are unsupported");
      if (bit_depth != 8) throw FormatError("png: only 8-bit depth is supported");
      if (color_type == 0)
        img.channels = 1;
      else if (color_type == 2)
        img.channels = 3;
      else if (color_type == 6)
        img.channels = 4;
      else
        throw FormatError("png: unsupported color type " + std::to_string(color_type));
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0 || img.channels == 0)
    throw FormatError("png: missing IHDR");
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  auto raw = detail::inflate_all(idat, (stride + 1) * static_cast<std::size_t>(img.height));
  img.pixels.resize(stride * static_cast<std::size_t>(img.height));
  const int bpp = img.channels;
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * static_cast<std::size_t>(y)];
    const std::uint8_t* src = &raw[(stride + 1) * static_cast<std::size_t>(y) + 1];
    std::uint8_t* cur = &img.pixels[stride * static_cast<std::size_t>(y)];
    const std::uint8_t* up = y > 0 ? cur - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - static_cast<std::size_t>(bpp)] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - static_cast<std::size_t>(bpp)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw FormatError("png: unknown filter " + std::to_string(filter));
      }
      cur[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode(const Image& img) {
  require(img.channels == 1 || img.channels == 3 || img.channels == 4,
          "png encode: 1, 3 or 4 channels expected");
  require(static_cast<std::size_t>(img.width) * img.height * img.channels == img.pixels.size(),
          "png encode: pixel buffer size mismatch");
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw[(stride + 1) * static_cast<std::size_t>(y)] = 0;  // filter: none
    std::memcpy(&raw[(stride + 1) * static_cast<std::size_t>(y) + 1],
                &img.pixels[stride * static_cast<std::size_t>(y)], stride);
  }
  const auto compressed = detail::deflate_all(raw);

  std::vector<std::uint8_t> out;
  static const std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), kSig, kSig + 8);
  auto chunk = [&out](const char* type, const std::vector<std::uint8_t>& data) {
    detail::put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    detail::put_be32(out, static_cast<std::uint32_t>(crc));
  };
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);
  ihdr.push_back(img.channels == 1 ? 0 : (img.channels == 3 ? 2 : 6));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk("IHDR", ihdr);
  chunk("IDAT", compressed);
  chunk("IEND", {});
  return out;
}

inline Image read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("png: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes);
}

inline void write_file(const std::string& path, const Image& img) {
  const auto bytes = encode(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("png: cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("png: short write to " + path);
}

}  // namespace lvmark::png
