#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "sigseg/common.hpp"
#include "sigseg/image.hpp"

namespace sigseg {

namespace {

const unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

void put_u32be(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v >> 24));
  buf.push_back(static_cast<unsigned char>(v >> 16));
  buf.push_back(static_cast<unsigned char>(v >> 8));
  buf.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& buf, const char type[4],
               const std::vector<unsigned char>& data) {
  put_u32be(buf, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_off = buf.size();
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), data.begin(), data.end());
  const std::uint32_t crc = crc32_ieee(buf.data() + type_off, 4 + data.size());
  put_u32be(buf, crc);
}

unsigned char to_byte(float v) {
  float s = v * 255.f + 0.5f;
  if (s < 0.f) s = 0.f;
  if (s > 255.f) s = 255.f;
  return static_cast<unsigned char>(s);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<unsigned char> encode_png(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("png: can only encode 1- or 3-channel images");
  if (img.h < 1 || img.w < 1) throw IoError("png: empty image");

  std::vector<unsigned char> out(kSignature, kSignature + 8);

  std::vector<unsigned char> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);          // gray / truecolor
  ihdr.push_back(0);                                  // compression
  ihdr.push_back(0);                                  // filter
  ihdr.push_back(0);                                  // no interlace
  put_chunk(out, "IHDR", ihdr);

  const std::size_t row_bytes = static_cast<std::size_t>(img.w) * img.channels;
  std::vector<unsigned char> raw((row_bytes + 1) * img.h);
  for (int y = 0; y < img.h; y++) {
    unsigned char* row = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
    row[0] = 0;  // filter: none
    for (int x = 0; x < img.w; x++)
      for (int c = 0; c < img.channels; c++)
        row[1 + static_cast<std::size_t>(x) * img.channels + c] = to_byte(img.at(y, x, c));
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  compressed.resize(bound);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("png: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("png: short write to " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("png: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (buf.size() < 8 || std::memcmp(buf.data(), kSignature, 8) != 0)
    throw IoError("png " + where + ": not a PNG file");

  std::size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = 0;
  std::vector<unsigned char> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = (static_cast<std::uint32_t>(buf[pos]) << 24) |
                              (static_cast<std::uint32_t>(buf[pos + 1]) << 16) |
                              (static_cast<std::uint32_t>(buf[pos + 2]) << 8) |
                              buf[pos + 3];
    if (pos + 12 + len > buf.size())
      throw IoError("png " + where + ": truncated chunk");
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const unsigned char* data = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("png " + where + ": bad IHDR");
      w = (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
      h = (data[4] << 24) | (data[5] << 16) | (data[6] << 8) | data[7];
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw IoError("png " + where + ": interlaced PNG unsupported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty())
    throw IoError("png " + where + ": missing required chunks");
  if (w < 1 || h < 1) throw IoError("png " + where + ": bad dimensions");
  if (bit_depth != 8)
    throw IoError("png " + where + ": only 8-bit depth supported");
  int src_channels;
  switch (color_type) {
    case 0: src_channels = 1; break;
    case 2: src_channels = 3; break;
    case 6: src_channels = 4; break;
    default:
      throw IoError("png " + where + ": unsupported color type " +
                    std::to_string(color_type));
  }

  const std::size_t row_bytes = static_cast<std::size_t>(w) * src_channels;
  const std::size_t raw_size = (row_bytes + 1) * h;
  std::vector<unsigned char> raw(raw_size);
  uLongf dest_len = static_cast<uLongf>(raw_size);
  if (uncompress(raw.data(), &dest_len, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      dest_len != raw_size)
    throw IoError("png " + where + ": inflate failed");

  // undo per-row filters in place
  const int bpp = src_channels;
  std::vector<unsigned char> prev(row_bytes, 0);
  std::vector<unsigned char> cur(row_bytes);
  const int out_channels = src_channels == 4 ? 3 : src_channels;
  Image img(h, w, out_channels);
  for (int y = 0; y < h; y++) {
    const unsigned char* src = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
    const unsigned char filter = src[0];
    std::memcpy(cur.data(), src + 1, row_bytes);
    switch (filter) {
      case 0:
        break;
      case 1:
        for (std::size_t i = bpp; i < row_bytes; i++) cur[i] += cur[i - bpp];
        break;
      case 2:
        for (std::size_t i = 0; i < row_bytes; i++) cur[i] += prev[i];
        break;
      case 3:
        for (std::size_t i = 0; i < row_bytes; i++) {
          const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
          cur[i] += static_cast<unsigned char>((left + prev[i]) / 2);
        }
        break;
      case 4:
        for (std::size_t i = 0; i < row_bytes; i++) {
          const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
          const int upleft = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
          cur[i] += static_cast<unsigned char>(paeth(left, prev[i], upleft));
        }
        break;
      default:
        throw IoError("png " + where + ": bad filter type");
    }
    for (int x = 0; x < w; x++)
      for (int c = 0; c < out_channels; c++)
        img.at(y, x, c) =
            static_cast<float>(cur[static_cast<std::size_t>(x) * src_channels + c]) / 255.f;
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace sigseg
