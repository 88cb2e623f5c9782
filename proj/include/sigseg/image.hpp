#pragma once

#include <filesystem>
#include <vector>

#include "sigseg/tensor.hpp"

namespace sigseg {

// Float raster in [0, 1], row-major, interleaved channels (1 = grayscale,
// 3 = RGB).
struct Image {
  int h = 0;
  int w = 0;
  int channels = 1;

  std::vector<float> pixels;

  Image() = default;
  Image(int h_, int w_, int channels_, float fill = 0.f)
      : h(h_), w(w_), channels(channels_),
        pixels(static_cast<std::size_t>(h_) * w_ * channels_, fill) {}

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
};

// 8-bit PNG I/O. Writing emits grayscale (1 channel) or RGB (3 channels)
// non-interlaced files; reading accepts 8-bit grayscale, RGB and RGBA
// (alpha dropped). Anything else raises IoError.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
std::vector<unsigned char> encode_png(const Image& img);

Image to_gray(const Image& img);  // Rec.601 luma for RGB input
Image resize_bilinear(const Image& img, int out_h, int out_w);

// (1, C, H, W) tensor from an image and back (batch element 0).
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

}  // namespace sigseg
