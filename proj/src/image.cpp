#include "sigseg/image.hpp"

#include <algorithm>
#include <cmath>

#include "sigseg/common.hpp"

namespace sigseg {

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw IoError("to_gray: expected 1 or 3 channels");
  Image out(img.h, img.w, 1);
  for (int y = 0; y < img.h; y++)
    for (int x = 0; x < img.w; x++)
      out.at(y, x, 0) = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) +
                        0.114f * img.at(y, x, 2);
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ContractError("resize: bad target size");
  if (out_h == img.h && out_w == img.w) return img;
  Image out(out_h, out_w, img.channels);
  const float sy = static_cast<float>(img.h) / out_h;
  const float sx = static_cast<float>(img.w) / out_w;
  for (int y = 0; y < out_h; y++) {
    const float fy = (y + 0.5f) * sy - 0.5f;
    int y0 = static_cast<int>(std::floor(fy));
    const float wy = fy - y0;
    int y1 = y0 + 1;
    y0 = std::clamp(y0, 0, img.h - 1);
    y1 = std::clamp(y1, 0, img.h - 1);
    for (int x = 0; x < out_w; x++) {
      const float fx = (x + 0.5f) * sx - 0.5f;
      int x0 = static_cast<int>(std::floor(fx));
      const float wx = fx - x0;
      int x1 = x0 + 1;
      x0 = std::clamp(x0, 0, img.w - 1);
      x1 = std::clamp(x1, 0, img.w - 1);
      for (int c = 0; c < img.channels; c++) {
        const float top = img.at(y0, x0, c) * (1.f - wx) + img.at(y0, x1, c) * wx;
        const float bot = img.at(y1, x0, c) * (1.f - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.f - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t(Shape4{1, img.channels, img.h, img.w});
  float* p = t.ptr();
  const std::int64_t plane = static_cast<std::int64_t>(img.h) * img.w;
  for (int y = 0; y < img.h; y++)
    for (int x = 0; x < img.w; x++)
      for (int c = 0; c < img.channels; c++)
        p[c * plane + static_cast<std::int64_t>(y) * img.w + x] = img.at(y, x, c);
  return t;
}

Image tensor_to_image(const Tensor& t) {
  const Shape4 s = t.shape();
  if (s.c != 1 && s.c != 3)
    throw ContractError("tensor_to_image: expected 1 or 3 channels, got " +
                        std::to_string(s.c));
  Image img(s.h, s.w, s.c);
  const float* p = t.ptr();
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int y = 0; y < s.h; y++)
    for (int x = 0; x < s.w; x++)
      for (int c = 0; c < s.c; c++)
        img.at(y, x, c) = p[c * plane + static_cast<std::int64_t>(y) * s.w + x];
  return img;
}

}  // namespace sigseg
