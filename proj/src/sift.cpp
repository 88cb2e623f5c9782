#include <algorithm>
#include <cmath>

#include "sigseg/common.hpp"
#include "sigseg/metrics.hpp"

// Upright difference-of-Gaussians keypoints with 4x4x8 gradient-orientation
// descriptors. No orientation assignment: prediction/truth pairs share the
// same pose, so rotation invariance buys nothing here.

namespace sigseg::metrics {

namespace {

constexpr int kOctaves = 3;
constexpr int kScalesPerOctave = 3;
constexpr float kSigma0 = 1.6f;
constexpr float kContrastThreshold = 0.03f;
constexpr float kLoweRatio = 0.8f;
constexpr float kPi = 3.14159265358979f;

Image gaussian_blur(const Image& src, float sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  float sum = 0.f;
  for (int i = -radius; i <= radius; i++) {
    kernel[i + radius] = std::exp(-static_cast<float>(i * i) / (2.f * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  auto clampi = [](int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); };
  Image tmp(src.h, src.w, 1);
  for (int y = 0; y < src.h; y++)
    for (int x = 0; x < src.w; x++) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; i++)
        acc += kernel[i + radius] * src.at(y, clampi(x + i, 0, src.w - 1), 0);
      tmp.at(y, x, 0) = acc;
    }
  Image out(src.h, src.w, 1);
  for (int y = 0; y < src.h; y++)
    for (int x = 0; x < src.w; x++) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; i++)
        acc += kernel[i + radius] * tmp.at(clampi(y + i, 0, src.h - 1), x, 0);
      out.at(y, x, 0) = acc;
    }
  return out;
}

Image downsample2(const Image& src) {
  Image out(src.h / 2, src.w / 2, 1);
  for (int y = 0; y < out.h; y++)
    for (int x = 0; x < out.w; x++) out.at(y, x, 0) = src.at(2 * y, 2 * x, 0);
  return out;
}

Image upsample2(const Image& src) {
  Image out(src.h * 2, src.w * 2, 1);
  for (int y = 0; y < out.h; y++) {
    const float fy = (y + 0.5f) / 2.f - 0.5f;
    const int y0 = std::max(0, std::min(src.h - 1, static_cast<int>(std::floor(fy))));
    const int y1 = std::min(src.h - 1, y0 + 1);
    const float wy = fy - std::floor(fy);
    for (int x = 0; x < out.w; x++) {
      const float fx = (x + 0.5f) / 2.f - 0.5f;
      const int x0 = std::max(0, std::min(src.w - 1, static_cast<int>(std::floor(fx))));
      const int x1 = std::min(src.w - 1, x0 + 1);
      const float wx = fx - std::floor(fx);
      out.at(y, x, 0) = (src.at(y0, x0, 0) * (1 - wx) + src.at(y0, x1, 0) * wx) * (1 - wy) +
                        (src.at(y1, x0, 0) * (1 - wx) + src.at(y1, x1, 0) * wx) * wy;
    }
  }
  return out;
}

std::array<float, 128> describe(const Image& gauss, float x, float y) {
  // 16x16 window around the keypoint, 4x4 cells, 8 orientation bins,
  // soft spatial/orientation assignment, Gaussian weighting sigma = 8
  std::array<float, 128> desc{};
  auto clampi = [](int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); };
  for (int dy = -8; dy < 8; dy++)
    for (int dx = -8; dx < 8; dx++) {
      const int px = clampi(static_cast<int>(std::round(x)) + dx, 1, gauss.w - 2);
      const int py = clampi(static_cast<int>(std::round(y)) + dy, 1, gauss.h - 2);
      const float gx = gauss.at(py, px + 1, 0) - gauss.at(py, px - 1, 0);
      const float gy = gauss.at(py + 1, px, 0) - gauss.at(py - 1, px, 0);
      const float mag = std::sqrt(gx * gx + gy * gy);
      if (mag <= 0.f) continue;
      float angle = std::atan2(gy, gx);
      if (angle < 0.f) angle += 2.f * kPi;
      const float weight =
          std::exp(-(static_cast<float>(dx * dx + dy * dy)) / (2.f * 8.f * 8.f));

      // cell coordinates in [0,4); soft-assign to the two nearest cells per axis
      const float cx = (dx + 8) / 4.f - 0.5f;
      const float cy = (dy + 8) / 4.f - 0.5f;
      const float ob = angle / (2.f * kPi) * 8.f;
      const int cx0 = static_cast<int>(std::floor(cx));
      const int cy0 = static_cast<int>(std::floor(cy));
      const int ob0 = static_cast<int>(std::floor(ob)) % 8;
      const float fx = cx - cx0;
      const float fy = cy - cy0;
      const float fo = ob - std::floor(ob);
      for (int iy = 0; iy < 2; iy++) {
        const int cyi = cy0 + iy;
        if (cyi < 0 || cyi > 3) continue;
        const float wy = iy ? fy : 1.f - fy;
        for (int ix = 0; ix < 2; ix++) {
          const int cxi = cx0 + ix;
          if (cxi < 0 || cxi > 3) continue;
          const float wx = ix ? fx : 1.f - fx;
          for (int io = 0; io < 2; io++) {
            const int obi = (ob0 + io) % 8;
            const float wo = io ? fo : 1.f - fo;
            desc[(cyi * 4 + cxi) * 8 + obi] += mag * weight * wy * wx * wo;
          }
        }
      }
    }
  // normalize, clamp at 0.2, renormalize
  auto l2 = [&] {
    float s = 0.f;
    for (float v : desc) s += v * v;
    return std::sqrt(s);
  };
  float norm = l2();
  if (norm > 0.f)
    for (auto& v : desc) v /= norm;
  for (auto& v : desc) v = std::min(v, 0.2f);
  norm = l2();
  if (norm > 0.f)
    for (auto& v : desc) v /= norm;
  return desc;
}

}  // namespace

KeypointSet detect_and_describe(const Image& gray) {
  if (gray.channels != 1)
    throw MetricError("keypoints: input must be grayscale");
  if (gray.h < 32 || gray.w < 32)
    throw MetricError("keypoints: raster smaller than 32x32 cannot support the pyramid");

  KeypointSet out;
  // thin strokes respond weakly at sigma 1.6, so the pyramid starts from a
  // doubled image; the three octaves run at 2x, 1x and 0.5x resolution
  Image base = upsample2(gray);
  const float k = std::pow(2.f, 1.f / kScalesPerOctave);
  for (int octave = 0; octave < kOctaves; octave++) {
    const int levels = kScalesPerOctave + 3;
    std::vector<Image> gauss;
    gauss.reserve(levels);
    for (int i = 0; i < levels; i++)
      gauss.push_back(gaussian_blur(base, kSigma0 * std::pow(k, static_cast<float>(i))));
    std::vector<Image> dog;
    dog.reserve(levels - 1);
    for (int i = 0; i + 1 < levels; i++) {
      Image d(base.h, base.w, 1);
      for (std::size_t p = 0; p < d.pixels.size(); p++)
        d.pixels[p] = gauss[i + 1].pixels[p] - gauss[i].pixels[p];
      dog.push_back(std::move(d));
    }
    for (int level = 1; level <= kScalesPerOctave; level++) {
      const Image& lo = dog[level - 1];
      const Image& mid = dog[level];
      const Image& hi = dog[level + 1];
      for (int y = 1; y < base.h - 1; y++)
        for (int x = 1; x < base.w - 1; x++) {
          const float v = mid.at(y, x, 0);
          if (std::fabs(v) < kContrastThreshold) continue;
          bool is_max = true, is_min = true;
          for (int dy = -1; dy <= 1 && (is_max || is_min); dy++)
            for (int dx = -1; dx <= 1; dx++) {
              const float a = lo.at(y + dy, x + dx, 0);
              const float b = mid.at(y + dy, x + dx, 0);
              const float c = hi.at(y + dy, x + dx, 0);
              if (a >= v || c >= v || (b >= v && (dy || dx))) is_max = false;
              if (a <= v || c <= v || (b <= v && (dy || dx))) is_min = false;
              if (!is_max && !is_min) break;
            }
          if (!is_max && !is_min) continue;
          Keypoint kp;
          const float scale = 0.5f * static_cast<float>(1 << octave);
          kp.x = (x + 0.5f) * scale - 0.5f;
          kp.y = (y + 0.5f) * scale - 0.5f;
          kp.sigma = kSigma0 * std::pow(k, static_cast<float>(level)) * scale;
          kp.octave = octave;
          kp.level = level;
          kp.value = v;
          out.keypoints.push_back(kp);
          out.descriptors.push_back(
              describe(gauss[level], static_cast<float>(x), static_cast<float>(y)));
        }
    }
    if (base.h / 2 < 8 || base.w / 2 < 8) break;
    base = downsample2(gauss[kScalesPerOctave]);  // sigma doubled
  }
  return out;
}

double keypoint_match_rate(const Image& pred, const Image& truth) {
  const KeypointSet t = detect_and_describe(truth);
  if (t.keypoints.empty()) {
    const KeypointSet p0 = detect_and_describe(pred);
    return p0.keypoints.empty() ? 1.0 : 0.0;
  }
  const KeypointSet p = detect_and_describe(pred);
  if (p.keypoints.empty()) return 0.0;

  std::vector<bool> used(p.keypoints.size(), false);
  int matched = 0;
  for (std::size_t ti = 0; ti < t.keypoints.size(); ti++) {
    float best = -1.f, second = -1.f;
    int best_idx = -1;
    for (std::size_t pi = 0; pi < p.keypoints.size(); pi++) {
      float dist = 0.f;
      for (int d = 0; d < 128; d++) {
        const float diff = t.descriptors[ti][d] - p.descriptors[pi][d];
        dist += diff * diff;
      }
      dist = std::sqrt(dist);
      if (!used[pi] && (best_idx < 0 || dist < best)) {
        if (best_idx >= 0 && (second < 0.f || best < second)) second = best;
        best = dist;
        best_idx = static_cast<int>(pi);
      } else if (second < 0.f || dist < second) {
        second = dist;
      }
    }
    if (best_idx < 0) break;  // all pred keypoints used up
    const bool pass = second < 0.f ? true : best <= kLoweRatio * second;
    if (pass) {
      used[best_idx] = true;
      matched++;
    }
  }
  return static_cast<double>(matched) / static_cast<double>(t.keypoints.size());
}

}  // namespace sigseg::metrics
