#include "sigseg/synthdoc.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sigseg/common.hpp"

namespace sigseg::synth {

using nlohmann::json;

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

const char* to_string(BackgroundStyle s) {
  switch (s) {
    case BackgroundStyle::Clean: return "clean";
    case BackgroundStyle::Textured: return "textured";
    case BackgroundStyle::PrintedText: return "printed-text";
    case BackgroundStyle::PhotoNoise: return "photo-noise";
  }
  return "?";
}

namespace {

BackgroundStyle style_from_string(const std::string& s) {
  if (s == "clean") return BackgroundStyle::Clean;
  if (s == "textured") return BackgroundStyle::Textured;
  if (s == "printed-text") return BackgroundStyle::PrintedText;
  if (s == "photo-noise") return BackgroundStyle::PhotoNoise;
  throw ConfigError("unknown background style '" + s + "'");
}

struct Vec2 {
  float x, y;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(Vec2 a, float s) { return {a.x * s, a.y * s}; }

Vec2 bezier(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, float t) {
  const float u = 1.f - t;
  const float b0 = u * u * u, b1 = 3.f * u * u * t, b2 = 3.f * u * t * t,
              b3 = t * t * t;
  return p0 * b0 + p1 * b1 + p2 * b2 + p3 * b3;
}

// soft disk stamp, alpha falls off linearly over one pixel at the rim
void stamp(Image& coverage, Vec2 p, float radius, float darkness) {
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x - radius - 1.f)));
  const int x1 = std::min(coverage.w - 1, static_cast<int>(std::ceil(p.x + radius + 1.f)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y - radius - 1.f)));
  const int y1 = std::min(coverage.h - 1, static_cast<int>(std::ceil(p.y + radius + 1.f)));
  for (int y = y0; y <= y1; y++)
    for (int x = x0; x <= x1; x++) {
      const float dx = (x + 0.5f) - p.x;
      const float dy = (y + 0.5f) - p.y;
      const float dist = std::sqrt(dx * dx + dy * dy);
      float alpha = radius + 0.5f - dist;
      if (alpha <= 0.f) continue;
      if (alpha > 1.f) alpha = 1.f;
      alpha *= darkness;
      float& c = coverage.at(y, x, 0);
      if (alpha > c) c = alpha;
    }
}

void render_curve(Image& coverage, Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3,
                  float width0, float width1, float dark0, float dark1) {
  // polyline estimate to pick a sample count giving <= 0.5 px spacing
  float len = 0.f;
  Vec2 prev = p0;
  for (int i = 1; i <= 16; i++) {
    Vec2 q = bezier(p0, p1, p2, p3, static_cast<float>(i) / 16.f);
    len += std::sqrt((q.x - prev.x) * (q.x - prev.x) + (q.y - prev.y) * (q.y - prev.y));
    prev = q;
  }
  const int steps = std::max(2, static_cast<int>(len * 2.f));
  for (int i = 0; i <= steps; i++) {
    const float t = static_cast<float>(i) / steps;
    Vec2 q = bezier(p0, p1, p2, p3, t);
    const float w = width0 + (width1 - width0) * t;
    const float d = dark0 + (dark1 - dark0) * t;
    stamp(coverage, q, w * 0.5f, d);
  }
}

float clampf(float v, float lo, float hi) { return std::min(hi, std::max(lo, v)); }

// 3x3 row-major homogeneous transform helpers
using Mat3 = std::array<float, 9>;

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 3; j++)
      r[i * 3 + j] = a[i * 3 + 0] * b[0 * 3 + j] + a[i * 3 + 1] * b[1 * 3 + j] +
                     a[i * 3 + 2] * b[2 * 3 + j];
  return r;
}

Mat3 mat_invert(const Mat3& m) {
  const float det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                    m[1] * (m[3] * m[8] - m[5] * m[6]) +
                    m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::fabs(det) < 1e-12f) throw ContractError("distort: singular transform");
  const float id = 1.f / det;
  Mat3 r;
  r[0] = (m[4] * m[8] - m[5] * m[7]) * id;
  r[1] = (m[2] * m[7] - m[1] * m[8]) * id;
  r[2] = (m[1] * m[5] - m[2] * m[4]) * id;
  r[3] = (m[5] * m[6] - m[3] * m[8]) * id;
  r[4] = (m[0] * m[8] - m[2] * m[6]) * id;
  r[5] = (m[2] * m[3] - m[0] * m[5]) * id;
  r[6] = (m[3] * m[7] - m[4] * m[6]) * id;
  r[7] = (m[1] * m[6] - m[0] * m[7]) * id;
  r[8] = (m[0] * m[4] - m[1] * m[3]) * id;
  return r;
}

Vec2 mat_apply(const Mat3& m, Vec2 p) {
  const float w = m[6] * p.x + m[7] * p.y + m[8];
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w,
          (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

// homography mapping src[i] -> dst[i]; 8x8 Gaussian elimination with
// partial pivoting
Mat3 homography(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst) {
  double a[8][9] = {};
  for (int i = 0; i < 4; i++) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
  }
  for (int col = 0; col < 8; col++) {
    int pivot = col;
    for (int r = col + 1; r < 8; r++)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-12)
      throw ContractError("distort: degenerate corner configuration");
    std::swap(a[col], a[pivot]);
    for (int r = 0; r < 8; r++) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; c++) a[r][c] -= f * a[col][c];
    }
  }
  Mat3 h;
  for (int i = 0; i < 8; i++) h[i] = static_cast<float>(a[i][8] / a[i][i]);
  h[8] = 1.f;
  return h;
}

int clampi(int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); }

float sample_bilinear_clamped(const Image& img, float x, float y, int c) {
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  const float wx = x - x0;
  const float wy = y - y0;
  const int x1 = clampi(x0 + 1, 0, img.w - 1);
  const int y1 = clampi(y0 + 1, 0, img.h - 1);
  x0 = clampi(x0, 0, img.w - 1);
  y0 = clampi(y0, 0, img.h - 1);
  const float top = img.at(y0, x0, c) * (1.f - wx) + img.at(y0, x1, c) * wx;
  const float bot = img.at(y1, x0, c) * (1.f - wx) + img.at(y1, x1, c) * wx;
  return top * (1.f - wy) + bot * wy;
}

constexpr std::uint64_t kSignatureStream = 0x5349474Eull;  // "SIGN"
constexpr std::uint64_t kBackgroundStream = 0x42414B47ull; // "BAKG"
constexpr std::uint64_t kSampleStream = 0x53414D50ull;     // "SAMP"

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len,
                      std::uint64_t h) {
  for (std::size_t i = 0; i < len; i++) {
    h ^= data[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

SignatureRaster gen_signature(std::uint64_t seed, int h, int w,
                              float ink_threshold) {
  if (h < 32 || w < 32)
    throw ConfigError("gen_signature: canvas must be at least 32 px, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  Rng rng(seed);
  Image coverage(h, w, 1);

  const float margin = 0.12f;
  const float bw = w * rng.uniform(0.45f, 0.72f);
  const float bh = h * rng.uniform(0.18f, 0.40f);
  const float bx0 = rng.uniform(margin * w, std::max(margin * w + 1.f, w * (1.f - margin) - bw));
  const float by0 = rng.uniform(margin * h, std::max(margin * h + 1.f, h * (1.f - margin) - bh));
  const float bx1 = std::min(bx0 + bw, w * (1.f - margin));
  const float by1 = std::min(by0 + bh, h * (1.f - margin));

  auto point_in_box = [&]() -> Vec2 {
    return {rng.uniform(bx0, bx1), rng.uniform(by0, by1)};
  };
  auto clamp_to_box = [&](Vec2 p) -> Vec2 {
    return {clampf(p.x, bx0, bx1), clampf(p.y, by0, by1)};
  };

  const float base_width = rng.uniform(1.f, 4.f);
  const int n_strokes = 2 + static_cast<int>(rng.below(5));  // 2..6

  Vec2 pos = point_in_box();
  Vec2 dir{rng.uniform(-1.f, 1.f), rng.uniform(-0.5f, 0.5f)};
  const float step = std::max(4.f, bw / 4.f);

  for (int k = 0; k < n_strokes; k++) {
    if (k > 0 && rng.chance(0.3f)) pos = point_in_box();  // pen lift
    const int n_segments = 1 + static_cast<int>(rng.below(3));
    for (int seg = 0; seg < n_segments; seg++) {
      const Vec2 p0 = pos;
      Vec2 p1 = clamp_to_box(p0 + dir * rng.uniform(0.2f, 0.5f) +
                             Vec2{rng.uniform(-step, step) * 0.4f,
                                  rng.uniform(-step, step) * 0.4f});
      Vec2 p3 = clamp_to_box(p0 + dir * rng.uniform(0.8f, 1.4f) +
                             Vec2{rng.uniform(-step, step),
                                  rng.uniform(-step, step) * 0.8f});
      Vec2 p2 = clamp_to_box(p3 - (p3 - p1) * rng.uniform(0.2f, 0.5f));
      const float w0 = base_width * rng.uniform(0.7f, 1.3f);
      const float w1 = base_width * rng.uniform(0.7f, 1.3f);
      const float d0 = rng.uniform(0.72f, 1.f);
      const float d1 = rng.uniform(0.72f, 1.f);
      render_curve(coverage, p0, p1, p2, p3, w0, w1, d0, d1);
      dir = (p3 - p2) * rng.uniform(1.5f, 3.f);
      pos = p3;
    }
  }

  SignatureRaster out;
  out.mask = Image(h, w, 1);
  for (std::size_t i = 0; i < coverage.pixels.size(); i++)
    out.mask.pixels[i] = coverage.pixels[i] > ink_threshold ? 1.f : 0.f;
  out.coverage = std::move(coverage);
  out.base_width = base_width;
  return out;
}

Image gen_background(std::uint64_t seed, int h, int w, BackgroundStyle style) {
  Rng rng(seed);
  Image img(h, w, 3);
  const float base = rng.uniform(0.80f, 0.95f);
  float tint[3];
  for (float& t : tint) t = clampf(base + rng.uniform(-0.03f, 0.03f), 0.72f, 0.98f);

  auto fill_noise = [&](float amplitude) {
    for (int y = 0; y < h; y++)
      for (int x = 0; x < w; x++) {
        const float n = rng.uniform(-amplitude, amplitude);
        for (int c = 0; c < 3; c++)
          img.at(y, x, c) = clampf(tint[c] + n, 0.f, 1.f);
      }
  };

  switch (style) {
    case BackgroundStyle::Clean: {
      fill_noise(0.01f);
      break;
    }
    case BackgroundStyle::Textured: {
      // two-octave value noise on 8 px and 16 px lattices
      const int cell = 8;
      const int gw = w / cell + 2, gh = h / cell + 2;
      std::vector<float> lat1(static_cast<std::size_t>(gw) * gh);
      std::vector<float> lat2(static_cast<std::size_t>(gw) * gh);
      for (auto& v : lat1) v = rng.uniform(-1.f, 1.f);
      for (auto& v : lat2) v = rng.uniform(-1.f, 1.f);
      auto value_noise = [&](const std::vector<float>& lat, float fx, float fy) {
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const float tx = fx - x0, ty = fy - y0;
        const float v00 = lat[static_cast<std::size_t>(y0) * gw + x0];
        const float v01 = lat[static_cast<std::size_t>(y0) * gw + x0 + 1];
        const float v10 = lat[static_cast<std::size_t>(y0 + 1) * gw + x0];
        const float v11 = lat[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
        return (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
      };
      for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
          const float n = 0.09f * value_noise(lat1, x / 8.f, y / 8.f) +
                          0.05f * value_noise(lat2, x / 16.f, y / 16.f);
          for (int c = 0; c < 3; c++)
            img.at(y, x, c) = clampf(tint[c] + n, 0.f, 1.f);
        }
      break;
    }
    case BackgroundStyle::PrintedText: {
      fill_noise(0.012f);
      const int n_lines = 3 + static_cast<int>(rng.below(4));
      const int row_gap = std::max(4, h / (n_lines + 1));
      for (int li = 0; li < n_lines; li++) {
        const int y = row_gap * (li + 1) + static_cast<int>(rng.below(3)) - 1;
        if (y < 1 || y >= h - 1) continue;
        const int thickness = 1 + static_cast<int>(rng.below(2));
        const float dark = rng.uniform(0.18f, 0.42f);
        int x = 2 + static_cast<int>(rng.below(6));
        while (x < w - 4) {
          const int run = 4 + static_cast<int>(rng.below(12));
          for (int dx = 0; dx < run && x + dx < w - 2; dx++)
            for (int t = 0; t < thickness && y + t < h; t++)
              for (int c = 0; c < 3; c++) img.at(y + t, x + dx, c) = dark;
          x += run + 2 + static_cast<int>(rng.below(5));
        }
      }
      break;
    }
    case BackgroundStyle::PhotoNoise: {
      const float theta = rng.uniform(0.f, 6.2831853f);
      const float amp = rng.uniform(0.06f, 0.14f);
      const float cx = std::cos(theta), cy = std::sin(theta);
      const float diag = std::sqrt(static_cast<float>(w) * w + static_cast<float>(h) * h);
      for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
          const float ramp = amp * (2.f * ((x * cx + y * cy) / diag) - 0.5f);
          const float speckle = 0.05f * static_cast<float>(rng.normal());
          for (int c = 0; c < 3; c++)
            img.at(y, x, c) = clampf(tint[c] + ramp + speckle, 0.f, 1.f);
        }
      break;
    }
  }
  return img;
}

Image compose(const Image& coverage, const Image& background,
              const std::array<float, 3>& pen_color) {
  if (coverage.h != background.h || coverage.w != background.w ||
      coverage.channels != 1 || background.channels != 3)
    throw ShapeError("compose: coverage/background geometry mismatch");
  Image out = background;
  for (int y = 0; y < out.h; y++)
    for (int x = 0; x < out.w; x++) {
      const float a = coverage.at(y, x, 0);
      if (a <= 0.f) continue;
      for (int c = 0; c < 3; c++)
        out.at(y, x, c) = (1.f - a) * background.at(y, x, c) + a * pen_color[c];
    }
  return out;
}

Distorted distort(const Image& image, const Image& mask,
                  const DistortParams& params) {
  if (image.h != mask.h || image.w != mask.w || mask.channels != 1)
    throw ShapeError("distort: image/mask geometry mismatch");
  const float w = static_cast<float>(image.w);
  const float h = static_cast<float>(image.h);

  // rotation + scale about the canvas centre
  const float rad = params.rotation_deg * 3.14159265358979f / 180.f;
  const float cs = std::cos(rad) * params.scale;
  const float sn = std::sin(rad) * params.scale;
  const float cx = w * 0.5f, cy = h * 0.5f;
  const Mat3 rot{cs, -sn, cx - cs * cx + sn * cy,
                 sn, cs,  cy - sn * cx - cs * cy,
                 0.f, 0.f, 1.f};

  const std::array<Vec2, 4> corners{Vec2{0, 0}, Vec2{w, 0}, Vec2{w, h}, Vec2{0, h}};
  std::array<Vec2, 4> jittered = corners;
  for (int i = 0; i < 4; i++) {
    jittered[i].x += params.corner_jitter[2 * i];
    jittered[i].y += params.corner_jitter[2 * i + 1];
  }
  const Mat3 persp = homography(corners, jittered);
  const Mat3 forward = mat_mul(persp, rot);
  const Mat3 inverse = mat_invert(forward);

  Distorted out;
  out.image = Image(image.h, image.w, image.channels);
  out.mask = Image(mask.h, mask.w, 1);
  for (int y = 0; y < image.h; y++)
    for (int x = 0; x < image.w; x++) {
      const Vec2 src = mat_apply(inverse, {x + 0.5f, y + 0.5f});
      const float sx = src.x - 0.5f, sy = src.y - 0.5f;
      for (int c = 0; c < image.channels; c++)
        out.image.at(y, x, c) = sample_bilinear_clamped(image, sx, sy, c);
      const int nx = clampi(static_cast<int>(std::lround(sx)), 0, mask.w - 1);
      const int ny = clampi(static_cast<int>(std::lround(sy)), 0, mask.h - 1);
      out.mask.at(y, x, 0) = mask.at(ny, nx, 0);
    }
  return out;
}

SplitCounts split_counts(int n) {
  if (n < 3) throw ConfigError("dataset needs at least 3 samples for a split");
  SplitCounts c;
  c.train = n * 80 / 100;
  c.val = n * 15 / 100;
  c.test = n - c.train - c.val;
  return c;
}

SampleRecord build_sample(std::uint64_t global_seed, int index, int size,
                          const SynthConfig& cfg) {
  const int max_attempts = 64;
  for (int attempt = 0; attempt < max_attempts; attempt++) {
    const std::uint64_t seed =
        derive_seed(global_seed, kSampleStream,
                    static_cast<std::uint64_t>(index) * 64 + attempt);
    Rng rng(derive_seed(seed, 1, 0));

    const std::uint64_t sig_seed = derive_seed(
        global_seed, kSignatureStream,
        static_cast<std::uint64_t>(index) * 64 + attempt);
    SignatureRaster sig = gen_signature(sig_seed, size, size, cfg.ink_threshold);

    const int background_id = static_cast<int>(rng.below(
        static_cast<std::uint32_t>(std::max(1, cfg.background_pool))));
    const auto style = static_cast<BackgroundStyle>(background_id % 4);
    Image bg = gen_background(derive_seed(global_seed, kBackgroundStream,
                                          static_cast<std::uint64_t>(background_id)),
                              size, size, style);

    static const std::array<std::array<float, 3>, 5> kInks{{
        {0.06f, 0.09f, 0.42f},   // blue
        {0.05f, 0.05f, 0.08f},   // black
        {0.42f, 0.06f, 0.08f},   // red
        {0.05f, 0.32f, 0.10f},   // green
        {0.25f, 0.07f, 0.35f},   // violet
    }};
    std::array<float, 3> pen = kInks[rng.below(kInks.size())];
    for (float& c : pen) c = clampf(c + rng.uniform(-0.04f, 0.04f), 0.f, 0.55f);

    Image composed = compose(sig.coverage, bg, pen);

    // SampleRecord invariant: every mask pixel must differ from the
    // pre-blend background
    bool distinct = true;
    for (int y = 0; y < size && distinct; y++)
      for (int x = 0; x < size; x++) {
        if (sig.mask.at(y, x, 0) != 1.f) continue;
        float diff = 0.f;
        for (int c = 0; c < 3; c++)
          diff = std::max(diff, std::fabs(composed.at(y, x, c) - bg.at(y, x, c)));
        if (diff < 1e-4f) {
          distinct = false;
          break;
        }
      }
    if (!distinct) continue;

    DistortParams params;
    params.rotation_deg = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg);
    params.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    const float jmax = cfg.corner_jitter_fraction * size;
    for (auto& j : params.corner_jitter) j = rng.uniform(-jmax, jmax);

    Distorted warped = distort(composed, sig.mask, params);

    std::int64_t mask_count = 0;
    int x0 = size, y0 = size, x1 = -1, y1 = -1;
    for (int y = 0; y < size; y++)
      for (int x = 0; x < size; x++)
        if (warped.mask.at(y, x, 0) == 1.f) {
          mask_count++;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    const auto total = static_cast<std::int64_t>(size) * size;
    if (mask_count < 1 || mask_count > static_cast<std::int64_t>(cfg.max_mask_fraction * total))
      continue;  // signature out of frame or covering too much: resample

    SampleRecord rec;
    rec.image = std::move(warped.image);
    rec.mask = std::move(warped.mask);
    rec.meta.seed = sig_seed;
    rec.meta.background_id = background_id;
    rec.meta.style = style;
    rec.meta.pen_color = pen;
    rec.meta.stroke_width = sig.base_width;
    rec.meta.distortion = params;
    rec.meta.bbox = {x0, y0, x1, y1};
    return rec;
  }
  throw ContractError("build_sample: exhausted attempts for index " +
                      std::to_string(index));
}

std::vector<const SampleInfo*> Manifest::split_samples(Split s) const {
  std::vector<const SampleInfo*> out;
  for (const auto& sample : samples)
    if (sample.split == s) out.push_back(&sample);
  return out;
}

namespace {

json meta_to_json(const SampleMeta& m) {
  return json{{"seed", m.seed},
              {"background_id", m.background_id},
              {"style", to_string(m.style)},
              {"pen_color", m.pen_color},
              {"stroke_width", m.stroke_width},
              {"rotation_deg", m.distortion.rotation_deg},
              {"scale", m.distortion.scale},
              {"corner_jitter", m.distortion.corner_jitter},
              {"bbox", m.bbox}};
}

SampleMeta meta_from_json(const json& j) {
  SampleMeta m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.background_id = j.at("background_id").get<int>();
  m.style = style_from_string(j.at("style").get<std::string>());
  m.pen_color = j.at("pen_color").get<std::array<float, 3>>();
  m.stroke_width = j.at("stroke_width").get<float>();
  m.distortion.rotation_deg = j.at("rotation_deg").get<float>();
  m.distortion.scale = j.at("scale").get<float>();
  m.distortion.corner_jitter = j.at("corner_jitter").get<std::array<float, 8>>();
  m.bbox = j.at("bbox").get<std::array<int, 4>>();
  return m;
}

}  // namespace

Manifest build_dataset(std::uint64_t global_seed, int n_samples, int size,
                       const std::filesystem::path& out_dir,
                       const SynthConfig& cfg) {
  if (size < 32) throw ConfigError("dataset image size must be at least 32 px");
  const SplitCounts counts = split_counts(n_samples);

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");

  Manifest m;
  m.image_size = size;
  m.global_seed = global_seed;
  m.n_train = counts.train;
  m.n_val = counts.val;
  m.n_test = counts.test;
  m.root = out_dir;

  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (int i = 0; i < n_samples; i++) {
    SampleRecord rec = build_sample(global_seed, i, size, cfg);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05d.png", i);

    SampleInfo info;
    info.index = i;
    info.split = i < counts.train           ? Split::Train
                 : i < counts.train + counts.val ? Split::Val
                                                 : Split::Test;
    info.image_path = std::string("images/") + name;
    info.mask_path = std::string("masks/") + name;
    info.meta = rec.meta;

    const auto image_bytes = encode_png(rec.image);
    const auto mask_bytes = encode_png(rec.mask);
    hash = fnv1a64(image_bytes.data(), image_bytes.size(), hash);
    hash = fnv1a64(mask_bytes.data(), mask_bytes.size(), hash);
    {
      std::ofstream f(out_dir / info.image_path, std::ios::binary | std::ios::trunc);
      f.write(reinterpret_cast<const char*>(image_bytes.data()),
              static_cast<std::streamsize>(image_bytes.size()));
      if (!f) throw IoError("dataset: failed writing " + info.image_path);
    }
    {
      std::ofstream f(out_dir / info.mask_path, std::ios::binary | std::ios::trunc);
      f.write(reinterpret_cast<const char*>(mask_bytes.data()),
              static_cast<std::streamsize>(mask_bytes.size()));
      if (!f) throw IoError("dataset: failed writing " + info.mask_path);
    }
    m.samples.push_back(std::move(info));
  }
  m.corpus_hash = hex64(hash);
  save_manifest(m);
  return m;
}

void save_manifest(const Manifest& m) {
  json samples = json::array();
  for (const auto& s : m.samples)
    samples.push_back(json{{"index", s.index},
                           {"split", to_string(s.split)},
                           {"image", s.image_path},
                           {"mask", s.mask_path},
                           {"meta", meta_to_json(s.meta)}});
  const json doc{{"version", m.version},
                 {"image_size", m.image_size},
                 {"global_seed", m.global_seed},
                 {"counts",
                  {{"train", m.n_train}, {"val", m.n_val}, {"test", m.n_test}}},
                 {"corpus_hash", m.corpus_hash},
                 {"samples", samples}};
  std::ofstream f(m.root / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("dataset: cannot write manifest in " + m.root.string());
  f << doc.dump(2) << "\n";
}

Manifest load_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.json";
  std::ifstream f(path);
  if (!f) throw IoError("dataset: cannot open " + path.string());
  json doc;
  try {
    f >> doc;
  } catch (const json::exception& e) {
    throw IoError("dataset: invalid manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  try {
    m.version = doc.at("version").get<int>();
    m.image_size = doc.at("image_size").get<int>();
    m.global_seed = doc.at("global_seed").get<std::uint64_t>();
    m.n_train = doc.at("counts").at("train").get<int>();
    m.n_val = doc.at("counts").at("val").get<int>();
    m.n_test = doc.at("counts").at("test").get<int>();
    m.corpus_hash = doc.at("corpus_hash").get<std::string>();
    for (const auto& s : doc.at("samples")) {
      SampleInfo info;
      info.index = s.at("index").get<int>();
      info.split = split_from_string(s.at("split").get<std::string>());
      info.image_path = s.at("image").get<std::string>();
      info.mask_path = s.at("mask").get<std::string>();
      info.meta = meta_from_json(s.at("meta"));
      m.samples.push_back(std::move(info));
    }
  } catch (const json::exception& e) {
    throw IoError("dataset: manifest " + path.string() + " missing fields: " + e.what());
  }
  m.root = dataset_dir;
  return m;
}

}  // namespace sigseg::synth
