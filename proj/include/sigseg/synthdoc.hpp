#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sigseg/image.hpp"

namespace sigseg::synth {

enum class Split { Train, Val, Test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

enum class BackgroundStyle { Clean, Textured, PrintedText, PhotoNoise };
const char* to_string(BackgroundStyle s);

struct DistortParams {
  float rotation_deg = 0.f;
  float scale = 1.f;
  // corner offsets in pixels: tl, tr, br, bl
  std::array<float, 8> corner_jitter{};

  static DistortParams identity() { return {}; }
};

struct SampleMeta {
  std::uint64_t seed = 0;
  int background_id = 0;
  BackgroundStyle style = BackgroundStyle::Clean;
  std::array<float, 3> pen_color{};
  float stroke_width = 0.f;
  DistortParams distortion;
  std::array<int, 4> bbox{};  // x0, y0, x1, y1 (inclusive) of the final mask
};

struct SampleRecord {
  Image image;  // RGB
  Image mask;   // 1 channel, values exactly 0 or 1
  SampleMeta meta;
};

struct SynthConfig {
  float ink_threshold = 0.1f;    // coverage above this becomes mask
  float max_mask_fraction = 0.2f;
  int background_pool = 200;
  float rotation_range_deg = 15.f;
  float scale_min = 0.8f;
  float scale_max = 1.25f;
  float corner_jitter_fraction = 0.08f;
};

struct SignatureRaster {
  Image coverage;  // 1 channel, ink opacity in [0, 1]
  Image mask;      // coverage > threshold
  float base_width = 0.f;
};

// 2-6 connected strokes from composite cubic Bezier chains, width 1-4 px
// with per-point darkness jitter, anti-aliased. Throws ConfigError for
// canvases under 32 px.
SignatureRaster gen_signature(std::uint64_t seed, int h, int w,
                              float ink_threshold = 0.1f);

Image gen_background(std::uint64_t seed, int h, int w, BackgroundStyle style);

// Alpha-blend: out = (1 - a) * background + a * pen_color, a = ink coverage.
Image compose(const Image& coverage, const Image& background,
              const std::array<float, 3>& pen_color);

// Projective warp; image sampled bilinearly, mask nearest-neighbour, both
// with clamp-to-edge fill.
struct Distorted {
  Image image;
  Image mask;
};
Distorted distort(const Image& image, const Image& mask,
                  const DistortParams& params);

struct SampleInfo {
  int index = 0;
  Split split = Split::Train;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
  SampleMeta meta;
};

struct Manifest {
  int version = 1;
  int image_size = 0;
  std::uint64_t global_seed = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  std::string corpus_hash;
  std::vector<SampleInfo> samples;
  std::filesystem::path root;

  std::vector<const SampleInfo*> split_samples(Split s) const;
};

// 80/15/5 split by index (floor percentages, remainder to test).
struct SplitCounts {
  int train, val, test;
};
SplitCounts split_counts(int n);

// Deterministically renders one sample; regenerates with the next sub-seed
// when the distorted mask is empty, covers more than max_mask_fraction, or a
// mask pixel fails to differ from the pre-blend background.
SampleRecord build_sample(std::uint64_t global_seed, int index, int size,
                          const SynthConfig& cfg);

Manifest build_dataset(std::uint64_t global_seed, int n_samples, int size,
                       const std::filesystem::path& out_dir,
                       const SynthConfig& cfg = {});

Manifest load_manifest(const std::filesystem::path& dataset_dir);
void save_manifest(const Manifest& m);

}  // namespace sigseg::synth
