#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "sigseg/image.hpp"
#include "sigseg/model.hpp"
#include "sigseg/synthdoc.hpp"
#include "sigseg/tensor.hpp"

namespace sigseg::metrics {

// Set-form Dice on binary masks; both-empty pairs score 1.0.
double hard_dice(const Tensor& pred_mask, const Tensor& truth_mask);

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5) with the
// standard constants C1 = 0.01^2, C2 = 0.03^2 at unit dynamic range,
// computed over the valid (fully-covered) region and clamped to [0, 1].
double ssim(const Image& a, const Image& b);

struct Keypoint {
  float x = 0.f, y = 0.f;  // base-image coordinates
  float sigma = 0.f;
  int octave = 0, level = 0;
  float value = 0.f;  // DoG response
};

struct KeypointSet {
  std::vector<Keypoint> keypoints;
  std::vector<std::array<float, 128>> descriptors;
};

// Difference-of-Gaussians extrema over 3 octaves, 3 scales per octave,
// contrast threshold 0.03, described by upright 4x4x8 gradient-orientation
// histograms. Throws MetricError for rasters under 32x32.
KeypointSet detect_and_describe(const Image& gray);

// Greedy nearest-neighbour matching of truth keypoints into pred keypoints
// under the Lowe ratio 0.8; returns matched / total truth keypoints.
// A truth image without keypoints scores 1.0 iff pred has none too.
double keypoint_match_rate(const Image& pred, const Image& truth);

struct SampleMetrics {
  std::string id;
  double dsc = 0.0;
  double ssim = 0.0;
  double sift_rate = 0.0;
};

struct Aggregate {
  double rate = 0.0;
  double stdev = 0.0;  // sample standard deviation (n - 1)
};

struct MetricReport {
  std::string split;
  int count = 0;
  Aggregate dsc, ssim, sift;
  std::vector<SampleMetrics> per_sample;
};

MetricReport aggregate_report(std::string split,
                              std::vector<SampleMetrics> per_sample);

struct EvalOptions {
  bool oracle = false;      // prediction := ground truth (pipeline check)
  bool use_coarse = false;  // score the encoder-decoder output, not the refined one
  float threshold = 0.5f;
};

// Runs the model over a split: DSC on masks, SSIM and keypoint rate on the
// masked extractions rendered to grayscale over white.
MetricReport evaluate_model(const UNet* fcn, RLNet* rl,
                            const synth::Manifest& manifest, synth::Split split,
                            const EvalOptions& opts);

void write_report_json(const std::filesystem::path& path,
                       const MetricReport& report);
MetricReport read_report_json(const std::filesystem::path& path);
void write_per_sample_csv(const std::filesystem::path& path,
                          const MetricReport& report);

}  // namespace sigseg::metrics
