#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sigseg/common.hpp"
#include "sigseg/metrics.hpp"
#include "sigseg/synthdoc.hpp"

using namespace sigseg;
using namespace sigseg::metrics;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "sigseg_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// grayscale extraction-style raster: dark signature strokes on white
Image signature_extraction(std::uint64_t seed, int size = 64) {
  const synth::SignatureRaster sig = synth::gen_signature(seed, size, size);
  Image out(size, size, 1, 1.f);
  for (int y = 0; y < size; y++)
    for (int x = 0; x < size; x++)
      out.at(y, x, 0) = 1.f - 0.85f * sig.coverage.at(y, x, 0);
  return out;
}

Image shift_right_down(const Image& img, int px) {
  Image out(img.h, img.w, 1, 1.f);
  for (int y = 0; y < img.h - px; y++)
    for (int x = 0; x < img.w - px; x++)
      out.at(y + px, x + px, 0) = img.at(y, x, 0);
  return out;
}

Tensor mask_from(std::initializer_list<float> vals, int h, int w) {
  return Tensor::from_data({1, 1, h, w}, std::vector<float>(vals));
}

}  // namespace

TEST_CASE("hard dice identities") {
  Tensor a = mask_from({1, 1, 0, 0}, 2, 2);
  Tensor b = mask_from({0, 0, 1, 1}, 2, 2);
  CHECK(hard_dice(a, a) == 1.0);
  CHECK(hard_dice(a, b) == 0.0);

  // |A| = |B| = 4, overlap 2 -> 0.5
  Tensor p = mask_from({1, 1, 1, 1, 0, 0, 0, 0}, 2, 4);
  Tensor q = mask_from({1, 1, 0, 0, 1, 1, 0, 0}, 2, 4);
  CHECK(hard_dice(p, q) == 0.5);
  CHECK(hard_dice(q, p) == 0.5);  // symmetric

  // both empty -> perfect agreement
  Tensor e1 = mask_from({0, 0, 0, 0}, 2, 2);
  Tensor e2 = mask_from({0, 0, 0, 0}, 2, 2);
  CHECK(hard_dice(e1, e2) == 1.0);

  Tensor soft = mask_from({0.5f, 0, 0, 0}, 2, 2);
  CHECK_THROWS_AS(hard_dice(soft, e1), ContractError);
}

TEST_CASE("hard dice is monotone in overlap for fixed mask sizes") {
  // same |A|, |B|; growing intersection must not lower the score
  auto with_overlap = [](int overlap) {
    Tensor a(Shape4{1, 1, 1, 8});
    Tensor b(Shape4{1, 1, 1, 8});
    for (int i = 0; i < 4; i++) a.data()[i] = 1.f;
    for (int i = 0; i < overlap; i++) b.data()[i] = 1.f;
    for (int i = overlap; i < 4; i++) b.data()[4 + i - overlap] = 1.f;
    return hard_dice(a, b);
  };
  double prev = -1.0;
  for (int overlap = 0; overlap <= 4; overlap++) {
    const double d = with_overlap(overlap);
    CHECK(d >= prev);
    prev = d;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("ssim identities and closed forms") {
  const Image x = signature_extraction(3);
  CHECK(ssim(x, x) == 1.0);

  // symmetry
  const Image y = signature_extraction(4);
  CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-9));

  // constants: variance terms vanish, SSIM reduces to the luminance term
  Image c1(32, 32, 1, 0.4f);
  Image c2(32, 32, 1, 0.5f);
  const double mu1 = 0.4, mu2 = 0.5, C1 = 0.01 * 0.01;
  const double want = (2 * mu1 * mu2 + C1) / (mu1 * mu1 + mu2 * mu2 + C1);
  CHECK(ssim(c1, c2) == doctest::Approx(want).epsilon(1e-4));

  // inverted high-variance noise scores low
  Rng rng(11);
  Image noise(64, 64, 1);
  for (auto& v : noise.pixels) v = rng.unit();
  Image inv(64, 64, 1);
  for (std::size_t i = 0; i < noise.pixels.size(); i++)
    inv.pixels[i] = 1.f - noise.pixels[i];
  CHECK(ssim(noise, inv) < 0.2);

  Image tiny(8, 8, 1, 0.5f);
  CHECK_THROWS_AS(ssim(tiny, tiny), MetricError);
}

TEST_CASE("keypoint detector basics") {
  const Image sig = signature_extraction(21);
  const KeypointSet kps = detect_and_describe(sig);
  CHECK(kps.keypoints.size() >= 1);
  CHECK(kps.keypoints.size() == kps.descriptors.size());
  for (const auto& kp : kps.keypoints) {
    CHECK(kp.x >= 0.f);
    CHECK(kp.y >= 0.f);
    CHECK(kp.x < 64.f);
    CHECK(kp.y < 64.f);
    CHECK(std::fabs(kp.value) >= 0.03f);
  }

  Image small(16, 16, 1, 0.5f);
  CHECK_THROWS_AS(detect_and_describe(small), MetricError);
}

TEST_CASE("keypoint match rate identities") {
  const Image sig = signature_extraction(33);
  CHECK(keypoint_match_rate(sig, sig) == 1.0);

  // blank prediction vs signature truth
  Image blank(64, 64, 1, 1.f);
  CHECK(keypoint_match_rate(blank, sig) == 0.0);

  // both blank: zero keypoints on both sides count as agreement
  CHECK(keypoint_match_rate(blank, blank) == 1.0);
}

TEST_CASE("keypoint match rate tolerates a 2 px shift") {
  int passing = 0, total = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 100; seed < 120; seed++) {
    const Image truth = signature_extraction(seed);
    if (detect_and_describe(truth).keypoints.empty()) continue;
    const Image pred = shift_right_down(truth, 2);
    const double rate = keypoint_match_rate(pred, truth);
    worst = std::min(worst, rate);
    total++;
    if (rate >= 0.7) passing++;
  }
  INFO("worst shifted rate " << worst);
  CHECK(total >= 15);
  CHECK(passing == total);
}

TEST_CASE("aggregates are recomputable from per-sample values") {
  std::vector<SampleMetrics> rows = {{"a", 0.9, 0.8, 0.7},
                                     {"b", 0.5, 0.6, 0.7},
                                     {"c", 0.7, 1.0, 0.1}};
  const MetricReport r = aggregate_report("test", rows);
  double mean = 0;
  for (const auto& s : rows) mean += s.dsc;
  mean /= 3;
  double ss = 0;
  for (const auto& s : rows) ss += (s.dsc - mean) * (s.dsc - mean);
  CHECK(std::fabs(r.dsc.rate - mean) < 1e-9);
  CHECK(std::fabs(r.dsc.stdev - std::sqrt(ss / 2)) < 1e-9);
  CHECK(r.count == 3);
}

TEST_CASE("evaluate_model: truth oracle scores 1.0 on all metrics") {
  const auto dir = temp_dir("eval_ds");
  const synth::Manifest m = synth::build_dataset(55, 10, 64, dir);
  EvalOptions opts;
  opts.oracle = true;
  const MetricReport r = evaluate_model(nullptr, nullptr, m, synth::Split::Train, opts);
  CHECK(r.count == 8);
  CHECK(r.dsc.rate == doctest::Approx(1.0));
  CHECK(r.ssim.rate == doctest::Approx(1.0));
  CHECK(r.sift.rate == doctest::Approx(1.0));

  // report files round-trip
  const auto json_path = dir / "report.json";
  write_report_json(json_path, r);
  const MetricReport back = read_report_json(json_path);
  CHECK(back.count == r.count);
  CHECK(back.dsc.rate == doctest::Approx(r.dsc.rate));
  CHECK(back.per_sample.size() == r.per_sample.size());
  write_per_sample_csv(dir / "report.csv", r);
  CHECK(fs::exists(dir / "report.csv"));
}

TEST_CASE("evaluate_model: an all-background model scores ~0 DSC") {
  const auto dir = temp_dir("eval_bg");
  const synth::Manifest m = synth::build_dataset(56, 10, 64, dir);

  // force the head bias far negative so every probability sigmoids to ~0
  UNet fcn = UNet::build(UNetConfig{3, 4, 2, 1}, 3);
  ModelGraph g;
  fcn.collect(g);
  for (auto& v : g.find("fcn.head.bias").data()) v = -30.f;

  EvalOptions opts;
  const MetricReport r = evaluate_model(&fcn, nullptr, m, synth::Split::Train, opts);
  CHECK(r.dsc.rate == doctest::Approx(0.0));
}
