#include "sigseg/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "sigseg/common.hpp"

namespace sigseg::metrics {

using nlohmann::json;

double hard_dice(const Tensor& pred_mask, const Tensor& truth_mask) {
  if (!(pred_mask.shape() == truth_mask.shape()))
    throw ShapeError("hard_dice: shape mismatch");
  std::int64_t a = 0, b = 0, inter = 0;
  const float* p = pred_mask.ptr();
  const float* t = truth_mask.ptr();
  for (std::int64_t i = 0; i < pred_mask.numel(); i++) {
    if (p[i] != 0.f && p[i] != 1.f)
      throw ContractError("hard_dice: pred mask must be binary");
    if (t[i] != 0.f && t[i] != 1.f)
      throw ContractError("hard_dice: truth mask must be binary");
    const bool bp = p[i] == 1.f, bt = t[i] == 1.f;
    a += bt;
    b += bp;
    inter += bp && bt;
  }
  if (a + b == 0) return 1.0;  // two empty masks agree perfectly
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double ssim(const Image& a, const Image& b) {
  if (a.h != b.h || a.w != b.w || a.channels != 1 || b.channels != 1)
    throw ShapeError("ssim: inputs must be equally sized grayscale rasters");
  constexpr int kWin = 11;
  constexpr int kHalf = kWin / 2;
  if (a.h < kWin || a.w < kWin)
    throw MetricError("ssim: raster smaller than the 11x11 window");

  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;

  static const auto window = [] {
    std::array<double, kWin * kWin> w{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kWin; i++)
      for (int j = 0; j < kWin; j++) {
        const double dy = i - kHalf, dx = j - kHalf;
        w[i * kWin + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        sum += w[i * kWin + j];
      }
    for (auto& v : w) v /= sum;
    return w;
  }();

  double total = 0.0;
  std::int64_t count = 0;
  for (int y = kHalf; y < a.h - kHalf; y++)
    for (int x = kHalf; x < a.w - kHalf; x++) {
      double mu1 = 0, mu2 = 0, s1 = 0, s2 = 0, s12 = 0;
      for (int i = 0; i < kWin; i++)
        for (int j = 0; j < kWin; j++) {
          const double w = window[i * kWin + j];
          const double va = a.at(y + i - kHalf, x + j - kHalf, 0);
          const double vb = b.at(y + i - kHalf, x + j - kHalf, 0);
          mu1 += w * va;
          mu2 += w * vb;
          s1 += w * va * va;
          s2 += w * vb * vb;
          s12 += w * va * vb;
        }
      const double var1 = s1 - mu1 * mu1;
      const double var2 = s2 - mu2 * mu2;
      const double cov = s12 - mu1 * mu2;
      const double num = (2.0 * mu1 * mu2 + kC1) * (2.0 * cov + kC2);
      const double den = (mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2);
      total += num / den;
      count++;
    }
  const double mean = total / static_cast<double>(count);
  return std::min(1.0, std::max(0.0, mean));
}

MetricReport aggregate_report(std::string split,
                              std::vector<SampleMetrics> per_sample) {
  MetricReport r;
  r.split = std::move(split);
  r.per_sample = std::move(per_sample);
  r.count = static_cast<int>(r.per_sample.size());
  auto agg = [&](auto getter) {
    Aggregate a;
    if (r.count == 0) return a;
    double sum = 0;
    for (const auto& s : r.per_sample) sum += getter(s);
    a.rate = sum / r.count;
    if (r.count > 1) {
      double ss = 0;
      for (const auto& s : r.per_sample) {
        const double d = getter(s) - a.rate;
        ss += d * d;
      }
      a.stdev = std::sqrt(ss / (r.count - 1));
    }
    return a;
  };
  r.dsc = agg([](const SampleMetrics& s) { return s.dsc; });
  r.ssim = agg([](const SampleMetrics& s) { return s.ssim; });
  r.sift = agg([](const SampleMetrics& s) { return s.sift_rate; });
  return r;
}

MetricReport evaluate_model(const UNet* fcn, RLNet* rl,
                            const synth::Manifest& manifest, synth::Split split,
                            const EvalOptions& opts) {
  if (!opts.oracle && !fcn)
    throw ContractError("evaluate_model: need a model unless oracle mode is on");
  std::vector<SampleMetrics> rows;
  for (const auto* info : manifest.split_samples(split)) {
    Image img = read_png(manifest.root / info->image_path);
    Image mask_img = read_png(manifest.root / info->mask_path);
    for (auto& v : mask_img.pixels) v = v > 0.5f ? 1.f : 0.f;
    Tensor image = image_to_tensor(img);
    Tensor truth = image_to_tensor(mask_img);

    Tensor pred_mask;
    if (opts.oracle) {
      pred_mask = truth;
    } else {
      Tensor prob;
      if (rl && !opts.use_coarse) {
        Tensor coarse = fcn->forward(image, nullptr);
        prob = rl->forward(concat_channels(image, coarse, nullptr), nullptr,
                           BnMode::Eval);
      } else {
        prob = fcn->forward(image, nullptr);
      }
      pred_mask = binarize(prob, opts.threshold);
    }

    SampleMetrics row;
    char id[16];
    std::snprintf(id, sizeof id, "%05d", info->index);
    row.id = id;
    row.dsc = hard_dice(pred_mask, truth);
    const Image extract_pred = to_gray(tensor_to_image(apply_mask(image, pred_mask)));
    const Image extract_truth = to_gray(tensor_to_image(apply_mask(image, truth)));
    row.ssim = ssim(extract_pred, extract_truth);
    row.sift_rate = keypoint_match_rate(extract_pred, extract_truth);
    rows.push_back(std::move(row));
  }
  return aggregate_report(std::string(synth::to_string(split)), std::move(rows));
}

void write_report_json(const std::filesystem::path& path,
                       const MetricReport& report) {
  json per_sample = json::array();
  for (const auto& s : report.per_sample)
    per_sample.push_back(json{{"id", s.id},
                              {"dsc", s.dsc},
                              {"ssim", s.ssim},
                              {"sift_rate", s.sift_rate}});
  const json doc{
      {"split", report.split},
      {"count", report.count},
      {"std_convention", "sample(n-1)"},
      {"metrics",
       {{"dsc", {{"rate", report.dsc.rate}, {"std", report.dsc.stdev}}},
        {"ssim", {{"rate", report.ssim.rate}, {"std", report.ssim.stdev}}},
        {"sift", {{"rate", report.sift.rate}, {"std", report.sift.stdev}}}}},
      {"per_sample", per_sample}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("metrics: cannot write " + path.string());
  f << doc.dump(2) << "\n";
}

MetricReport read_report_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("metrics: cannot open " + path.string());
  json doc;
  try {
    f >> doc;
  } catch (const json::exception& e) {
    throw IoError("metrics: invalid report " + path.string() + ": " + e.what());
  }
  MetricReport r;
  try {
    r.split = doc.at("split").get<std::string>();
    r.count = doc.at("count").get<int>();
    r.dsc = {doc.at("metrics").at("dsc").at("rate").get<double>(),
             doc.at("metrics").at("dsc").at("std").get<double>()};
    r.ssim = {doc.at("metrics").at("ssim").at("rate").get<double>(),
              doc.at("metrics").at("ssim").at("std").get<double>()};
    r.sift = {doc.at("metrics").at("sift").at("rate").get<double>(),
              doc.at("metrics").at("sift").at("std").get<double>()};
    for (const auto& s : doc.at("per_sample")) {
      SampleMetrics row;
      row.id = s.at("id").get<std::string>();
      row.dsc = s.at("dsc").get<double>();
      row.ssim = s.at("ssim").get<double>();
      row.sift_rate = s.at("sift_rate").get<double>();
      r.per_sample.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw IoError("metrics: report " + path.string() + " missing fields: " + e.what());
  }
  return r;
}

void write_per_sample_csv(const std::filesystem::path& path,
                          const MetricReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("metrics: cannot write " + path.string());
  f << "sample_id,dsc,ssim,sift_rate\n";
  char buf[160];
  for (const auto& s : report.per_sample) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", s.id.c_str(), s.dsc,
                  s.ssim, s.sift_rate);
    f << buf;
  }
}

}  // namespace sigseg::metrics
