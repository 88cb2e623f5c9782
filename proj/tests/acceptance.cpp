// Acceptance suite: runs every release criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code 0 iff all criteria pass.
//
// The desk-scale pipeline (criteria 5, 6, 9) trains for real, so a full run
// takes on the order of an hour single-threaded.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigseg/common.hpp"
#include "sigseg/gradcheck.hpp"
#include "sigseg/kernels.hpp"
#include "sigseg/metrics.hpp"
#include "sigseg/model.hpp"
#include "sigseg/ops.hpp"
#include "sigseg/optim.hpp"
#include "sigseg/stats.hpp"
#include "sigseg/synthdoc.hpp"
#include "sigseg/trainer.hpp"
#include "support/stat_oracles.hpp"

namespace fs = std::filesystem;
using namespace sigseg;
using nlohmann::json;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& label, const std::string& detail) {
  std::printf("criterion %2d [%s] %s%s%s\n", id, pass ? "PASS" : "FAIL",
              label.c_str(), detail.empty() ? "" : ": ", detail.c_str());
  std::fflush(stdout);
  if (!pass) failures++;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("acceptance: missing file " + p.string());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "SIGSEG_THREADS=1 " + std::string(SIGSEG_CLI_PATH) +
                          " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Tensor rand_tensor(Shape4 s, Rng& rng) {
  Tensor t(s);
  for (auto& v : t.data()) v = rng.uniform(-1.f, 1.f);
  return t;
}

// ---- criterion 1: finite-difference gradient suite under 60 s ----
void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckOptions opts;  // h = 1e-3, tolerance 1e-2, extents <= 5
  const auto results = run_gradient_checks(opts);
  const double secs = seconds_since(t0);
  bool all = results.size() >= 10;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& r : results) {
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_op = r.op;
    }
    all = all && r.pass;
  }
  all = all && secs < 60.0;
  std::ostringstream d;
  d << results.size() << " ops, worst rel err " << worst << " (" << worst_op
    << "), " << secs << " s";
  report(1, all, "gradient suite vs central differences", d.str());
}

// ---- criterion 2: production kernels vs naive-loop oracles, 50 cases each ----
void criterion_2() {
  namespace k = sigseg::kernels;
  Rng rng(2025);
  bool ok = true;
  float worst = 0.f;
  auto check = [&](std::span<const float> got, std::span<const float> want) {
    for (std::size_t i = 0; i < got.size(); i++) {
      const float diff = std::fabs(got[i] - want[i]);
      worst = std::max(worst, diff);
      if (diff > 1e-6f) ok = false;
    }
  };
  for (int c = 0; c < 50; c++) {
    // conv2d
    {
      const int n = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
      const int h = 5 + rng.below(8), w = 5 + rng.below(8);
      const int kk = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
      Tensor x = rand_tensor({n, cin, h, w}, rng);
      Tensor wt = rand_tensor({cout, cin, kk, kk}, rng);
      Tensor b = rand_tensor({1, cout, 1, 1}, rng);
      const auto d = k::conv_dims(x.shape(), wt.shape(), stride, pad);
      std::vector<float> ref(static_cast<std::size_t>(d.n) * d.cout * d.hout * d.wout);
      std::vector<float> got(ref.size());
      k::reference::conv2d_forward(d, x.ptr(), wt.ptr(), b.ptr(), ref.data());
      k::conv2d_forward(d, x.ptr(), wt.ptr(), b.ptr(), got.data());
      check(got, ref);
    }
    // upconv2d
    {
      const int n = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
      const int h = 3 + rng.below(6), w = 3 + rng.below(6);
      const bool paper_geometry = rng.chance(0.7f);
      const int kk = paper_geometry ? 2 : 3;
      const int stride = paper_geometry ? 2 : 1 + rng.below(2);
      Tensor x = rand_tensor({n, cin, h, w}, rng);
      Tensor wt = rand_tensor({cin, cout, kk, kk}, rng);
      const auto d = k::upconv_dims(x.shape(), wt.shape(), stride);
      std::vector<float> ref(static_cast<std::size_t>(d.n) * d.cout * d.hout * d.wout);
      std::vector<float> got(ref.size());
      k::reference::upconv2d_forward(d, x.ptr(), wt.ptr(), ref.data());
      k::upconv2d_forward(d, x.ptr(), wt.ptr(), got.data());
      check(got, ref);
    }
    // max_pool2d
    {
      const int n = 1 + rng.below(2), ch = 1 + rng.below(4);
      const int h = 6 + rng.below(8), w = 6 + rng.below(8);
      const int kk = 2 + rng.below(2), stride = 1 + rng.below(3);
      Tensor x = rand_tensor({n, ch, h, w}, rng);
      const auto d = k::pool_dims(x.shape(), kk, stride);
      std::vector<float> ref(static_cast<std::size_t>(d.n) * d.c * d.hout * d.wout);
      std::vector<float> got(ref.size());
      std::vector<std::int32_t> a1(ref.size()), a2(ref.size());
      k::reference::maxpool_forward(d, x.ptr(), ref.data(), a1.data());
      k::maxpool_forward(d, x.ptr(), got.data(), a2.data());
      check(got, ref);
      for (std::size_t i = 0; i < a1.size(); i++)
        if (a1[i] != a2[i]) ok = false;
    }
  }
  std::ostringstream d;
  d << "50 cases per op, max |diff| " << worst;
  report(2, ok, "conv2d/upconv2d/max_pool2d vs naive-loop oracles", d.str());
}

// ---- criterion 3: dice identities ----
void criterion_3() {
  bool ok = true;
  Tensor a = Tensor::from_data({1, 1, 2, 2}, {1, 1, 0, 0});
  Tensor b = Tensor::from_data({1, 1, 2, 2}, {0, 0, 1, 1});
  ok = ok && metrics::hard_dice(a, a) == 1.0;
  ok = ok && metrics::hard_dice(a, b) == 0.0;
  Tensor p = Tensor::from_data({1, 1, 2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
  Tensor q = Tensor::from_data({1, 1, 2, 4}, {1, 1, 0, 0, 1, 1, 0, 0});
  ok = ok && metrics::hard_dice(p, q) == 0.5;

  // the complement identity is evaluated in the engine's float32
  // arithmetic; there it holds bitwise
  Rng rng(33);
  double worst = 0.0;
  for (int i = 0; i < 100; i++) {
    Tensor pred(Shape4{1, 1, 4, 4});
    for (auto& v : pred.data()) v = rng.unit();
    Tensor truth(Shape4{1, 1, 4, 4});
    for (auto& v : truth.data()) v = rng.chance(0.5f) ? 1.f : 0.f;
    const float dice = soft_dice(pred, truth, 1.f, nullptr).item();
    const float loss = dice_loss(pred, truth, 1.f, nullptr).item();
    worst = std::max(worst, static_cast<double>(std::fabs(loss - (1.f - dice))));
  }
  ok = ok && worst < 1e-9;
  std::ostringstream d;
  d << "identities exact, |dice_loss - (1 - soft_dice)| <= " << worst;
  report(3, ok, "dice identities", d.str());
}

// ---- criterion 4: overfit smoke on one sample ----
void criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  const synth::SampleRecord rec = synth::build_sample(7, 0, 64, synth::SynthConfig{});
  Tensor image = image_to_tensor(rec.image);
  Tensor truth = image_to_tensor(rec.mask);
  UNet net = UNet::build(UNetConfig{3, 8, 3, 1}, 7);  // desk profile net
  ModelGraph graph;
  net.collect(graph);
  Adam adam({1e-3f, 0.9f, 0.999f, 1e-8f});
  for (const auto& e : graph.entries()) adam.register_param(e.name, e.value);
  double final_dice = 0.0;
  for (int epoch = 0; epoch < 200; epoch++) {
    Tape tape;
    Tensor pred = net.forward(image, &tape);
    Tensor loss = dice_loss(pred, truth, 1.f, &tape);
    tape.backward(loss);
    adam.step();
    adam.zero_grad();
    final_dice = 1.0 - loss.item();
  }
  const double secs = seconds_since(t0);
  const bool ok = final_dice >= 0.95 && secs < 600.0;
  std::ostringstream d;
  d << "train dice " << final_dice << " after 200 epochs, " << secs << " s";
  report(4, ok, "single-sample overfit (desk profile)", d.str());
}

struct PipelineArtifacts {
  fs::path data, run, report_refined, report_coarse, stats_json;
  std::string corpus_hash;
  double train_seconds = 0.0;
  bool ok = false;
};

// one full desk pipeline: generate -> train both stages -> eval -> stats
PipelineArtifacts run_pipeline(const fs::path& work, const std::string& tag,
                               const fs::path& log) {
  PipelineArtifacts art;
  art.data = work / (tag + "_data");
  art.run = work / (tag + "_run");
  art.report_refined = work / (tag + "_refined.json");
  art.report_coarse = work / (tag + "_coarse.json");
  art.stats_json = work / (tag + "_stats.json");

  if (run_cli("generate --seed 7 --count 200 --size 64 --out " +
                  art.data.string(), log) != 0)
    return art;
  art.corpus_hash = synth::load_manifest(art.data).corpus_hash;

  const fs::path cfg_path = work / (tag + "_config.json");
  {
    RunConfig cfg;  // desk profile defaults: 64x64, depth 3, base 8, 200/100
    cfg.dataset = art.data;
    cfg.out_dir = art.run;
    std::ofstream f(cfg_path);
    f << run_config_to_json(cfg);
  }
  const auto t0 = std::chrono::steady_clock::now();
  if (run_cli("train --config " + cfg_path.string() + " --stage both", log) != 0)
    return art;
  art.train_seconds = seconds_since(t0);

  const fs::path ckpt = art.run / "stage2_best.ckpt";
  if (run_cli("eval --checkpoint " + ckpt.string() + " --dataset " +
                  art.data.string() + " --split test --report " +
                  art.report_refined.string(), log) != 0)
    return art;
  if (run_cli("eval --checkpoint " + ckpt.string() + " --dataset " +
                  art.data.string() + " --split test --coarse --report " +
                  art.report_coarse.string(), log) != 0)
    return art;
  if (run_cli("stats --report-a " + art.report_refined.string() +
                  " --report-b " + art.report_coarse.string() + " --out " +
                  art.stats_json.string() + " --k 10", log) != 0)
    return art;
  art.ok = true;
  return art;
}

// ---- criteria 5 + 6 + 9: desk training, freeze invariant, determinism ----
void criteria_5_6_9(const fs::path& work) {
  const fs::path log = work / "pipeline.log";
  const PipelineArtifacts run1 = run_pipeline(work, "run1", log);
  if (!run1.ok) {
    report(5, false, "desk training", "pipeline failed, see " + log.string());
    report(6, false, "FCN freeze invariant", "skipped: pipeline failed");
    report(9, false, "pipeline determinism", "skipped: pipeline failed");
    return;
  }

  // criterion 5: held-out quality and runtime
  {
    const auto refined = metrics::read_report_json(run1.report_refined);
    const auto coarse = metrics::read_report_json(run1.report_coarse);
    const bool ok = refined.dsc.rate >= 0.70 &&
                    refined.dsc.rate >= coarse.dsc.rate - 0.02 &&
                    run1.train_seconds < 7200.0;
    std::ostringstream d;
    d << "test dice refined " << refined.dsc.rate << ", coarse "
      << coarse.dsc.rate << ", train " << run1.train_seconds << " s";
    report(5, ok, "desk training (200 samples, 200+100 epochs)", d.str());
  }

  // criterion 6: FCN parameter bytes identical across all of stage 2
  {
    LoadedCheckpoint s1 = load_checkpoint(run1.run / "stage1_best.ckpt");
    LoadedCheckpoint s2 = load_checkpoint(run1.run / "stage2_best.ckpt");
    LoadedCheckpoint s2_last = load_checkpoint(run1.run / "stage2_last.ckpt");
    ModelGraph g1, g2, g3;
    s1.fcn.collect(g1);
    s2.fcn.collect(g2);
    s2_last.fcn.collect(g3);
    bool ok = g1.entries().size() == g2.entries().size();
    for (std::size_t i = 0; ok && i < g1.entries().size(); i++) {
      const Tensor& a = g1.entries()[i].value;
      const Tensor& b = g2.entries()[i].value;
      const Tensor& c = g3.entries()[i].value;
      ok = a.numel() == b.numel() &&
           std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0 &&
           std::memcmp(a.ptr(), c.ptr(), a.numel() * sizeof(float)) == 0;
    }
    report(6, ok, "FCN parameter bytes identical before and after stage 2", "");
  }

  // criterion 9: byte-identical artifacts from a repeated pipeline
  {
    const PipelineArtifacts run2 = run_pipeline(work, "run2", log);
    bool ok = run2.ok && run1.corpus_hash == run2.corpus_hash;
    std::string which = ok ? "" : "corpus hash";
    const std::pair<fs::path, fs::path> pairs[] = {
        {run1.run / "stage1_best.ckpt", run2.run / "stage1_best.ckpt"},
        {run1.run / "stage2_best.ckpt", run2.run / "stage2_best.ckpt"},
        {run1.run / "stage1_last.ckpt", run2.run / "stage1_last.ckpt"},
        {run1.run / "stage2_last.ckpt", run2.run / "stage2_last.ckpt"},
        {run1.report_refined, run2.report_refined},
        {run1.report_coarse, run2.report_coarse},
        {run1.stats_json, run2.stats_json},
    };
    for (const auto& [a, b] : pairs) {
      if (!ok) break;
      if (file_bytes(a) != file_bytes(b)) {
        ok = false;
        which = a.filename().string();
      }
    }
    report(9, ok, "full-pipeline determinism (generate/train/eval/stats x2)",
           ok ? "checkpoints, reports and corpus hashes byte-identical"
              : "first difference: " + which);
  }
}

// ---- criterion 7: metric identities ----
void criterion_7(const fs::path& work) {
  bool ok = true;
  std::ostringstream d;
  for (std::uint64_t seed = 60; seed < 65; seed++) {
    const synth::SignatureRaster sig = synth::gen_signature(seed, 64, 64);
    Image x(64, 64, 1, 1.f);
    for (int yy = 0; yy < 64; yy++)
      for (int xx = 0; xx < 64; xx++)
        x.at(yy, xx, 0) = 1.f - 0.85f * sig.coverage.at(yy, xx, 0);
    if (metrics::ssim(x, x) != 1.0) ok = false;
    if (!metrics::detect_and_describe(x).keypoints.empty() &&
        metrics::keypoint_match_rate(x, x) != 1.0)
      ok = false;
  }

  const fs::path data = work / "run1_data";
  if (fs::exists(data / "manifest.json")) {
    const synth::Manifest m = synth::load_manifest(data);
    metrics::EvalOptions opts;
    opts.oracle = true;
    const auto r = metrics::evaluate_model(nullptr, nullptr, m, synth::Split::Test, opts);
    ok = ok && std::fabs(r.dsc.rate - 1.0) < 1e-12 &&
         std::fabs(r.ssim.rate - 1.0) < 1e-12 &&
         std::fabs(r.sift.rate - 1.0) < 1e-12;
    d << "oracle eval means dsc=" << r.dsc.rate << " ssim=" << r.ssim.rate
      << " sift=" << r.sift.rate;
  } else {
    ok = false;
    d << "dataset from criterion 5 missing";
  }
  report(7, ok, "metric identities (ssim, keypoint rate, oracle eval)", d.str());
}

// ---- criterion 8: statistics oracles ----
void criterion_8() {
  bool ok = true;
  std::ostringstream d;

  // exact Mann-Whitney equals brute force for all n, m <= 5
  Rng rng(81);
  double worst_mw = 0.0;
  for (int n = 1; n <= 5 && ok; n++)
    for (int m = 1; m <= 5; m++) {
      std::vector<double> pool;
      for (int i = 0; i < n + m; i++) pool.push_back(i + 1.0);
      for (int i = n + m - 1; i > 0; i--)
        std::swap(pool[i], pool[rng.below(static_cast<std::uint32_t>(i + 1))]);
      std::vector<double> x(pool.begin(), pool.begin() + n);
      std::vector<double> y(pool.begin() + n, pool.end());
      const auto r = stats::mann_whitney(x, y);
      const double want = sigseg_test_oracles::brute_force_mw_p(x, y);
      worst_mw = std::max(worst_mw, std::fabs(r.p_value - want));
      if (r.method != "exact" || std::fabs(r.p_value - want) > 1e-12) {
        ok = false;
        break;
      }
    }

  // Shapiro-Wilk within 0.01 of the frozen reference oracle
  double worst_sw = 0.0;
  for (const auto& c : sigseg_test_oracles::shapiro_cases()) {
    const auto r = stats::shapiro_wilk(c.x);
    worst_sw = std::max(worst_sw, std::fabs(r.p_value - c.p));
    if (std::fabs(r.p_value - c.p) > 0.01) ok = false;
  }

  // identical 30-sample sets: p = 1, no rejection at alpha = 0.05
  std::vector<metrics::SampleMetrics> rows;
  Rng rng2(82);
  for (int i = 0; i < 30; i++)
    rows.push_back({std::to_string(i), 0.6 + 0.3 * rng2.unit_d(),
                    0.7 + 0.2 * rng2.unit_d(), 0.5 + 0.4 * rng2.unit_d()});
  const auto rep = metrics::aggregate_report("test", rows);
  const auto cmp = stats::compare_models(rep, rep, 30);
  ok = ok && cmp.dsc.mw.p_value == 1.0 && !cmp.dsc.mw.reject_null &&
       cmp.ssim.mw.p_value == 1.0 && !cmp.ssim.mw.reject_null &&
       cmp.sift.mw.p_value == 1.0 && !cmp.sift.mw.reject_null;

  d << "max |dp| exact-vs-brute-force " << worst_mw << ", shapiro "
    << worst_sw << ", identical-sample p=1";
  report(8, ok, "statistics oracles", d.str());
}

// ---- criterion 10: split contract at n = 20000 ----
void criterion_10(const fs::path& work) {
  const fs::path dir = work / "split20000";
  const auto t0 = std::chrono::steady_clock::now();
  const synth::Manifest m = synth::build_dataset(99, 20000, 64, dir);
  int train = 0, val = 0, test = 0;
  for (const auto& s : m.samples) {
    if (s.split == synth::Split::Train) train++;
    else if (s.split == synth::Split::Val) val++;
    else test++;
  }
  const bool ok = train == 16000 && val == 3000 && test == 1000 &&
                  static_cast<int>(m.samples.size()) == 20000;
  std::ostringstream d;
  d << "manifest counts " << train << "/" << val << "/" << test << ", "
    << seconds_since(t0) << " s";
  report(10, ok, "20000-sample manifest partitions 16000/3000/1000", d.str());
  fs::remove_all(dir);  // ~130 MB of rasters, no longer needed
}

}  // namespace

int main() {
  apply_thread_cap();  // SIGSEG_THREADS, default 1
  const fs::path work = fs::current_path() / "acceptance_work";
  fs::remove_all(work);
  fs::create_directories(work);
  std::printf("acceptance work dir: %s\n", work.string().c_str());
  std::fflush(stdout);

  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criteria_5_6_9(work);
  criterion_7(work);
  criterion_8();
  criterion_10(work);

  std::printf("%s: %d/10 criteria passed\n", failures == 0 ? "SUCCESS" : "FAILURE",
              10 - failures);
  return failures == 0 ? 0 : 1;
}
