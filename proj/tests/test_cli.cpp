#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sigseg/metrics.hpp"
#include "sigseg/trainer.hpp"

// End-to-end checks of the command-line surface: flags, exit codes, files.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* cli() { return SIGSEG_CLI_PATH; }

fs::path temp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "sigseg_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "sigseg_cli" / "last_output.txt";
  fs::create_directories(out.parent_path());
  const std::string cmd = std::string(cli()) + " " + args + " > " +
                          out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream f(out);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code, text};
}

std::string grab_line(const std::string& text, const std::string& prefix) {
  std::size_t pos = text.find(prefix);
  if (pos == std::string::npos) return {};
  const std::size_t end = text.find('\n', pos);
  return text.substr(pos, end - pos);
}

}  // namespace

TEST_CASE("generate: split ratio, determinism, validation") {
  const auto dir = temp_dir("gen");
  const std::string args = "generate --seed 11 --count 20 --size 64 --out ";

  const RunResult a = run(args + (dir / "a").string());
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("train=16 val=3 test=1") != std::string::npos);
  CHECK(a.output.find("config:") != std::string::npos);  // resolved config echoed
  CHECK(a.output.find("\"seed\":11") != std::string::npos);

  const RunResult b = run(args + (dir / "b").string());
  CHECK(b.exit_code == 0);
  CHECK(grab_line(a.output, "corpus_hash:") == grab_line(b.output, "corpus_hash:"));

  // non-divisible size is a validation error naming the rule
  const RunResult bad = run("generate --seed 1 --count 10 --size 50 --out " +
                            (dir / "bad").string());
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("divisible") != std::string::npos);

  const RunResult bad2 = run("generate --seed 1 --count 10 --size 40 --profile paper --out " +
                             (dir / "bad2").string());
  CHECK(bad2.exit_code == 1);

  // unknown flags rejected
  const RunResult unknown = run("generate --count 10 --out x --frobnicate");
  CHECK(unknown.exit_code == 1);
}

TEST_CASE("train / infer / eval / stats pipeline on a tiny corpus") {
  const auto dir = temp_dir("pipe");
  const auto data = dir / "data";
  REQUIRE(run("generate --seed 3 --count 12 --size 32 --out " + data.string()).exit_code == 0);

  // config: tiny nets, few epochs
  sigseg::RunConfig cfg;
  cfg.dataset = data;
  cfg.out_dir = dir / "run";
  cfg.image_size = 32;
  cfg.seed = 9;
  cfg.batch_size = 4;
  cfg.unet = sigseg::UNetConfig{3, 4, 2, 1};
  cfg.rl = sigseg::RLConfig{4, 4, 4};
  cfg.epochs_stage1 = 2;
  cfg.epochs_stage2 = 2;
  cfg.checkpoint_every = 1;
  const auto cfg_path = dir / "config.json";
  {
    std::ofstream f(cfg_path);
    f << sigseg::run_config_to_json(cfg);
  }

  // stage 2 without a stage-1 checkpoint is a validation error
  const RunResult premature =
      run("train --config " + cfg_path.string() + " --stage 2");
  CHECK(premature.exit_code == 1);
  CHECK(premature.output.find("stage-1 checkpoint") != std::string::npos);

  const RunResult both = run("train --config " + cfg_path.string() + " --stage both");
  CHECK(both.exit_code == 0);
  CHECK(fs::exists(dir / "run" / "stage1_best.ckpt"));
  CHECK(fs::exists(dir / "run" / "stage2_best.ckpt"));
  CHECK(fs::exists(dir / "run" / "stage1_log.csv"));
  CHECK(fs::exists(dir / "run" / "stage2_log.csv"));
  CHECK(fs::exists(dir / "run" / "resolved_config.json"));

  // resume continues epoch numbering
  const RunResult resumed = run("train --config " + cfg_path.string() +
                                " --stage 1 --resume --epochs-stage1 4");
  CHECK(resumed.exit_code == 0);
  const auto rows = sigseg::read_epoch_csv(dir / "run" / "stage1_log.csv");
  REQUIRE(rows.size() == 4);
  for (int i = 0; i < 4; i++) CHECK(rows[i].epoch == i + 1);

  // infer on a dataset image
  const auto mask_png = dir / "mask.png";
  const auto extract_png = dir / "extract.png";
  const RunResult inf = run("infer --checkpoint " +
                            (dir / "run" / "stage2_best.ckpt").string() +
                            " --input " + (data / "images" / "sample_00000.png").string() +
                            " --out-mask " + mask_png.string() +
                            " --out-extraction " + extract_png.string());
  CHECK(inf.exit_code == 0);
  REQUIRE(fs::exists(mask_png));
  REQUIRE(fs::exists(extract_png));
  // mask PNG holds only 0 / 255 bytes
  const sigseg::Image mask = sigseg::read_png(mask_png);
  for (float v : mask.pixels) CHECK((v == 0.f || v == 1.f));
  // resize metadata sidecar
  REQUIRE(fs::exists(mask_png.string() + ".meta.json"));
  {
    std::ifstream f(mask_png.string() + ".meta.json");
    json meta = json::parse(f);
    CHECK(meta.at("resized").get<bool>() == false);
    CHECK(meta.at("model_size")[0].get<int>() == 32);
  }

  // non-image input is a runtime error (exit 2)
  const RunResult bad_input = run("infer --checkpoint " +
                                  (dir / "run" / "stage2_best.ckpt").string() +
                                  " --input " + cfg_path.string() +
                                  " --out-mask " + mask_png.string() +
                                  " --out-extraction " + extract_png.string());
  CHECK(bad_input.exit_code == 2);

  // eval with the trained checkpoint and with the oracle
  const auto report = dir / "report.json";
  const RunResult ev = run("eval --checkpoint " +
                           (dir / "run" / "stage2_best.ckpt").string() +
                           " --dataset " + data.string() + " --split test --report " +
                           report.string());
  CHECK(ev.exit_code == 0);
  REQUIRE(fs::exists(report));
  REQUIRE(fs::exists(dir / "report.csv"));

  const auto oracle_report = dir / "oracle.json";
  const RunResult ora = run("eval --oracle --dataset " + data.string() +
                            " --split train --report " + oracle_report.string());
  CHECK(ora.exit_code == 0);
  const auto parsed = sigseg::metrics::read_report_json(oracle_report);
  CHECK(parsed.dsc.rate == doctest::Approx(1.0));
  CHECK(parsed.ssim.rate == doctest::Approx(1.0));
  CHECK(parsed.sift.rate == doctest::Approx(1.0));

  // infer self-consistency: the mask written for a test-split image scores
  // the same DSC the eval report recorded for that sample
  {
    const auto parsed_eval = sigseg::metrics::read_report_json(report);
    REQUIRE(!parsed_eval.per_sample.empty());
    const auto& first = parsed_eval.per_sample.front();  // test split starts at 00010
    const std::string img_rel = "images/sample_" + first.id + ".png";
    const std::string mask_rel = "masks/sample_" + first.id + ".png";
    const auto self_mask = dir / "self_mask.png";
    const RunResult self = run("infer --checkpoint " +
                               (dir / "run" / "stage2_best.ckpt").string() +
                               " --input " + (data / img_rel).string() +
                               " --out-mask " + self_mask.string() +
                               " --out-extraction " + (dir / "self_ex.png").string());
    REQUIRE(self.exit_code == 0);
    sigseg::Image pred = sigseg::read_png(self_mask);
    sigseg::Image truth = sigseg::read_png(data / mask_rel);
    for (auto& v : truth.pixels) v = v > 0.5f ? 1.f : 0.f;
    const double dsc = sigseg::metrics::hard_dice(sigseg::image_to_tensor(pred),
                                                  sigseg::image_to_tensor(truth));
    CHECK(dsc == doctest::Approx(first.dsc).epsilon(1e-9));
    CHECK(dsc >= parsed_eval.dsc.rate - 0.1);
  }

  // stats of a report against itself: no rejections
  const auto cmp = dir / "cmp.json";
  const RunResult st = run("stats --report-a " + oracle_report.string() +
                           " --report-b " + oracle_report.string() + " --out " +
                           cmp.string() + " --k 8");
  CHECK(st.exit_code == 0);
  {
    std::ifstream f(cmp);
    json doc = json::parse(f);
    for (const char* metric : {"dsc", "ssim", "sift"}) {
      CHECK(doc.at("metrics").at(metric).at("mann_whitney").at("reject_null").get<bool>() == false);
      CHECK(doc.at("metrics").at(metric).contains("shapiro_a"));
      CHECK(doc.at("metrics").at(metric).contains("shapiro_b"));
    }
  }
}

TEST_CASE("outputs do not depend on the worker count") {
  const auto dir = temp_dir("threads");
  const std::string tail = " --count 8 --size 32 --seed 21 --out ";
  const fs::path out1 = dir / "t1";
  const fs::path out2 = dir / "t2";
  const std::string base = std::string(cli()) + " generate" + tail;
  const int s1 = std::system(("SIGSEG_THREADS=1 " + base + out1.string() +
                              " > " + (dir / "o1.txt").string() + " 2>&1").c_str());
  const int s2 = std::system(("SIGSEG_THREADS=2 " + base + out2.string() +
                              " > " + (dir / "o2.txt").string() + " 2>&1").c_str());
  REQUIRE(WEXITSTATUS(s1) == 0);
  REQUIRE(WEXITSTATUS(s2) == 0);
  auto hash_of = [](const fs::path& p) {
    std::ifstream f(p / "manifest.json");
    json j = json::parse(f);
    return j.at("corpus_hash").get<std::string>();
  };
  CHECK(hash_of(out1) == hash_of(out2));
}

TEST_CASE("gradcheck command") {
  const RunResult ok = run("gradcheck --seed 2");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("conv2d") != std::string::npos);
  CHECK(ok.output.find("dice_loss") != std::string::npos);
  CHECK(ok.output.find("PASS") != std::string::npos);
  CHECK(ok.output.find("max_rel_err") != std::string::npos);
  CHECK(ok.output.find("FAIL") == std::string::npos);

  // a deliberately perturbed backward pass must fail the suite
  const RunResult bad = run("gradcheck --seed 2 --inject-error conv2d");
  CHECK(bad.exit_code != 0);
  CHECK(bad.output.find("FAIL") != std::string::npos);
}
