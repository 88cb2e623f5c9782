#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "sigseg/common.hpp"
#include "sigseg/gradcheck.hpp"
#include "sigseg/metrics.hpp"
#include "sigseg/model.hpp"
#include "sigseg/stats.hpp"
#include "sigseg/synthdoc.hpp"
#include "sigseg/trainer.hpp"

// Exit codes: 0 success, 1 validation error, 2 runtime error.

namespace {

using nlohmann::json;
using namespace sigseg;

void print_resolved(const json& j) {
  std::cout << "config: " << j.dump() << "\n";
}

int cmd_generate(std::uint64_t seed, int count, int size,
                 const std::string& out, const std::string& profile) {
  const int depth = profile == "paper" ? paper_profile().unet.depth
                                       : desk_profile().unet.depth;
  print_resolved(json{{"command", "generate"},
                      {"seed", seed},
                      {"count", count},
                      {"size", size},
                      {"out", out},
                      {"profile", profile}});
  const int div = 1 << depth;
  if (size % div)
    throw ConfigError("generate: size " + std::to_string(size) +
                      " must be divisible by 2^depth = " + std::to_string(div) +
                      " for the " + profile + " profile (depth " +
                      std::to_string(depth) + ")");
  synth::Manifest m = synth::build_dataset(seed, count, size, out);
  std::cout << "corpus_hash: " << m.corpus_hash << "\n";
  std::cout << "split: train=" << m.n_train << " val=" << m.n_val
            << " test=" << m.n_test << "\n";
  return 0;
}

RunConfig resolve_train_config(const std::string& config_path,
                               const std::string& dataset,
                               const std::string& out_dir, std::int64_t seed,
                               int epochs1, int epochs2) {
  RunConfig cfg = load_run_config(config_path);
  if (!dataset.empty()) cfg.dataset = dataset;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (epochs1 > 0) cfg.epochs_stage1 = epochs1;
  if (epochs2 > 0) cfg.epochs_stage2 = epochs2;
  if (cfg.dataset.empty()) throw ConfigError("train: no dataset configured");
  if (cfg.out_dir.empty()) throw ConfigError("train: no out_dir configured");
  cfg.validate();
  return cfg;
}

int cmd_train(const RunConfig& cfg, const std::string& stage, bool resume) {
  print_resolved(json::parse(run_config_to_json(cfg)));
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream f(cfg.out_dir / "resolved_config.json", std::ios::trunc);
    f << run_config_to_json(cfg) << "\n";
  }
  synth::Manifest manifest = synth::load_manifest(cfg.dataset);

  if (stage == "1" || stage == "both") {
    StageArtifacts art = train_stage1(cfg, manifest, resume);
    std::cout << "stage1: best_val_dice=" << art.best_val_dice << " checkpoint="
              << art.best_ckpt.string() << "\n";
  }
  if (stage == "2" || stage == "both") {
    const auto stage1_ckpt = cfg.out_dir / "stage1_best.ckpt";
    if (!std::filesystem::exists(stage1_ckpt))
      throw ConfigError("train: stage 2 requires a stage-1 checkpoint at " +
                        stage1_ckpt.string() + " (run --stage 1 first)");
    StageArtifacts art = train_stage2(cfg, stage1_ckpt, manifest, resume);
    std::cout << "stage2: best_val_dice=" << art.best_val_dice << " checkpoint="
              << art.best_ckpt.string() << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& input,
              const std::string& out_mask, const std::string& out_extraction,
              float threshold) {
  print_resolved(json{{"command", "infer"},
                      {"checkpoint", ckpt_path},
                      {"input", input},
                      {"out_mask", out_mask},
                      {"out_extraction", out_extraction},
                      {"threshold", threshold}});
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  const int size = ckpt.meta.image_size;
  if (size < 32) throw IoError("infer: checkpoint lacks a valid image size");

  Image original = read_png(input);
  if (original.channels == 1) {
    Image rgb(original.h, original.w, 3);
    for (int y = 0; y < original.h; y++)
      for (int x = 0; x < original.w; x++)
        for (int c = 0; c < 3; c++) rgb.at(y, x, c) = original.at(y, x, 0);
    original = std::move(rgb);
  }
  const bool resized = original.h != size || original.w != size;
  Image model_input = resize_bilinear(original, size, size);
  Tensor image = image_to_tensor(model_input);

  Tensor prob;
  if (ckpt.rl) {
    Tensor coarse = ckpt.fcn.forward(image, nullptr);
    prob = ckpt.rl->forward(concat_channels(image, coarse, nullptr), nullptr,
                            BnMode::Eval);
  } else {
    prob = ckpt.fcn.forward(image, nullptr);
  }
  Tensor mask = binarize(prob, threshold);
  write_png(out_mask, tensor_to_image(mask));
  write_png(out_extraction, tensor_to_image(apply_mask(image, mask)));

  const json meta{{"checkpoint", ckpt_path},
                  {"input", input},
                  {"original_size", {original.h, original.w}},
                  {"model_size", {size, size}},
                  {"resized", resized},
                  {"resample", "bilinear"},
                  {"threshold", threshold},
                  {"refined", ckpt.rl.has_value()}};
  std::ofstream f(out_mask + ".meta.json", std::ios::trunc);
  f << meta.dump(2) << "\n";
  std::cout << "mask: " << out_mask << "\nextraction: " << out_extraction << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset,
             const std::string& split_name, const std::string& report_path,
             bool oracle, bool coarse, float threshold) {
  print_resolved(json{{"command", "eval"},
                      {"checkpoint", ckpt_path},
                      {"dataset", dataset},
                      {"split", split_name},
                      {"report", report_path},
                      {"oracle", oracle},
                      {"coarse", coarse},
                      {"threshold", threshold}});
  synth::Manifest manifest = synth::load_manifest(dataset);
  const synth::Split split = synth::split_from_string(split_name);

  metrics::EvalOptions opts;
  opts.oracle = oracle;
  opts.use_coarse = coarse;
  opts.threshold = threshold;

  metrics::MetricReport report;
  if (oracle) {
    report = metrics::evaluate_model(nullptr, nullptr, manifest, split, opts);
  } else {
    if (ckpt_path.empty())
      throw ConfigError("eval: --checkpoint is required unless --oracle is set");
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    RLNet* rl = ckpt.rl ? &*ckpt.rl : nullptr;
    report = metrics::evaluate_model(&ckpt.fcn, rl, manifest, split, opts);
  }
  metrics::write_report_json(report_path, report);
  std::filesystem::path csv = report_path;
  csv.replace_extension(".csv");
  metrics::write_per_sample_csv(csv, report);
  std::printf("dsc: rate=%.4f std=%.4f\n", report.dsc.rate, report.dsc.stdev);
  std::printf("ssim: rate=%.4f std=%.4f\n", report.ssim.rate, report.ssim.stdev);
  std::printf("sift: rate=%.4f std=%.4f\n", report.sift.rate, report.sift.stdev);
  return 0;
}

int cmd_stats(const std::string& report_a, const std::string& report_b,
              const std::string& out, int k) {
  print_resolved(json{{"command", "stats"},
                      {"report_a", report_a},
                      {"report_b", report_b},
                      {"out", out},
                      {"k", k}});
  metrics::MetricReport a = metrics::read_report_json(report_a);
  metrics::MetricReport b = metrics::read_report_json(report_b);
  stats::ModelComparison cmp = stats::compare_models(a, b, k);
  stats::write_comparison_json(out, cmp);
  auto line = [](const char* name, const stats::MetricComparison& c) {
    std::printf("%s: U=%.1f p=%.6g %s\n", name, c.mw.statistic, c.mw.p_value,
                c.mw.reject_null ? "reject-null" : "no-rejection");
  };
  line("dsc", cmp.dsc);
  line("ssim", cmp.ssim);
  line("sift", cmp.sift);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& inject) {
  print_resolved(json{{"command", "gradcheck"}, {"seed", seed}});
  GradCheckOptions opts;
  opts.seed = seed;
  opts.inject_error_for = inject;
  const auto results = run_gradient_checks(opts);
  bool all_pass = true;
  std::printf("%-16s %-12s %s\n", "op", "max_rel_err", "result");
  for (const auto& r : results) {
    std::printf("%-16s %-12.3e %s\n", r.op.c_str(), r.max_rel_err,
                r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"handwritten signature segmentation: synthetic data, two-stage "
               "training, evaluation and statistics"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "build a synthetic signed-document dataset");
  std::uint64_t gen_seed = 7;
  int gen_count = 0, gen_size = 64;
  std::string gen_out, gen_profile = "desk";
  gen->add_option("--seed", gen_seed, "global corpus seed");
  gen->add_option("--count", gen_count, "total sample count")->required();
  gen->add_option("--size", gen_size, "square image size in px");
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--profile", gen_profile, "desk or paper (divisibility check)")
      ->check(CLI::IsMember({"desk", "paper"}));

  // train
  auto* tr = app.add_subcommand("train", "run the two-stage training protocol");
  std::string tr_config, tr_stage = "both", tr_dataset, tr_out;
  std::int64_t tr_seed = -1;
  int tr_e1 = 0, tr_e2 = 0;
  bool tr_resume = false;
  tr->add_option("--config", tr_config, "run config JSON")->required();
  tr->add_option("--stage", tr_stage, "1, 2 or both")
      ->check(CLI::IsMember({"1", "2", "both"}));
  tr->add_flag("--resume", tr_resume, "continue from the last checkpoint");
  tr->add_option("--dataset", tr_dataset, "override dataset directory");
  tr->add_option("--out", tr_out, "override output directory");
  tr->add_option("--seed", tr_seed, "override seed");
  tr->add_option("--epochs-stage1", tr_e1, "override stage-1 epochs");
  tr->add_option("--epochs-stage2", tr_e2, "override stage-2 epochs");

  // infer
  auto* inf = app.add_subcommand("infer", "segment one image with a checkpoint");
  std::string inf_ckpt, inf_input, inf_mask, inf_extract;
  float inf_threshold = 0.5f;
  inf->add_option("--checkpoint", inf_ckpt)->required();
  inf->add_option("--input", inf_input, "input image (PNG)")->required();
  inf->add_option("--out-mask", inf_mask, "binary mask output (PNG)")->required();
  inf->add_option("--out-extraction", inf_extract,
                  "white-background extraction output (PNG)")
      ->required();
  inf->add_option("--threshold", inf_threshold, "binarisation threshold");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  std::string ev_ckpt, ev_dataset, ev_split = "test", ev_report;
  bool ev_oracle = false, ev_coarse = false;
  float ev_threshold = 0.5f;
  ev->add_option("--checkpoint", ev_ckpt);
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--report", ev_report, "aggregate JSON output")->required();
  ev->add_flag("--oracle", ev_oracle, "feed ground truth through (pipeline check)");
  ev->add_flag("--coarse", ev_coarse, "score the encoder-decoder output only");
  ev->add_option("--threshold", ev_threshold, "binarisation threshold");

  // stats
  auto* st = app.add_subcommand("stats", "normality + rank-sum comparison of two reports");
  std::string st_a, st_b, st_out;
  int st_k = 30;
  st->add_option("--report-a", st_a)->required();
  st->add_option("--report-b", st_b)->required();
  st->add_option("--out", st_out, "comparison JSON output")->required();
  st->add_option("--k", st_k, "samples drawn per metric and side");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every operator");
  std::uint64_t gc_seed = 1;
  std::string gc_inject;
  gc->add_option("--seed", gc_seed);
  gc->add_option("--inject-error", gc_inject,
                 "corrupt the named op's analytic gradient (suite self-test)")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed())
      return cmd_generate(gen_seed, gen_count, gen_size, gen_out, gen_profile);
    if (tr->parsed()) {
      RunConfig cfg = resolve_train_config(tr_config, tr_dataset, tr_out,
                                           tr_seed, tr_e1, tr_e2);
      return cmd_train(cfg, tr_stage, tr_resume);
    }
    if (inf->parsed())
      return cmd_infer(inf_ckpt, inf_input, inf_mask, inf_extract, inf_threshold);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_dataset, ev_split, ev_report, ev_oracle,
                      ev_coarse, ev_threshold);
    if (st->parsed()) return cmd_stats(st_a, st_b, st_out, st_k);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_inject);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
