#include "sigseg/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sigseg/common.hpp"
#include "sigseg/metrics.hpp"

namespace sigseg {

using nlohmann::json;

void RunConfig::validate() const {
  if (epochs_stage1 < 1 || epochs_stage2 < 1)
    throw ConfigError("run config: epoch counts must be >= 1");
  if (batch_size < 1) throw ConfigError("run config: batch_size must be >= 1");
  const int div = 1 << unet.depth;
  if (image_size % div)
    throw ConfigError("run config: image_size " + std::to_string(image_size) +
                      " must be divisible by 2^depth = " + std::to_string(div));
  if (rl.in_channels != unet.in_channels + unet.out_channels)
    throw ConfigError("run config: rl.in_channels must equal image channels + "
                      "predicted channels");
  if (eval_every < 1 || checkpoint_every < 1)
    throw ConfigError("run config: cadences must be >= 1");
}

RunConfig desk_profile() { return RunConfig{}; }

RunConfig paper_profile() {
  RunConfig cfg;
  cfg.image_size = 512;
  cfg.unet = UNetConfig{3, 64, 4, 1};
  cfg.rl = RLConfig{4, 64, 4};
  cfg.adam.lr = 1e-4f;
  cfg.epochs_stage1 = 10000;
  cfg.epochs_stage2 = 5000;
  cfg.checkpoint_every = 100;
  return cfg;
}

namespace {

json config_to_json_obj(const RunConfig& c) {
  return json{
      {"dataset", c.dataset.string()},
      {"out_dir", c.out_dir.string()},
      {"image_size", c.image_size},
      {"seed", c.seed},
      {"batch_size", c.batch_size},
      {"unet",
       {{"in_channels", c.unet.in_channels},
        {"base_channels", c.unet.base_channels},
        {"depth", c.unet.depth},
        {"out_channels", c.unet.out_channels}}},
      {"rl",
       {{"in_channels", c.rl.in_channels},
        {"hidden_channels", c.rl.hidden_channels},
        {"layers", c.rl.layers}}},
      {"adam",
       {{"lr", c.adam.lr},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"eps", c.adam.eps}}},
      {"batchnorm", {{"momentum", c.bn.momentum}, {"eps", c.bn.eps}}},
      {"epochs_stage1", c.epochs_stage1},
      {"epochs_stage2", c.epochs_stage2},
      {"eval_every", c.eval_every},
      {"checkpoint_every", c.checkpoint_every},
      {"threshold", c.threshold},
      {"dice_smoothing", c.dice_smoothing}};
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("run config: cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("run config " + path.string() + ": invalid JSON: " + e.what());
  }
  RunConfig c;  // desk defaults; file overrides field by field
  try {
    std::string s;
    maybe(j, "dataset", s);
    if (!s.empty()) c.dataset = s;
    s.clear();
    maybe(j, "out_dir", s);
    if (!s.empty()) c.out_dir = s;
    maybe(j, "image_size", c.image_size);
    maybe(j, "seed", c.seed);
    maybe(j, "batch_size", c.batch_size);
    if (j.contains("unet")) {
      const auto& u = j.at("unet");
      maybe(u, "in_channels", c.unet.in_channels);
      maybe(u, "base_channels", c.unet.base_channels);
      maybe(u, "depth", c.unet.depth);
      maybe(u, "out_channels", c.unet.out_channels);
    }
    if (j.contains("rl")) {
      const auto& r = j.at("rl");
      maybe(r, "in_channels", c.rl.in_channels);
      maybe(r, "hidden_channels", c.rl.hidden_channels);
      maybe(r, "layers", c.rl.layers);
    }
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      maybe(a, "lr", c.adam.lr);
      maybe(a, "beta1", c.adam.beta1);
      maybe(a, "beta2", c.adam.beta2);
      maybe(a, "eps", c.adam.eps);
    }
    if (j.contains("batchnorm")) {
      const auto& b = j.at("batchnorm");
      maybe(b, "momentum", c.bn.momentum);
      maybe(b, "eps", c.bn.eps);
    }
    maybe(j, "epochs_stage1", c.epochs_stage1);
    maybe(j, "epochs_stage2", c.epochs_stage2);
    maybe(j, "eval_every", c.eval_every);
    maybe(j, "checkpoint_every", c.checkpoint_every);
    maybe(j, "threshold", c.threshold);
    maybe(j, "dice_smoothing", c.dice_smoothing);
  } catch (const json::exception& e) {
    throw ConfigError("run config " + path.string() + ": bad field: " + e.what());
  }
  return c;
}

void append_epoch_csv(const std::filesystem::path& csv, const EpochLog& row,
                      bool write_header) {
  std::ofstream f(csv, write_header ? std::ios::trunc : std::ios::app);
  if (!f) throw IoError("trainer: cannot write " + csv.string());
  if (write_header) f << "epoch,train_loss,train_dice,val_dice,seconds\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.3f\n", row.epoch,
                row.train_loss, row.train_dice, row.val_dice, row.seconds);
  f << buf;
}

std::vector<EpochLog> read_epoch_csv(const std::filesystem::path& csv) {
  std::ifstream f(csv);
  if (!f) throw IoError("trainer: cannot open " + csv.string());
  std::vector<EpochLog> rows;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    EpochLog r;
    std::istringstream ss(line);
    char comma;
    ss >> r.epoch >> comma >> r.train_loss >> comma >> r.train_dice >> comma >>
        r.val_dice >> comma >> r.seconds;
    if (ss.fail()) throw IoError("trainer: malformed CSV row in " + csv.string());
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::vector<int>> make_epoch_batches(int count, int batch_size,
                                                 std::uint64_t epoch_seed) {
  std::vector<int> ids(count);
  for (int i = 0; i < count; i++) ids[i] = i;
  Rng rng(epoch_seed);
  for (int i = count - 1; i > 0; i--)
    std::swap(ids[i], ids[rng.below(static_cast<std::uint32_t>(i + 1))]);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < count; start += batch_size) {
    const int end = std::min(count, start + batch_size);
    batches.emplace_back(ids.begin() + start, ids.begin() + end);
  }
  return batches;
}

LoadedSplit load_split(const synth::Manifest& manifest, synth::Split split) {
  LoadedSplit out;
  for (const auto* s : manifest.split_samples(split)) {
    Image img = read_png(manifest.root / s->image_path);
    Image mask = read_png(manifest.root / s->mask_path);
    if (img.channels != 3)
      throw IoError("dataset: " + s->image_path + " is not RGB");
    if (mask.channels != 1)
      throw IoError("dataset: " + s->mask_path + " is not grayscale");
    for (auto& v : mask.pixels) v = v > 0.5f ? 1.f : 0.f;
    out.images.push_back(image_to_tensor(img));
    out.masks.push_back(image_to_tensor(mask));
    char id[16];
    std::snprintf(id, sizeof id, "%05d", s->index);
    out.ids.emplace_back(id);
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& tensors,
                   const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("stack_batch: empty index list");
  const Shape4 s = tensors[indices[0]].shape();
  Tensor out(Shape4{static_cast<int>(indices.size()), s.c, s.h, s.w});
  const std::int64_t stride = s.numel();
  for (std::size_t i = 0; i < indices.size(); i++) {
    const Tensor& src = tensors[indices[i]];
    if (!(src.shape() == s)) throw ShapeError("stack_batch: mixed shapes");
    std::copy(src.data().begin(), src.data().end(), out.ptr() + i * stride);
  }
  return out;
}

namespace {

double validation_hard_dice(const UNet& fcn, RLNet* rl, const LoadedSplit& val,
                            float threshold) {
  double acc = 0.0;
  for (std::size_t i = 0; i < val.images.size(); i++) {
    Tensor pred;
    if (rl) {
      Tensor coarse = fcn.forward(val.images[i], nullptr);
      pred = rl->forward(concat_channels(val.images[i], coarse, nullptr), nullptr,
                         BnMode::Eval);
    } else {
      pred = fcn.forward(val.images[i], nullptr);
    }
    acc += metrics::hard_dice(binarize(pred, threshold), val.masks[i]);
  }
  return val.images.empty() ? 0.0 : acc / static_cast<double>(val.images.size());
}

struct StageIo {
  std::filesystem::path best, last, csv;
};

StageIo stage_paths(const RunConfig& cfg, int stage) {
  const std::string p = "stage" + std::to_string(stage);
  return {cfg.out_dir / (p + "_best.ckpt"), cfg.out_dir / (p + "_last.ckpt"),
          cfg.out_dir / (p + "_log.csv")};
}

}  // namespace

StageArtifacts train_stage1(const RunConfig& cfg,
                            const synth::Manifest& manifest, bool resume) {
  cfg.validate();
  if (manifest.image_size != cfg.image_size)
    throw ConfigError("trainer: dataset image size " +
                      std::to_string(manifest.image_size) +
                      " does not match config image_size " +
                      std::to_string(cfg.image_size));
  LoadedSplit train = load_split(manifest, synth::Split::Train);
  LoadedSplit val = load_split(manifest, synth::Split::Val);
  if (train.images.empty()) throw ConfigError("trainer: empty train split");
  if (val.images.empty()) throw ConfigError("trainer: empty validation split");

  std::filesystem::create_directories(cfg.out_dir);
  const StageIo io = stage_paths(cfg, 1);

  UNet fcn = UNet::build(cfg.unet, cfg.seed);
  ModelGraph graph;
  fcn.collect(graph);
  Adam adam(cfg.adam);
  for (const auto& e : graph.entries()) adam.register_param(e.name, e.value);

  int start_epoch = 0;
  double best_val = -1.0;
  StageArtifacts art;
  art.best_ckpt = io.best;
  art.last_ckpt = io.last;
  art.csv = io.csv;

  if (resume && std::filesystem::exists(io.last)) {
    LoadedCheckpoint ckpt = load_checkpoint(io.last);
    if (!(ckpt.meta.unet.in_channels == cfg.unet.in_channels &&
          ckpt.meta.unet.base_channels == cfg.unet.base_channels &&
          ckpt.meta.unet.depth == cfg.unet.depth &&
          ckpt.meta.unet.out_channels == cfg.unet.out_channels))
      throw IoError("trainer: stage-1 resume checkpoint does not match config");
    fcn = std::move(ckpt.fcn);
    graph = ModelGraph{};
    fcn.collect(graph);
    adam = Adam(cfg.adam);
    for (const auto& e : graph.entries()) adam.register_param(e.name, e.value);
    restore_adam(adam, ckpt);
    start_epoch = ckpt.meta.trained_epochs_stage1;
    best_val = ckpt.meta.best_val_dice;
    art.log = read_epoch_csv(io.csv);
  }

  auto save = [&](const std::filesystem::path& path, int epochs_done) {
    Checkpoint meta;
    meta.unet = cfg.unet;
    meta.bn = cfg.bn;
    meta.image_size = cfg.image_size;
    meta.trained_epochs_stage1 = epochs_done;
    meta.best_val_dice = best_val;
    save_checkpoint(path, meta, fcn, nullptr, &adam);
  };

  double last_val = 0.0;
  for (int epoch = start_epoch; epoch < cfg.epochs_stage1; epoch++) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches =
        make_epoch_batches(static_cast<int>(train.images.size()), cfg.batch_size,
                           derive_seed(cfg.seed, 1 /* stage */, epoch));
    double loss_acc = 0.0;
    for (const auto& batch : batches) {
      Tensor images = stack_batch(train.images, batch);
      Tensor masks = stack_batch(train.masks, batch);
      Tape tape;
      Tensor pred = fcn.forward(images, &tape);
      Tensor loss = dice_loss(pred, masks, cfg.dice_smoothing, &tape);
      tape.backward(loss);
      adam.step();
      adam.zero_grad();
      loss_acc += loss.item();
    }
    const double train_loss = loss_acc / static_cast<double>(batches.size());

    if (epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs_stage1)
      last_val = validation_hard_dice(fcn, nullptr, val, cfg.threshold);
    if (last_val > best_val) {
      best_val = last_val;
      save(io.best, epoch + 1);
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs_stage1)
      save(io.last, epoch + 1);

    EpochLog row;
    row.epoch = epoch + 1;
    row.train_loss = train_loss;
    row.train_dice = 1.0 - train_loss;
    row.val_dice = last_val;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_epoch_csv(io.csv, row, /*write_header=*/epoch == 0);
    art.log.push_back(row);
  }
  art.best_val_dice = best_val;
  return art;
}

StageArtifacts train_stage2(const RunConfig& cfg,
                            const std::filesystem::path& stage1_ckpt,
                            const synth::Manifest& manifest, bool resume) {
  cfg.validate();
  LoadedSplit train = load_split(manifest, synth::Split::Train);
  LoadedSplit val = load_split(manifest, synth::Split::Val);
  if (train.images.empty()) throw ConfigError("trainer: empty train split");
  if (val.images.empty()) throw ConfigError("trainer: empty validation split");

  std::filesystem::create_directories(cfg.out_dir);
  const StageIo io = stage_paths(cfg, 2);

  LoadedCheckpoint stage1 = load_checkpoint(stage1_ckpt);
  if (!(stage1.meta.unet.in_channels == cfg.unet.in_channels &&
        stage1.meta.unet.base_channels == cfg.unet.base_channels &&
        stage1.meta.unet.depth == cfg.unet.depth &&
        stage1.meta.unet.out_channels == cfg.unet.out_channels))
    throw IoError("trainer: stage-1 checkpoint does not match config");
  UNet fcn = std::move(stage1.fcn);
  RLNet rl = RLNet::build(cfg.rl, cfg.bn, cfg.seed);

  ModelGraph graph;
  fcn.collect(graph);
  rl.collect(graph);
  graph.freeze_stage(Stage::FCN);
  const std::uint32_t fcn_crc = graph.stage_crc(Stage::FCN);

  Adam adam(cfg.adam);
  for (const auto& e : graph.entries())
    if (e.stage == Stage::RL) adam.register_param(e.name, e.value);

  int start_epoch = 0;
  double best_val = -1.0;
  StageArtifacts art;
  art.best_ckpt = io.best;
  art.last_ckpt = io.last;
  art.csv = io.csv;

  if (resume && std::filesystem::exists(io.last)) {
    LoadedCheckpoint ckpt = load_checkpoint(io.last);
    if (!ckpt.rl) throw IoError("trainer: stage-2 resume checkpoint lacks RL stage");
    fcn = std::move(ckpt.fcn);
    rl = std::move(*ckpt.rl);
    graph = ModelGraph{};
    fcn.collect(graph);
    rl.collect(graph);
    graph.freeze_stage(Stage::FCN);
    adam = Adam(cfg.adam);
    for (const auto& e : graph.entries())
      if (e.stage == Stage::RL) adam.register_param(e.name, e.value);
    restore_adam(adam, ckpt);
    start_epoch = ckpt.meta.trained_epochs_stage2;
    best_val = ckpt.meta.best_val_dice;
    art.log = read_epoch_csv(io.csv);
  }

  auto save = [&](const std::filesystem::path& path, int epochs_done) {
    Checkpoint meta;
    meta.unet = cfg.unet;
    meta.rl = cfg.rl;
    meta.bn = cfg.bn;
    meta.image_size = cfg.image_size;
    meta.trained_epochs_stage1 = stage1.meta.trained_epochs_stage1;
    meta.trained_epochs_stage2 = epochs_done;
    meta.best_val_dice = best_val;
    save_checkpoint(path, meta, fcn, &rl, &adam);
  };

  double last_val = 0.0;
  for (int epoch = start_epoch; epoch < cfg.epochs_stage2; epoch++) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches =
        make_epoch_batches(static_cast<int>(train.images.size()), cfg.batch_size,
                           derive_seed(cfg.seed, 2 /* stage */, epoch));
    double loss_acc = 0.0;
    for (const auto& batch : batches) {
      Tensor images = stack_batch(train.images, batch);
      Tensor masks = stack_batch(train.masks, batch);
      Tape tape;
      Tensor coarse = fcn.forward(images, &tape);  // frozen: records nothing
      Tensor x = concat_channels(images, coarse, &tape);
      Tensor refined = rl.forward(x, &tape, BnMode::Train);
      Tensor loss = dice_loss(refined, masks, cfg.dice_smoothing, &tape);
      tape.backward(loss);
      adam.step();
      adam.zero_grad();
      loss_acc += loss.item();
    }
    const double train_loss = loss_acc / static_cast<double>(batches.size());

    if (graph.stage_crc(Stage::FCN) != fcn_crc)
      throw ContractError("trainer: frozen FCN parameters changed during stage 2");

    if (epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs_stage2)
      last_val = validation_hard_dice(fcn, &rl, val, cfg.threshold);
    if (last_val > best_val) {
      best_val = last_val;
      save(io.best, epoch + 1);
    }
    if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs_stage2)
      save(io.last, epoch + 1);

    EpochLog row;
    row.epoch = epoch + 1;
    row.train_loss = train_loss;
    row.train_dice = 1.0 - train_loss;
    row.val_dice = last_val;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_epoch_csv(io.csv, row, /*write_header=*/epoch == 0);
    art.log.push_back(row);
  }
  art.best_val_dice = best_val;
  return art;
}

}  // namespace sigseg
