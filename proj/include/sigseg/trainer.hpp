#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sigseg/model.hpp"
#include "sigseg/optim.hpp"
#include "sigseg/synthdoc.hpp"

namespace sigseg {

// Everything a training run needs; serialisable as a single JSON document.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  int image_size = 64;
  std::uint64_t seed = 7;
  int batch_size = 4;
  UNetConfig unet{3, 8, 3, 1};
  RLConfig rl{4, 16, 4};
  AdamConfig adam{1e-3f, 0.9f, 0.999f, 1e-8f};
  BatchNormConfig bn{};
  int epochs_stage1 = 200;
  int epochs_stage2 = 100;
  int eval_every = 1;        // validation cadence in epochs
  int checkpoint_every = 25; // *_last.ckpt refresh cadence
  float threshold = 0.5f;
  float dice_smoothing = 1.0f;

  void validate() const;
};

// desk profile: 64x64 inputs, depth-3 base-8 encoder, 16-channel refinement
// stage, 200 + 100 epochs
RunConfig desk_profile();
// paper profile: 512x512 inputs, depth-4 base-64 encoder, 64-channel
// refinement stage, 10000 + 5000 epochs
RunConfig paper_profile();

RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_dice = 0.0;
  double val_dice = 0.0;
  double seconds = 0.0;
};

// CSV: epoch,train_loss,train_dice,val_dice,seconds
void append_epoch_csv(const std::filesystem::path& csv, const EpochLog& row,
                      bool write_header);
std::vector<EpochLog> read_epoch_csv(const std::filesystem::path& csv);

// Seeded permutation of [0, count) chunked into batches; the last partial
// batch is kept.
std::vector<std::vector<int>> make_epoch_batches(int count, int batch_size,
                                                 std::uint64_t epoch_seed);

struct LoadedSplit {
  std::vector<Tensor> images;  // each (1, 3, S, S)
  std::vector<Tensor> masks;   // each (1, 1, S, S), exactly binary
  std::vector<std::string> ids;
};
LoadedSplit load_split(const synth::Manifest& manifest, synth::Split split);

// Gathers the listed samples into one batch tensor.
Tensor stack_batch(const std::vector<Tensor>& tensors,
                   const std::vector<int>& indices);

struct StageArtifacts {
  std::vector<EpochLog> log;
  std::filesystem::path best_ckpt;
  std::filesystem::path last_ckpt;
  std::filesystem::path csv;
  double best_val_dice = -1.0;
};

// Stage 1: trains the encoder-decoder on dice loss over the train split,
// validating with hard dice; retains the best-validation checkpoint.
StageArtifacts train_stage1(const RunConfig& cfg,
                            const synth::Manifest& manifest,
                            bool resume = false);

// Stage 2: loads the stage-1 checkpoint, freezes every FCN parameter
// (verified bitwise each epoch), and trains the refinement stage on
// dice loss of the refined prediction.
StageArtifacts train_stage2(const RunConfig& cfg,
                            const std::filesystem::path& stage1_ckpt,
                            const synth::Manifest& manifest,
                            bool resume = false);

}  // namespace sigseg
