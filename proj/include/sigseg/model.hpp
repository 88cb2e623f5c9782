#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sigseg/ops.hpp"
#include "sigseg/optim.hpp"
#include "sigseg/tape.hpp"
#include "sigseg/tensor.hpp"

namespace sigseg {

struct UNetConfig {
  int in_channels = 3;
  int base_channels = 64;
  int depth = 4;
  int out_channels = 1;
};

struct RLConfig {
  int in_channels = 4;  // image channels + predicted mask
  int hidden_channels = 64;
  int layers = 4;
};

struct BatchNormConfig {
  float momentum = 0.9f;
  float eps = 1e-5f;
};

enum class Stage { FCN, RL };

const char* to_string(Stage s);

// Flat named view over every parameter of the two stages. Entries reference
// the layer tensors (shared storage); trainable is the tensor's
// requires_grad flag, so freezing immediately affects both the tape and the
// optimizer.
struct ParamEntry {
  std::string name;
  Stage stage;
  Tensor value;
};

class ModelGraph {
 public:
  void add(std::string name, Stage stage, Tensor value);
  const std::vector<ParamEntry>& entries() const { return entries_; }
  Tensor& find(const std::string& name);

  // Marks every parameter of the stage non-trainable. Idempotent.
  void freeze_stage(Stage stage);

  std::int64_t parameter_count() const;
  // CRC over the raw bytes of every parameter tagged with `stage`.
  std::uint32_t stage_crc(Stage stage) const;

 private:
  std::vector<ParamEntry> entries_;
};

struct ConvLayer {
  Tensor weight;  // (Cout, Cin, kh, kw)
  Tensor bias;    // (1, Cout, 1, 1)
};

struct UpConvLayer {
  Tensor weight;  // (Cin, Cout, 2, 2)
};

struct BatchNormLayer {
  Tensor gamma;  // (1, C, 1, 1)
  Tensor beta;   // (1, C, 1, 1)
  BatchNormState state;
};

// U-Net encoder-decoder: `depth` levels of [conv3x3+relu, conv3x3+relu,
// maxpool 2x2/2] with channel doubling, a double-conv bottleneck, and the
// mirrored expansive path with 2x2 stride-2 transposed convolutions and skip
// concatenations, finished by a 1x1 conv + sigmoid. All 3x3 convolutions use
// padding 1 so spatial extents are preserved end to end and the skip
// concatenation needs no cropping.
class UNet {
 public:
  static UNet build(const UNetConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& image, Tape* tape) const;
  void collect(ModelGraph& graph) const;
  const UNetConfig& config() const { return cfg_; }

  struct EncBlock {
    ConvLayer conv1, conv2;
  };
  struct DecBlock {
    UpConvLayer up;
    ConvLayer conv1, conv2;
  };

 private:
  UNetConfig cfg_;
  std::vector<EncBlock> enc_;
  ConvLayer bottleneck1_, bottleneck2_;
  std::vector<DecBlock> dec_;  // dec_[0] operates at the deepest level
  ConvLayer head_;             // 1x1
};

// Refinement stage: `layers` 3x3 convolutions at constant resolution. Each
// of the first layers-1 convolutions is followed by ReLU then batch norm;
// the final convolution maps to one channel and ends in a sigmoid. No
// pooling or upsampling anywhere.
class RLNet {
 public:
  static RLNet build(const RLConfig& cfg, const BatchNormConfig& bn,
                     std::uint64_t seed);

  Tensor forward(const Tensor& x, Tape* tape, BnMode mode);
  void collect(ModelGraph& graph) const;
  const RLConfig& config() const { return cfg_; }

  std::vector<ConvLayer>& convs() { return convs_; }
  std::vector<BatchNormLayer>& bns() { return bns_; }
  const std::vector<ConvLayer>& convs() const { return convs_; }
  const std::vector<BatchNormLayer>& bns() const { return bns_; }

 private:
  RLConfig cfg_;
  BatchNormConfig bn_;
  std::vector<ConvLayer> convs_;
  std::vector<BatchNormLayer> bns_;
};

// coarse = FCN(image); refined = RL(concat(image, coarse)).
// The refinement stage sees the coarse probability map, not a binarized
// mask, so gradients can flow during stage-2 training.
struct FullOutput {
  Tensor coarse;
  Tensor refined;
};
FullOutput forward_full(const UNet& fcn, RLNet& rl, const Tensor& image,
                        Tape* tape, BnMode mode);

// 1 where prob > threshold (strict), else 0.
Tensor binarize(const Tensor& prob, float threshold = 0.5f);

// Keeps image pixels where mask == 1, paints `background` elsewhere.
Tensor apply_mask(const Tensor& image, const Tensor& mask,
                  float background = 1.0f);

// ----- checkpoint file -----
// Little-endian container: magic "SGSR", u32 version=1, u32 tensor count,
// then per tensor (u16 name length, name bytes, u8 rank, u32 extent per
// dimension, raw f32 payload), then the optimizer state as u32 count plus
// the same tensor framing, then CRC32 of all preceding bytes.

struct Checkpoint {
  UNetConfig unet;
  std::optional<RLConfig> rl;
  BatchNormConfig bn;
  int image_size = 0;
  int trained_epochs_stage1 = 0;
  int trained_epochs_stage2 = 0;
  double best_val_dice = -1.0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& meta,
                     const UNet& fcn, const RLNet* rl, const Adam* optimizer);

struct LoadedCheckpoint {
  Checkpoint meta;
  UNet fcn;
  std::optional<RLNet> rl;
  // raw optimizer tensors, keyed by name (adam.t, adam.m.<p>, adam.v.<p>)
  std::vector<std::pair<std::string, std::vector<float>>> optimizer_state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Restores m/v buffers and the step counter saved by save_checkpoint.
void restore_adam(Adam& adam, const LoadedCheckpoint& ckpt);

}  // namespace sigseg
