#pragma once

#include <string>
#include <vector>

#include "sigseg/tape.hpp"
#include "sigseg/tensor.hpp"

namespace sigseg {

// Soft Dice coefficient over the whole tensor (batch included):
// (2 * sum(p * t) + s) / (sum(p) + sum(t) + s). truth must be binary.
Tensor soft_dice(const Tensor& pred, const Tensor& truth, float smoothing,
                 Tape* tape);

// 1 - soft_dice, differentiable w.r.t. pred.
Tensor dice_loss(const Tensor& pred, const Tensor& truth, float smoothing,
                 Tape* tape);

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam over a fixed set of registered parameters. A parameter
// whose requires_grad flag is off (frozen) is skipped entirely: neither the
// parameter nor its moment buffers change. The step counter increments once
// per step() across all parameters.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void register_param(const std::string& name, Tensor param);
  void step();
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  struct Slot {
    std::string name;
    Tensor param;
    std::vector<float> m;
    std::vector<float> v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  Slot& slot(const std::string& name);
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

}  // namespace sigseg
