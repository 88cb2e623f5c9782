#pragma once

#include <vector>

#include "sigseg/tape.hpp"
#include "sigseg/tensor.hpp"

namespace sigseg {

// Differentiable ops. Every op records a TapeNode when `tape` is non-null
// and at least one input requires a gradient; the output then requires a
// gradient as well so downstream ops keep recording. With tape == nullptr
// the ops run in pure inference mode.

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, Tape* tape);

Tensor upconv2d(const Tensor& input, const Tensor& weight, int stride,
                Tape* tape);

Tensor max_pool2d(const Tensor& input, int k, int stride, Tape* tape);

enum class BnMode { Train, Eval };

// Per-channel running statistics owned by the layer, updated in train mode:
// running = momentum * running + (1 - momentum) * batch.
struct BatchNormState {
  std::vector<float> running_mean;
  std::vector<float> running_var;

  static BatchNormState init(int channels) {
    return {std::vector<float>(channels, 0.f), std::vector<float>(channels, 1.f)};
  }
};

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode, float momentum, float eps,
                  Tape* tape);

Tensor relu(const Tensor& input, Tape* tape);
Tensor sigmoid(const Tensor& input, Tape* tape);

// Channel concatenation; a's channels come first.
Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape);

// Scalar reductions (1x1x1x1 outputs).
Tensor sum_all(const Tensor& input, Tape* tape);
Tensor weighted_sum(const Tensor& input, const std::vector<float>& weights,
                    Tape* tape);

}  // namespace sigseg
