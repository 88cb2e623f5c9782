#include "sigseg/tape.hpp"

namespace sigseg {

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::UpConv2d: return "upconv2d";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::SumAll: return "sum_all";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::SoftDice: return "soft_dice";
    case OpKind::DiceLoss: return "dice_loss";
  }
  return "unknown";
}

void Tape::backward(Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a 1x1x1x1 loss, shape is " +
                        to_string(loss.shape()));
  if (nodes_.empty())
    throw ContractError("backward called on an empty tape");
  // Each call must add exactly d(loss)/d(tensor) to every gradient buffer.
  // Propagation happens on zeroed buffers; previously accumulated gradients
  // are snapshotted first and merged back afterwards, otherwise stale
  // intermediate gradients would compound through the chain rule.
  std::vector<std::vector<float>> saved(watched_.size());
  for (std::size_t i = 0; i < watched_.size(); i++) {
    if (watched_[i].has_grad()) {
      auto g = watched_[i].grad();
      saved[i].assign(g.begin(), g.end());
      watched_[i].zero_grad();
    }
  }
  loss.grad()[0] += 1.f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  for (std::size_t i = 0; i < watched_.size(); i++) {
    if (saved[i].empty()) continue;
    auto g = watched_[i].grad();
    for (std::size_t j = 0; j < saved[i].size(); j++) g[j] += saved[i][j];
  }
}

void Tape::zero_all_grads() {
  for (auto& t : watched_) t.zero_grad();
}

}  // namespace sigseg
