#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sigseg/tensor.hpp"

namespace sigseg {

enum class OpKind {
  Conv2d,
  UpConv2d,
  MaxPool2d,
  BatchNorm,
  Relu,
  Sigmoid,
  ConcatChannels,
  SumAll,
  WeightedSum,
  SoftDice,
  DiceLoss,
};

const char* to_string(OpKind k);

// One recorded operation. Creation order is a topological order of the DAG,
// so backward() just walks the list in reverse. Saved context (pool argmax
// indices, batch statistics, ...) lives inside the backward closure together
// with handles to the tensors it writes into.
struct TapeNode {
  OpKind kind;
  std::vector<std::uint64_t> input_ids;
  std::uint64_t output_id = 0;
  std::function<void()> backward;
};

// Single-threaded recording context for one forward/backward pass.
class Tape {
 public:
  void record(TapeNode node) { nodes_.push_back(std::move(node)); }

  // Seeds d(loss)/d(loss) = 1 and propagates through every node in reverse
  // creation order. Gradients accumulate across repeated calls until the
  // corresponding buffers are zeroed.
  void backward(Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // Track tensors touched by recorded ops so tests can reset a whole graph.
  void watch(const Tensor& t) { watched_.push_back(t); }
  void zero_all_grads();

 private:
  std::vector<TapeNode> nodes_;
  std::vector<Tensor> watched_;
};

}  // namespace sigseg
