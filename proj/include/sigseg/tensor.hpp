#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sigseg/common.hpp"

namespace sigseg {

// Dense 4-D extents in (N, C, H, W) order, row-major, W contiguous.
struct Shape4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

// Dense float32 tensor with an optional gradient buffer. Copies of a Tensor
// share the same storage (shallow handle), which is how model parameters,
// the tape and the optimizer all see one buffer. Values are treated as
// immutable once an op has consumed them; grad buffers are the only part
// mutated afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, bool requires_grad = false);

  static Tensor full(Shape4 shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape4 shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape4& shape() const;
  std::int64_t numel() const { return shape().numel(); }
  std::uint64_t id() const;

  std::span<float> data();
  std::span<const float> data() const;
  float* ptr();
  const float* ptr() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  // Lazily allocates a zero-filled gradient buffer on first access.
  std::span<float> grad();
  float* grad_ptr();
  bool has_grad() const;
  std::span<const float> grad_view() const;  // throws if not allocated
  void zero_grad();

  // Scalar convenience; throws ContractError unless numel() == 1.
  float item() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  Impl& impl() const;
};

}  // namespace sigseg
