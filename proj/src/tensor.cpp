#include "sigseg/tensor.hpp"

#include <atomic>

namespace sigseg {

std::string to_string(const Shape4& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" +
         std::to_string(s.h) + "x" + std::to_string(s.w);
}

namespace {
std::atomic<std::uint64_t> next_tensor_id{1};
}

struct Tensor::Impl {
  Shape4 shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until requested
  bool requires_grad = false;
  std::uint64_t id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
};

Tensor::Tensor(Shape4 shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
    throw ShapeError("tensor extents must all be >= 1, got " + to_string(shape));
  impl_->shape = shape;
  impl_->value.assign(static_cast<std::size_t>(shape.numel()), 0.f);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape4 shape, float value, bool requires_grad) {
  Tensor t(shape, requires_grad);
  for (auto& v : t.impl_->value) v = value;
  return t;
}

Tensor Tensor::from_data(Shape4 shape, std::vector<float> data,
                         bool requires_grad) {
  Tensor t(shape, requires_grad);
  if (static_cast<std::int64_t>(data.size()) != shape.numel())
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  t.impl_->value = std::move(data);
  return t;
}

Tensor Tensor::scalar(float value) {
  Tensor t(Shape4{1, 1, 1, 1});
  t.impl_->value[0] = value;
  return t;
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape4& Tensor::shape() const { return impl().shape; }
std::uint64_t Tensor::id() const { return impl().id; }

std::span<float> Tensor::data() { return impl().value; }
std::span<const float> Tensor::data() const { return impl().value; }
float* Tensor::ptr() { return impl().value.data(); }
const float* Tensor::ptr() const { return impl().value.data(); }

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool v) { impl().requires_grad = v; }

std::span<float> Tensor::grad() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.value.size(), 0.f);
  return im.grad;
}

float* Tensor::grad_ptr() { return grad().data(); }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const float> Tensor::grad_view() const {
  auto& im = impl();
  if (im.grad.empty())
    throw ContractError("gradient buffer not allocated for tensor");
  return im.grad;
}

void Tensor::zero_grad() {
  auto& im = impl();
  for (auto& g : im.grad) g = 0.f;
}

float Tensor::item() const {
  auto& im = impl();
  if (im.value.size() != 1)
    throw ContractError("item() requires a scalar tensor, shape is " +
                        to_string(im.shape));
  return im.value[0];
}

}  // namespace sigseg
