#include "sigseg/ops.hpp"

#include <cmath>
#include <utility>

#include "sigseg/kernels.hpp"

namespace sigseg {

namespace {

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, Tape* tape) {
  auto d = kernels::conv_dims(input.shape(), weight.shape(), stride, padding);
  if (bias.numel() != d.cout)
    throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) +
                     " values, expected " + std::to_string(d.cout));
  Tensor out(Shape4{d.n, d.cout, d.hout, d.wout});
  kernels::conv2d_forward(d, input.ptr(), weight.ptr(), bias.ptr(), out.ptr());
  if (tape && any_grad({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor in = input, w = weight, b = bias, o = out;
    tape->watch(in), tape->watch(w), tape->watch(b), tape->watch(o);
    tape->record({OpKind::Conv2d,
                  {in.id(), w.id(), b.id()},
                  o.id(),
                  [=]() mutable {
                    const float* g = o.grad_ptr();
                    if (in.requires_grad())
                      kernels::conv2d_backward_input(d, g, w.ptr(), in.grad_ptr());
                    if (w.requires_grad())
                      kernels::conv2d_backward_weight(d, g, in.ptr(), w.grad_ptr());
                    if (b.requires_grad())
                      kernels::conv2d_backward_bias(d, g, b.grad_ptr());
                  }});
  }
  return out;
}

Tensor upconv2d(const Tensor& input, const Tensor& weight, int stride,
                Tape* tape) {
  auto d = kernels::upconv_dims(input.shape(), weight.shape(), stride);
  Tensor out(Shape4{d.n, d.cout, d.hout, d.wout});
  kernels::upconv2d_forward(d, input.ptr(), weight.ptr(), out.ptr());
  if (tape && any_grad({&input, &weight})) {
    out.set_requires_grad(true);
    Tensor in = input, w = weight, o = out;
    tape->watch(in), tape->watch(w), tape->watch(o);
    tape->record({OpKind::UpConv2d,
                  {in.id(), w.id()},
                  o.id(),
                  [=]() mutable {
                    const float* g = o.grad_ptr();
                    if (in.requires_grad())
                      kernels::upconv2d_backward_input(d, g, w.ptr(), in.grad_ptr());
                    if (w.requires_grad())
                      kernels::upconv2d_backward_weight(d, g, in.ptr(), w.grad_ptr());
                  }});
  }
  return out;
}

Tensor max_pool2d(const Tensor& input, int k, int stride, Tape* tape) {
  auto d = kernels::pool_dims(input.shape(), k, stride);
  Tensor out(Shape4{d.n, d.c, d.hout, d.wout});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(out.numel()));
  kernels::maxpool_forward(d, input.ptr(), out.ptr(), argmax->data());
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in = input, o = out;
    tape->watch(in), tape->watch(o);
    tape->record({OpKind::MaxPool2d,
                  {in.id()},
                  o.id(),
                  [=]() mutable {
                    kernels::maxpool_backward(d, o.grad_ptr(), argmax->data(),
                                              in.grad_ptr());
                  }});
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode, float momentum, float eps,
                  Tape* tape) {
  const Shape4 s = input.shape();
  kernels::BnDims d{s.n, s.c, s.h, s.w};
  if (gamma.numel() != s.c || beta.numel() != s.c)
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(s.c) +
                     " values");
  if (static_cast<int>(state.running_mean.size()) != s.c)
    throw ShapeError("batch_norm: running stats sized for " +
                     std::to_string(state.running_mean.size()) + " channels, input has " +
                     std::to_string(s.c));
  Tensor out(s);
  if (mode == BnMode::Eval) {
    kernels::batchnorm_forward_eval(d, input.ptr(), gamma.ptr(), beta.ptr(),
                                    state.running_mean.data(),
                                    state.running_var.data(), eps, out.ptr());
    if (tape && any_grad({&input, &gamma, &beta})) {
      out.set_requires_grad(true);
      Tensor in = input, ga = gamma, be = beta, o = out;
      auto rmean = std::make_shared<std::vector<float>>(state.running_mean);
      auto rvar = std::make_shared<std::vector<float>>(state.running_var);
      tape->watch(in), tape->watch(ga), tape->watch(be), tape->watch(o);
      tape->record({OpKind::BatchNorm,
                    {in.id(), ga.id(), be.id()},
                    o.id(),
                    [=]() mutable {
                      kernels::batchnorm_backward_eval(
                          d, in.ptr(), o.grad_ptr(), ga.ptr(), rmean->data(),
                          rvar->data(), eps, in.grad_ptr(), ga.grad_ptr(),
                          be.grad_ptr());
                    }});
    }
    return out;
  }

  const std::int64_t per_channel = static_cast<std::int64_t>(s.n) * s.h * s.w;
  if (per_channel < 2)
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel");
  auto mean = std::make_shared<std::vector<float>>(s.c);
  auto rstd = std::make_shared<std::vector<float>>(s.c);
  std::vector<float> var(s.c);
  kernels::batchnorm_forward_train(d, input.ptr(), gamma.ptr(), beta.ptr(), eps,
                                   out.ptr(), mean->data(), rstd->data(),
                                   var.data());
  for (int c = 0; c < s.c; c++) {
    state.running_mean[c] = momentum * state.running_mean[c] + (1.f - momentum) * (*mean)[c];
    state.running_var[c] = momentum * state.running_var[c] + (1.f - momentum) * var[c];
  }
  if (tape && any_grad({&input, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor in = input, ga = gamma, be = beta, o = out;
    tape->watch(in), tape->watch(ga), tape->watch(be), tape->watch(o);
    tape->record({OpKind::BatchNorm,
                  {in.id(), ga.id(), be.id()},
                  o.id(),
                  [=]() mutable {
                    // all three gradients come from one kernel; scratch for
                    // the ones the caller does not need
                    std::vector<float> scratch_g(d.c, 0.f), scratch_b(d.c, 0.f);
                    std::vector<float> scratch_in;
                    float* gin = in.requires_grad() ? in.grad_ptr() : nullptr;
                    if (!gin) {
                      scratch_in.assign(static_cast<std::size_t>(in.numel()), 0.f);
                      gin = scratch_in.data();
                    }
                    float* gg = ga.requires_grad() ? ga.grad_ptr() : scratch_g.data();
                    float* gb = be.requires_grad() ? be.grad_ptr() : scratch_b.data();
                    kernels::batchnorm_backward_train(d, in.ptr(), o.grad_ptr(),
                                                      ga.ptr(), mean->data(),
                                                      rstd->data(), gin, gg, gb);
                  }});
  }
  return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
  Tensor out(input.shape());
  kernels::relu_forward(input.ptr(), out.ptr(), input.numel());
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in = input, o = out;
    tape->watch(in), tape->watch(o);
    tape->record({OpKind::Relu,
                  {in.id()},
                  o.id(),
                  [=]() mutable {
                    kernels::relu_backward(in.ptr(), o.grad_ptr(), in.grad_ptr(),
                                           in.numel());
                  }});
  }
  return out;
}

Tensor sigmoid(const Tensor& input, Tape* tape) {
  Tensor out(input.shape());
  kernels::sigmoid_forward(input.ptr(), out.ptr(), input.numel());
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in = input, o = out;
    tape->watch(in), tape->watch(o);
    tape->record({OpKind::Sigmoid,
                  {in.id()},
                  o.id(),
                  [=]() mutable {
                    kernels::sigmoid_backward(o.ptr(), o.grad_ptr(),
                                              in.grad_ptr(), in.numel());
                  }});
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape) {
  const Shape4 sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: spatial/batch mismatch " + to_string(sa) +
                     " vs " + to_string(sb));
  Tensor out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::int64_t plane = static_cast<std::int64_t>(sa.h) * sa.w;
  for (int n = 0; n < sa.n; n++) {
    float* dst = out.ptr() + static_cast<std::int64_t>(n) * (sa.c + sb.c) * plane;
    const float* pa = a.ptr() + static_cast<std::int64_t>(n) * sa.c * plane;
    const float* pb = b.ptr() + static_cast<std::int64_t>(n) * sb.c * plane;
    std::copy(pa, pa + sa.c * plane, dst);
    std::copy(pb, pb + sb.c * plane, dst + sa.c * plane);
  }
  if (tape && any_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, o = out;
    tape->watch(ta), tape->watch(tb), tape->watch(o);
    tape->record({OpKind::ConcatChannels,
                  {ta.id(), tb.id()},
                  o.id(),
                  [=]() mutable {
                    const float* g = o.grad_ptr();
                    for (int n = 0; n < sa.n; n++) {
                      const float* gn = g + static_cast<std::int64_t>(n) * (sa.c + sb.c) * plane;
                      if (ta.requires_grad()) {
                        float* gia = ta.grad_ptr() + static_cast<std::int64_t>(n) * sa.c * plane;
                        for (std::int64_t i = 0; i < sa.c * plane; i++) gia[i] += gn[i];
                      }
                      if (tb.requires_grad()) {
                        float* gib = tb.grad_ptr() + static_cast<std::int64_t>(n) * sb.c * plane;
                        for (std::int64_t i = 0; i < sb.c * plane; i++)
                          gib[i] += gn[sa.c * plane + i];
                      }
                    }
                  }});
  }
  return out;
}

Tensor sum_all(const Tensor& input, Tape* tape) {
  float acc = 0.f;
  for (float v : input.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in = input, o = out;
    tape->watch(in), tape->watch(o);
    tape->record({OpKind::SumAll,
                  {in.id()},
                  o.id(),
                  [=]() mutable {
                    const float g = o.grad_ptr()[0];
                    float* gi = in.grad_ptr();
                    for (std::int64_t i = 0; i < in.numel(); i++) gi[i] += g;
                  }});
  }
  return out;
}

Tensor weighted_sum(const Tensor& input, const std::vector<float>& weights,
                    Tape* tape) {
  if (static_cast<std::int64_t>(weights.size()) != input.numel())
    throw ShapeError("weighted_sum: weight count mismatch");
  float acc = 0.f;
  const float* p = input.ptr();
  for (std::size_t i = 0; i < weights.size(); i++) acc += p[i] * weights[i];
  Tensor out = Tensor::scalar(acc);
  if (tape && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in = input, o = out;
    auto w = std::make_shared<std::vector<float>>(weights);
    tape->watch(in), tape->watch(o);
    tape->record({OpKind::WeightedSum,
                  {in.id()},
                  o.id(),
                  [=]() mutable {
                    const float g = o.grad_ptr()[0];
                    float* gi = in.grad_ptr();
                    for (std::size_t i = 0; i < w->size(); i++)
                      gi[i] += g * (*w)[i];
                  }});
  }
  return out;
}

}  // namespace sigseg
