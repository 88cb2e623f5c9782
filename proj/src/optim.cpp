#include "sigseg/optim.hpp"

#include <cmath>

namespace sigseg {

namespace {

struct DiceSums {
  float prod, pred, truth;
};

DiceSums dice_sums(const Tensor& pred, const Tensor& truth) {
  if (!(pred.shape() == truth.shape()))
    throw ShapeError("dice: shape mismatch " + to_string(pred.shape()) + " vs " +
                     to_string(truth.shape()));
  const float* p = pred.ptr();
  const float* t = truth.ptr();
  DiceSums s{0.f, 0.f, 0.f};
  for (std::int64_t i = 0; i < pred.numel(); i++) {
    if (t[i] != 0.f && t[i] != 1.f)
      throw ContractError("dice: truth mask must be binary");
    s.prod += p[i] * t[i];
    s.pred += p[i];
    s.truth += t[i];
  }
  return s;
}

// d(dice)/d(p_i) = (2 * t_i * B - A) / B^2 with A = 2*sum(pt) + s,
// B = sum(p) + sum(t) + s
void record_dice_node(Tape* tape, OpKind kind, Tensor pred, Tensor truth,
                      Tensor out, float a, float b, float sign) {
  tape->watch(pred), tape->watch(out);
  tape->record({kind,
                {pred.id(), truth.id()},
                out.id(),
                [=]() mutable {
                  const float g = out.grad_ptr()[0] * sign;
                  const float inv_b2 = 1.f / (b * b);
                  const float* t = truth.ptr();
                  float* gp = pred.grad_ptr();
                  for (std::int64_t i = 0; i < pred.numel(); i++)
                    gp[i] += g * (2.f * t[i] * b - a) * inv_b2;
                }});
}

}  // namespace

Tensor soft_dice(const Tensor& pred, const Tensor& truth, float smoothing,
                 Tape* tape) {
  DiceSums s = dice_sums(pred, truth);
  const float a = 2.f * s.prod + smoothing;
  const float b = s.pred + s.truth + smoothing;
  Tensor out = Tensor::scalar(a / b);
  if (tape && pred.requires_grad()) {
    out.set_requires_grad(true);
    record_dice_node(tape, OpKind::SoftDice, pred, truth, out, a, b, 1.f);
  }
  return out;
}

Tensor dice_loss(const Tensor& pred, const Tensor& truth, float smoothing,
                 Tape* tape) {
  DiceSums s = dice_sums(pred, truth);
  const float a = 2.f * s.prod + smoothing;
  const float b = s.pred + s.truth + smoothing;
  Tensor out = Tensor::scalar(1.f - a / b);
  if (tape && pred.requires_grad()) {
    out.set_requires_grad(true);
    record_dice_node(tape, OpKind::DiceLoss, pred, truth, out, a, b, -1.f);
  }
  return out;
}

void Adam::register_param(const std::string& name, Tensor param) {
  Slot s;
  s.name = name;
  s.param = param;
  s.m.assign(static_cast<std::size_t>(param.numel()), 0.f);
  s.v.assign(static_cast<std::size_t>(param.numel()), 0.f);
  slots_.push_back(std::move(s));
}

Adam::Slot& Adam::slot(const std::string& name) {
  for (auto& s : slots_)
    if (s.name == name) return s;
  throw ContractError("adam: unknown parameter " + name);
}

void Adam::step() {
  t_ += 1;
  const float bc1 = 1.f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.f - std::pow(cfg_.beta2, static_cast<float>(t_));
  for (auto& s : slots_) {
    if (!s.param.requires_grad()) continue;  // frozen
    if (!s.param.has_grad()) continue;
    float* p = s.param.ptr();
    const float* g = s.param.grad_ptr();
    for (std::size_t i = 0; i < s.m.size(); i++) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.f - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.f - cfg_.beta2) * g[i] * g[i];
      const float mhat = s.m[i] / bc1;
      const float vhat = s.v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace sigseg
