#include <cmath>
#include <limits>

#include "sigseg/kernels.hpp"

// Naive loop kernels. Deliberately written as the plainest possible nested
// loops so they can serve as the oracle for the parallel implementations.

namespace sigseg::kernels {

ConvDims conv_dims(const Shape4& input, const Shape4& weight, int stride,
                   int pad) {
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (weight.c != input.c)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.c) +
                     " input channels, input has " + std::to_string(input.c));
  const int kh = weight.h, kw = weight.w;
  if (kh > input.h + 2 * pad || kw > input.w + 2 * pad)
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     to_string(input));
  ConvDims d;
  d.n = input.n;
  d.cin = input.c;
  d.cout = weight.n;
  d.h = input.h;
  d.w = input.w;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.hout = (input.h + 2 * pad - kh) / stride + 1;
  d.wout = (input.w + 2 * pad - kw) / stride + 1;
  return d;
}

UpconvDims upconv_dims(const Shape4& input, const Shape4& weight, int stride) {
  if (stride < 1) throw ShapeError("upconv2d: stride must be >= 1");
  if (weight.n != input.c)
    throw ShapeError("upconv2d: weight expects " + std::to_string(weight.n) +
                     " input channels, input has " + std::to_string(input.c));
  UpconvDims d;
  d.n = input.n;
  d.cin = input.c;
  d.cout = weight.c;
  d.h = input.h;
  d.w = input.w;
  d.kh = weight.h;
  d.kw = weight.w;
  d.stride = stride;
  d.hout = (input.h - 1) * stride + weight.h;
  d.wout = (input.w - 1) * stride + weight.w;
  return d;
}

PoolDims pool_dims(const Shape4& input, int k, int stride) {
  if (k < 1 || stride < 1) throw ShapeError("max_pool2d: k and stride must be >= 1");
  if (k > input.h || k > input.w)
    throw ShapeError("max_pool2d: window " + std::to_string(k) +
                     " exceeds input " + to_string(input));
  PoolDims d;
  d.n = input.n;
  d.c = input.c;
  d.h = input.h;
  d.w = input.w;
  d.k = k;
  d.stride = stride;
  d.hout = (input.h - k) / stride + 1;
  d.wout = (input.w - k) / stride + 1;
  return d;
}

namespace reference {

void conv2d_forward(const ConvDims& d, const float* in, const float* w,
                    const float* bias, float* out) {
  for (int n = 0; n < d.n; n++)
    for (int co = 0; co < d.cout; co++)
      for (int oh = 0; oh < d.hout; oh++)
        for (int ow = 0; ow < d.wout; ow++) {
          float acc = bias ? bias[co] : 0.f;
          for (int ci = 0; ci < d.cin; ci++)
            for (int r = 0; r < d.kh; r++)
              for (int s = 0; s < d.kw; s++) {
                int ih = oh * d.stride + r - d.pad;
                int iw = ow * d.stride + s - d.pad;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                acc += in[((static_cast<std::int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] *
                       w[((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + r) * d.kw + s];
              }
          out[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, const float* gout,
                           const float* w, float* gin) {
  for (int n = 0; n < d.n; n++)
    for (int ci = 0; ci < d.cin; ci++)
      for (int ih = 0; ih < d.h; ih++)
        for (int iw = 0; iw < d.w; iw++) {
          float acc = 0.f;
          for (int co = 0; co < d.cout; co++)
            for (int r = 0; r < d.kh; r++)
              for (int s = 0; s < d.kw; s++) {
                int oh_num = ih + d.pad - r;
                int ow_num = iw + d.pad - s;
                if (oh_num % d.stride || ow_num % d.stride) continue;
                int oh = oh_num / d.stride;
                int ow = ow_num / d.stride;
                if (oh < 0 || oh >= d.hout || ow < 0 || ow >= d.wout) continue;
                acc += gout[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow] *
                       w[((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + r) * d.kw + s];
              }
          gin[((static_cast<std::int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] += acc;
        }
}

void conv2d_backward_weight(const ConvDims& d, const float* gout,
                            const float* in, float* gw) {
  for (int co = 0; co < d.cout; co++)
    for (int ci = 0; ci < d.cin; ci++)
      for (int r = 0; r < d.kh; r++)
        for (int s = 0; s < d.kw; s++) {
          float acc = 0.f;
          for (int n = 0; n < d.n; n++)
            for (int oh = 0; oh < d.hout; oh++)
              for (int ow = 0; ow < d.wout; ow++) {
                int ih = oh * d.stride + r - d.pad;
                int iw = ow * d.stride + s - d.pad;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                acc += gout[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow] *
                       in[((static_cast<std::int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw];
              }
          gw[((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + r) * d.kw + s] += acc;
        }
}

void conv2d_backward_bias(const ConvDims& d, const float* gout, float* gb) {
  for (int co = 0; co < d.cout; co++) {
    float acc = 0.f;
    for (int n = 0; n < d.n; n++)
      for (int oh = 0; oh < d.hout; oh++)
        for (int ow = 0; ow < d.wout; ow++)
          acc += gout[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow];
    gb[co] += acc;
  }
}

void upconv2d_forward(const UpconvDims& d, const float* in, const float* w,
                      float* out) {
  for (int n = 0; n < d.n; n++)
    for (int co = 0; co < d.cout; co++)
      for (int oh = 0; oh < d.hout; oh++)
        for (int ow = 0; ow < d.wout; ow++) {
          float acc = 0.f;
          for (int ci = 0; ci < d.cin; ci++)
            for (int r = 0; r < d.kh; r++)
              for (int s = 0; s < d.kw; s++) {
                int ih_num = oh - r;
                int iw_num = ow - s;
                if (ih_num % d.stride || iw_num % d.stride) continue;
                int ih = ih_num / d.stride;
                int iw = iw_num / d.stride;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                acc += in[((static_cast<std::int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] *
                       w[((static_cast<std::int64_t>(ci) * d.cout + co) * d.kh + r) * d.kw + s];
              }
          out[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow] = acc;
        }
}

void upconv2d_backward_input(const UpconvDims& d, const float* gout,
                             const float* w, float* gin) {
  // d(out)/d(in): gin[n,ci,ih,iw] = sum_{co,r,s} gout[n,co,ih*s+r,iw*s+s'] * w[ci,co,r,s']
  for (int n = 0; n < d.n; n++)
    for (int ci = 0; ci < d.cin; ci++)
      for (int ih = 0; ih < d.h; ih++)
        for (int iw = 0; iw < d.w; iw++) {
          float acc = 0.f;
          for (int co = 0; co < d.cout; co++)
            for (int r = 0; r < d.kh; r++)
              for (int s = 0; s < d.kw; s++) {
                int oh = ih * d.stride + r;
                int ow = iw * d.stride + s;
                acc += gout[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow] *
                       w[((static_cast<std::int64_t>(ci) * d.cout + co) * d.kh + r) * d.kw + s];
              }
          gin[((static_cast<std::int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] += acc;
        }
}

void upconv2d_backward_weight(const UpconvDims& d, const float* gout,
                              const float* in, float* gw) {
  for (int ci = 0; ci < d.cin; ci++)
    for (int co = 0; co < d.cout; co++)
      for (int r = 0; r < d.kh; r++)
        for (int s = 0; s < d.kw; s++) {
          float acc = 0.f;
          for (int n = 0; n < d.n; n++)
            for (int ih = 0; ih < d.h; ih++)
              for (int iw = 0; iw < d.w; iw++) {
                int oh = ih * d.stride + r;
                int ow = iw * d.stride + s;
                acc += in[((static_cast<std::int64_t>(n) * d.cin + ci) * d.h + ih) * d.w + iw] *
                       gout[((static_cast<std::int64_t>(n) * d.cout + co) * d.hout + oh) * d.wout + ow];
              }
          gw[((static_cast<std::int64_t>(ci) * d.cout + co) * d.kh + r) * d.kw + s] += acc;
        }
}

void maxpool_forward(const PoolDims& d, const float* in, float* out,
                     std::int32_t* argmax) {
  for (int n = 0; n < d.n; n++)
    for (int c = 0; c < d.c; c++)
      for (int oh = 0; oh < d.hout; oh++)
        for (int ow = 0; ow < d.wout; ow++) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_idx = -1;
          for (int r = 0; r < d.k; r++)
            for (int s = 0; s < d.k; s++) {
              int ih = oh * d.stride + r;
              int iw = ow * d.stride + s;
              std::int64_t idx = ((static_cast<std::int64_t>(n) * d.c + c) * d.h + ih) * d.w + iw;
              // strict > keeps the first max in row-major window order
              if (in[idx] > best) {
                best = in[idx];
                best_idx = static_cast<std::int32_t>(idx);
              }
            }
          std::int64_t o = ((static_cast<std::int64_t>(n) * d.c + c) * d.hout + oh) * d.wout + ow;
          out[o] = best;
          argmax[o] = best_idx;
        }
}

void maxpool_backward(const PoolDims& d, const float* gout,
                      const std::int32_t* argmax, float* gin) {
  std::int64_t total = static_cast<std::int64_t>(d.n) * d.c * d.hout * d.wout;
  for (std::int64_t o = 0; o < total; o++) gin[argmax[o]] += gout[o];
}

void batchnorm_forward_train(const BnDims& d, const float* in,
                             const float* gamma, const float* beta, float eps,
                             float* out, float* batch_mean, float* batch_rstd,
                             float* batch_var) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t m = static_cast<std::int64_t>(d.n) * plane;
  for (int c = 0; c < d.c; c++) {
    float mean = 0.f;
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++) mean += p[i];
    }
    mean /= static_cast<float>(m);
    float var = 0.f;
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++) {
        float diff = p[i] - mean;
        var += diff * diff;
      }
    }
    var /= static_cast<float>(m);
    float rstd = 1.f / std::sqrt(var + eps);
    batch_mean[c] = mean;
    batch_rstd[c] = rstd;
    batch_var[c] = var;
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      float* q = out + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++)
        q[i] = gamma[c] * ((p[i] - mean) * rstd) + beta[c];
    }
  }
}

}  // namespace reference

}  // namespace sigseg::kernels
