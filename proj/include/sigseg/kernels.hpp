#pragma once

#include "sigseg/tensor.hpp"

namespace sigseg::kernels {

// Validated geometry for a cross-correlation. hout/wout use floor division,
// H' = (H + 2p - kh)/stride + 1.
struct ConvDims {
  int n, cin, cout, h, w, kh, kw, stride, pad, hout, wout;
};
ConvDims conv_dims(const Shape4& input, const Shape4& weight, int stride,
                   int pad);

// Transposed convolution: weight is (Cin, Cout, kh, kw),
// Hout = (H - 1) * stride + kh.
struct UpconvDims {
  int n, cin, cout, h, w, kh, kw, stride, hout, wout;
};
UpconvDims upconv_dims(const Shape4& input, const Shape4& weight, int stride);

struct PoolDims {
  int n, c, h, w, k, stride, hout, wout;
};
PoolDims pool_dims(const Shape4& input, int k, int stride);

struct BnDims {
  int n, c, h, w;
};

// Production kernels. Parallelised with OpenMP over independent output
// elements; per-element accumulation order is identical to the reference
// kernels, so results match the serial path bit for bit and do not depend
// on the thread count. All backward kernels accumulate (+=) into their
// gradient buffers.
void conv2d_forward(const ConvDims& d, const float* in, const float* w,
                    const float* bias, float* out);
void conv2d_backward_input(const ConvDims& d, const float* gout,
                           const float* w, float* gin);
void conv2d_backward_weight(const ConvDims& d, const float* gout,
                            const float* in, float* gw);
void conv2d_backward_bias(const ConvDims& d, const float* gout, float* gb);

void upconv2d_forward(const UpconvDims& d, const float* in, const float* w,
                      float* out);
void upconv2d_backward_input(const UpconvDims& d, const float* gout,
                             const float* w, float* gin);
void upconv2d_backward_weight(const UpconvDims& d, const float* gout,
                              const float* in, float* gw);

void maxpool_forward(const PoolDims& d, const float* in, float* out,
                     std::int32_t* argmax);
void maxpool_backward(const PoolDims& d, const float* gout,
                      const std::int32_t* argmax, float* gin);

void batchnorm_forward_train(const BnDims& d, const float* in,
                             const float* gamma, const float* beta, float eps,
                             float* out, float* batch_mean, float* batch_rstd,
                             float* batch_var);
void batchnorm_forward_eval(const BnDims& d, const float* in,
                            const float* gamma, const float* beta,
                            const float* rmean, const float* rvar, float eps,
                            float* out);
void batchnorm_backward_train(const BnDims& d, const float* in,
                              const float* gout, const float* gamma,
                              const float* mean, const float* rstd, float* gin,
                              float* ggamma, float* gbeta);
void batchnorm_backward_eval(const BnDims& d, const float* in,
                             const float* gout, const float* gamma,
                             const float* rmean, const float* rvar, float eps,
                             float* gin, float* ggamma, float* gbeta);

void relu_forward(const float* in, float* out, std::int64_t count);
void relu_backward(const float* in, const float* gout, float* gin,
                   std::int64_t count);
void sigmoid_forward(const float* in, float* out, std::int64_t count);
void sigmoid_backward(const float* out, const float* gout, float* gin,
                      std::int64_t count);

// Serial naive-loop implementations, kept as the test oracle and as the
// baseline side of the kernel benchmark. Not called from production code.
namespace reference {

void conv2d_forward(const ConvDims& d, const float* in, const float* w,
                    const float* bias, float* out);
void conv2d_backward_input(const ConvDims& d, const float* gout,
                           const float* w, float* gin);
void conv2d_backward_weight(const ConvDims& d, const float* gout,
                            const float* in, float* gw);
void conv2d_backward_bias(const ConvDims& d, const float* gout, float* gb);

void upconv2d_forward(const UpconvDims& d, const float* in, const float* w,
                      float* out);
void upconv2d_backward_input(const UpconvDims& d, const float* gout,
                             const float* w, float* gin);
void upconv2d_backward_weight(const UpconvDims& d, const float* gout,
                              const float* in, float* gw);

void maxpool_forward(const PoolDims& d, const float* in, float* out,
                     std::int32_t* argmax);
void maxpool_backward(const PoolDims& d, const float* gout,
                      const std::int32_t* argmax, float* gin);

void batchnorm_forward_train(const BnDims& d, const float* in,
                             const float* gamma, const float* beta, float eps,
                             float* out, float* batch_mean, float* batch_rstd,
                             float* batch_var);

}  // namespace reference

}  // namespace sigseg::kernels
