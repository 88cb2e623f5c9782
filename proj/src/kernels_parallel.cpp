#include <cmath>
#include <limits>

#include "sigseg/kernels.hpp"

// Production kernels. The parallel loops split work across independent
// output elements only, and every element accumulates its terms in the same
// order as the reference kernels, so outputs are identical for any thread
// count. Stride-1 convolutions (the only stride the model uses) get a
// row-contiguous fast path.

namespace sigseg::kernels {

namespace {

inline std::int64_t idx4(int a, int b, int c, int d, int eb, int ec, int ed) {
  return ((static_cast<std::int64_t>(a) * eb + b) * ec + c) * ed + d;
}

void conv2d_forward_s1(const ConvDims& d, const float* in, const float* w,
                       const float* bias, float* out) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; n++)
    for (int co = 0; co < d.cout; co++) {
      float* op = out + idx4(n, co, 0, 0, d.cout, d.hout, d.wout);
      const float b = bias ? bias[co] : 0.f;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.hout) * d.wout; i++)
        op[i] = b;
      for (int ci = 0; ci < d.cin; ci++) {
        const float* ip = in + idx4(n, ci, 0, 0, d.cin, d.h, d.w);
        const float* wp = w + idx4(co, ci, 0, 0, d.cin, d.kh, d.kw);
        for (int r = 0; r < d.kh; r++)
          for (int s = 0; s < d.kw; s++) {
            const float wv = wp[r * d.kw + s];
            const int sw = s - d.pad;
            const int lo = sw < 0 ? -sw : 0;
            const int hi = sw + d.wout > d.w ? d.w - sw : d.wout;
            for (int oh = 0; oh < d.hout; oh++) {
              const int ih = oh + r - d.pad;
              if (ih < 0 || ih >= d.h) continue;
              const float* irow = ip + static_cast<std::int64_t>(ih) * d.w + sw;
              float* orow = op + static_cast<std::int64_t>(oh) * d.wout;
              for (int ow = lo; ow < hi; ow++) orow[ow] += wv * irow[ow];
            }
          }
      }
    }
}

void conv2d_backward_input_s1(const ConvDims& d, const float* gout,
                              const float* w, float* gin) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; n++)
    for (int ci = 0; ci < d.cin; ci++) {
      float* gp = gin + idx4(n, ci, 0, 0, d.cin, d.h, d.w);
      for (int co = 0; co < d.cout; co++) {
        const float* gop = gout + idx4(n, co, 0, 0, d.cout, d.hout, d.wout);
        const float* wp = w + idx4(co, ci, 0, 0, d.cin, d.kh, d.kw);
        for (int r = 0; r < d.kh; r++)
          for (int s = 0; s < d.kw; s++) {
            const float wv = wp[r * d.kw + s];
            // gin[ih, iw] += gout[ih + pad - r, iw + pad - s] * wv
            const int sw = d.pad - s;
            const int lo = sw < 0 ? -sw : 0;
            const int hi = d.wout - sw < d.w ? d.wout - sw : d.w;
            for (int ih = 0; ih < d.h; ih++) {
              const int oh = ih + d.pad - r;
              if (oh < 0 || oh >= d.hout) continue;
              const float* grow = gop + static_cast<std::int64_t>(oh) * d.wout + sw;
              float* irow = gp + static_cast<std::int64_t>(ih) * d.w;
              for (int iw = lo; iw < hi; iw++) irow[iw] += wv * grow[iw];
            }
          }
      }
    }
}

}  // namespace

void conv2d_forward(const ConvDims& d, const float* in, const float* w,
                    const float* bias, float* out) {
  if (d.stride == 1) {
    conv2d_forward_s1(d, in, w, bias, out);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
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
                acc += in[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] *
                       w[idx4(co, ci, r, s, d.cin, d.kh, d.kw)];
              }
          out[idx4(n, co, oh, ow, d.cout, d.hout, d.wout)] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, const float* gout,
                           const float* w, float* gin) {
  if (d.stride == 1) {
    conv2d_backward_input_s1(d, gout, w, gin);
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
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
                acc += gout[idx4(n, co, oh, ow, d.cout, d.hout, d.wout)] *
                       w[idx4(co, ci, r, s, d.cin, d.kh, d.kw)];
              }
          gin[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] += acc;
        }
}

void conv2d_backward_weight(const ConvDims& d, const float* gout,
                            const float* in, float* gw) {
  const std::int64_t wcount = static_cast<std::int64_t>(d.cout) * d.cin * d.kh * d.kw;
#pragma omp parallel for schedule(static)
  for (std::int64_t wi = 0; wi < wcount; wi++) {
    const int s = static_cast<int>(wi % d.kw);
    const int r = static_cast<int>((wi / d.kw) % d.kh);
    const int ci = static_cast<int>((wi / (d.kw * d.kh)) % d.cin);
    const int co = static_cast<int>(wi / (static_cast<std::int64_t>(d.kw) * d.kh * d.cin));
    float acc = 0.f;
    for (int n = 0; n < d.n; n++)
      for (int oh = 0; oh < d.hout; oh++) {
        const int ih = oh * d.stride + r - d.pad;
        if (ih < 0 || ih >= d.h) continue;
        const float* grow = gout + idx4(n, co, oh, 0, d.cout, d.hout, d.wout);
        const float* irow = in + idx4(n, ci, ih, 0, d.cin, d.h, d.w);
        for (int ow = 0; ow < d.wout; ow++) {
          const int iw = ow * d.stride + s - d.pad;
          if (iw < 0 || iw >= d.w) continue;
          acc += grow[ow] * irow[iw];
        }
      }
    gw[wi] += acc;
  }
}

void conv2d_backward_bias(const ConvDims& d, const float* gout, float* gb) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < d.cout; co++) {
    float acc = 0.f;
    for (int n = 0; n < d.n; n++) {
      const float* gp = gout + idx4(n, co, 0, 0, d.cout, d.hout, d.wout);
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.hout) * d.wout; i++)
        acc += gp[i];
    }
    gb[co] += acc;
  }
}

void upconv2d_forward(const UpconvDims& d, const float* in, const float* w,
                      float* out) {
  if (d.kh == 2 && d.kw == 2 && d.stride == 2) {
    // each output position receives exactly one tap: (r, s) = (oh & 1, ow & 1)
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; n++)
      for (int co = 0; co < d.cout; co++)
        for (int oh = 0; oh < d.hout; oh++) {
          const int ih = oh >> 1, r = oh & 1;
          float* orow = out + idx4(n, co, oh, 0, d.cout, d.hout, d.wout);
          for (int ow = 0; ow < d.wout; ow++) {
            const int iw = ow >> 1, s = ow & 1;
            float acc = 0.f;
            for (int ci = 0; ci < d.cin; ci++)
              acc += in[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] *
                     w[idx4(ci, co, r, s, d.cout, d.kh, d.kw)];
            orow[ow] = acc;
          }
        }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
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
                acc += in[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] *
                       w[idx4(ci, co, r, s, d.cout, d.kh, d.kw)];
              }
          out[idx4(n, co, oh, ow, d.cout, d.hout, d.wout)] = acc;
        }
}

void upconv2d_backward_input(const UpconvDims& d, const float* gout,
                             const float* w, float* gin) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; n++)
    for (int ci = 0; ci < d.cin; ci++)
      for (int ih = 0; ih < d.h; ih++)
        for (int iw = 0; iw < d.w; iw++) {
          float acc = 0.f;
          for (int co = 0; co < d.cout; co++)
            for (int r = 0; r < d.kh; r++)
              for (int s = 0; s < d.kw; s++)
                acc += gout[idx4(n, co, ih * d.stride + r, iw * d.stride + s,
                                 d.cout, d.hout, d.wout)] *
                       w[idx4(ci, co, r, s, d.cout, d.kh, d.kw)];
          gin[idx4(n, ci, ih, iw, d.cin, d.h, d.w)] += acc;
        }
}

void upconv2d_backward_weight(const UpconvDims& d, const float* gout,
                              const float* in, float* gw) {
  const std::int64_t wcount = static_cast<std::int64_t>(d.cin) * d.cout * d.kh * d.kw;
#pragma omp parallel for schedule(static)
  for (std::int64_t wi = 0; wi < wcount; wi++) {
    const int s = static_cast<int>(wi % d.kw);
    const int r = static_cast<int>((wi / d.kw) % d.kh);
    const int co = static_cast<int>((wi / (d.kw * d.kh)) % d.cout);
    const int ci = static_cast<int>(wi / (static_cast<std::int64_t>(d.kw) * d.kh * d.cout));
    float acc = 0.f;
    for (int n = 0; n < d.n; n++)
      for (int ih = 0; ih < d.h; ih++) {
        const float* irow = in + idx4(n, ci, ih, 0, d.cin, d.h, d.w);
        const float* grow =
            gout + idx4(n, co, ih * d.stride + r, 0, d.cout, d.hout, d.wout);
        for (int iw = 0; iw < d.w; iw++)
          acc += irow[iw] * grow[iw * d.stride + s];
      }
    gw[wi] += acc;
  }
}

void maxpool_forward(const PoolDims& d, const float* in, float* out,
                     std::int32_t* argmax) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; n++)
    for (int c = 0; c < d.c; c++)
      for (int oh = 0; oh < d.hout; oh++)
        for (int ow = 0; ow < d.wout; ow++) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_idx = -1;
          for (int r = 0; r < d.k; r++)
            for (int s = 0; s < d.k; s++) {
              std::int64_t idx = idx4(n, c, oh * d.stride + r, ow * d.stride + s,
                                      d.c, d.h, d.w);
              if (in[idx] > best) {
                best = in[idx];
                best_idx = static_cast<std::int32_t>(idx);
              }
            }
          std::int64_t o = idx4(n, c, oh, ow, d.c, d.hout, d.wout);
          out[o] = best;
          argmax[o] = best_idx;
        }
}

void maxpool_backward(const PoolDims& d, const float* gout,
                      const std::int32_t* argmax, float* gin) {
  // argmax targets stay inside their own (n, c) plane, so planes are
  // independent and the scatter inside each plane runs serially
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; n++)
    for (int c = 0; c < d.c; c++) {
      const std::int64_t base = idx4(n, c, 0, 0, d.c, d.hout, d.wout);
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.hout) * d.wout; i++)
        gin[argmax[base + i]] += gout[base + i];
    }
}

void batchnorm_forward_train(const BnDims& d, const float* in,
                             const float* gamma, const float* beta, float eps,
                             float* out, float* batch_mean, float* batch_rstd,
                             float* batch_var) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t m = static_cast<std::int64_t>(d.n) * plane;
#pragma omp parallel for schedule(static)
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

void batchnorm_forward_eval(const BnDims& d, const float* in,
                            const float* gamma, const float* beta,
                            const float* rmean, const float* rvar, float eps,
                            float* out) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d.c; c++) {
    const float rstd = 1.f / std::sqrt(rvar[c] + eps);
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      float* q = out + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++)
        q[i] = gamma[c] * ((p[i] - rmean[c]) * rstd) + beta[c];
    }
  }
}

void batchnorm_backward_train(const BnDims& d, const float* in,
                              const float* gout, const float* gamma,
                              const float* mean, const float* rstd, float* gin,
                              float* ggamma, float* gbeta) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t m = static_cast<std::int64_t>(d.n) * plane;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d.c; c++) {
    float sum_g = 0.f;
    float sum_gx = 0.f;
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      const float* g = gout + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++) {
        float xhat = (p[i] - mean[c]) * rstd[c];
        sum_g += g[i];
        sum_gx += g[i] * xhat;
      }
    }
    ggamma[c] += sum_gx;
    gbeta[c] += sum_g;
    const float inv_m = 1.f / static_cast<float>(m);
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      const float* g = gout + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      float* q = gin + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++) {
        float xhat = (p[i] - mean[c]) * rstd[c];
        q[i] += gamma[c] * rstd[c] * (g[i] - sum_g * inv_m - xhat * sum_gx * inv_m);
      }
    }
  }
}

void batchnorm_backward_eval(const BnDims& d, const float* in,
                             const float* gout, const float* gamma,
                             const float* rmean, const float* rvar, float eps,
                             float* gin, float* ggamma, float* gbeta) {
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d.c; c++) {
    const float rstd = 1.f / std::sqrt(rvar[c] + eps);
    float sum_g = 0.f;
    float sum_gx = 0.f;
    for (int n = 0; n < d.n; n++) {
      const float* p = in + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      const float* g = gout + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      float* q = gin + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++) {
        float xhat = (p[i] - rmean[c]) * rstd;
        sum_g += g[i];
        sum_gx += g[i] * xhat;
        q[i] += gamma[c] * rstd * g[i];
      }
    }
    ggamma[c] += sum_gx;
    gbeta[c] += sum_g;
  }
}

void relu_forward(const float* in, float* out, std::int64_t count) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; i++) out[i] = in[i] > 0.f ? in[i] : 0.f;
}

void relu_backward(const float* in, const float* gout, float* gin,
                   std::int64_t count) {
  // subgradient at exactly 0 is 0
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; i++)
    if (in[i] > 0.f) gin[i] += gout[i];
}

void sigmoid_forward(const float* in, float* out, std::int64_t count) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; i++)
    out[i] = 1.f / (1.f + std::exp(-in[i]));
}

void sigmoid_backward(const float* out, const float* gout, float* gin,
                      std::int64_t count) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; i++)
    gin[i] += gout[i] * out[i] * (1.f - out[i]);
}

}  // namespace sigseg::kernels
