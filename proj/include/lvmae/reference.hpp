#pragma once

#include <cstdint>
#include <vector>

#include "lvmae/tensor.hpp"

namespace lvmae::ref {

// Plain serial kernels kept as the oracle for the OpenMP implementations.
// Inner accumulation order matches the parallel kernels exactly, so outputs
// must be bit-identical.

inline void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void conv3d(const double* input, const double* kernel, const double* bias, double* out,
                   std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w, std::int64_t o,
                   std::int64_t kt, std::int64_t kh, std::int64_t kw, std::int64_t st,
                   std::int64_t sh, std::int64_t sw) {
    const std::int64_t ot = (t - kt) / st + 1, oh = (h - kh) / sh + 1, ow = (w - kw) / sw + 1;
    const std::int64_t in_thw = t * h * w, in_hw = h * w;
    const std::int64_t out_thw = ot * oh * ow;
    const std::int64_t kvol = kt * kh * kw;
    for (std::int64_t oc = 0; oc < o; ++oc)
        for (std::int64_t zt = 0; zt < ot; ++zt)
            for (std::int64_t zh = 0; zh < oh; ++zh)
                for (std::int64_t zw = 0; zw < ow; ++zw) {
                    double s = bias ? bias[oc] : 0.0;
                    for (std::int64_t ic = 0; ic < c; ++ic)
                        for (std::int64_t dt = 0; dt < kt; ++dt)
                            for (std::int64_t dh = 0; dh < kh; ++dh)
                                for (std::int64_t dw = 0; dw < kw; ++dw)
                                    s += input[ic * in_thw + (zt * st + dt) * in_hw +
                                               (zh * sh + dh) * w + (zw * sw + dw)] *
                                         kernel[(oc * c + ic) * kvol + (dt * kh + dh) * kw + dw];
                    out[oc * out_thw + (zt * oh + zh) * ow + zw] = s;
                }
}

}  // namespace lvmae::ref
