#include <stdexcept>

#include "lvmae/tape.hpp"

namespace lvmae {

namespace {
void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

struct ConvDims {
    std::int64_t c, t, h, w;        // input
    std::int64_t o, kt, kh, kw;     // kernel
    std::int64_t st, sh, sw;        // stride
    std::int64_t ot, oh, ow;        // output
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, Stride3 stride) {
    require(input.shape.size() == 4, "conv3d: input must be [C,T,H,W]");
    require(kernel.shape.size() == 5, "conv3d: kernel must be [O,C,kt,kh,kw]");
    ConvDims d{};
    d.c = input.shape[0];
    d.t = input.shape[1];
    d.h = input.shape[2];
    d.w = input.shape[3];
    d.o = kernel.shape[0];
    require(kernel.shape[1] == d.c, "conv3d: channel mismatch");
    d.kt = kernel.shape[2];
    d.kh = kernel.shape[3];
    d.kw = kernel.shape[4];
    d.st = stride[0];
    d.sh = stride[1];
    d.sw = stride[2];
    require(d.st > 0 && d.sh > 0 && d.sw > 0, "conv3d: stride must be positive");
    require(d.t >= d.kt && d.h >= d.kh && d.w >= d.kw, "conv3d: kernel larger than input");
    require((d.t - d.kt) % d.st == 0 && (d.h - d.kh) % d.sh == 0 && (d.w - d.kw) % d.sw == 0,
            "conv3d: extents not divisible by stride for valid convolution");
    d.ot = (d.t - d.kt) / d.st + 1;
    d.oh = (d.h - d.kh) / d.sh + 1;
    d.ow = (d.w - d.kw) / d.sw + 1;
    return d;
}
}  // namespace

TensorPtr conv3d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, Stride3 stride) {
    check_finite(*input, "conv3d input");
    const ConvDims d = conv_dims(*input, *kernel, stride);
    if (bias) require(bias->size() == d.o, "conv3d: bias dim mismatch");
    auto out = make_tensor({d.o, d.ot, d.oh, d.ow});
    const std::int64_t in_thw = d.t * d.h * d.w, in_hw = d.h * d.w;
    const std::int64_t out_thw = d.ot * d.oh * d.ow;
    const std::int64_t kvol = d.kt * d.kh * d.kw;

#pragma omp parallel for schedule(static)
    for (std::int64_t o = 0; o < d.o; ++o) {
        const double b = bias ? bias->data[o] : 0.0;
        for (std::int64_t zt = 0; zt < d.ot; ++zt)
            for (std::int64_t zh = 0; zh < d.oh; ++zh)
                for (std::int64_t zw = 0; zw < d.ow; ++zw) {
                    double s = b;
                    for (std::int64_t c = 0; c < d.c; ++c)
                        for (std::int64_t dt = 0; dt < d.kt; ++dt)
                            for (std::int64_t dh = 0; dh < d.kh; ++dh)
                                for (std::int64_t dw = 0; dw < d.kw; ++dw)
                                    s += input->data[c * in_thw + (zt * d.st + dt) * in_hw +
                                                     (zh * d.sh + dh) * d.w + (zw * d.sw + dw)] *
                                         kernel->data[(o * d.c + c) * kvol +
                                                      (dt * d.kh + dh) * d.kw + dw];
                    out->data[o * out_thw + (zt * d.oh + zh) * d.ow + zw] = s;
                }
    }
    flop_counter().fetch_add(2 * d.o * out_thw * d.c * kvol, std::memory_order_relaxed);

    input->ensure_grad();
    kernel->ensure_grad();
    if (bias) bias->ensure_grad();
    out->ensure_grad();
    tape.record([input, kernel, bias, out, d, in_thw, in_hw, out_thw, kvol] {
        // input gradient, parallel over input channel
#pragma omp parallel for schedule(static)
        for (std::int64_t c = 0; c < d.c; ++c)
            for (std::int64_t o = 0; o < d.o; ++o)
                for (std::int64_t zt = 0; zt < d.ot; ++zt)
                    for (std::int64_t zh = 0; zh < d.oh; ++zh)
                        for (std::int64_t zw = 0; zw < d.ow; ++zw) {
                            const double g =
                                out->grad[o * out_thw + (zt * d.oh + zh) * d.ow + zw];
                            if (g == 0.0) continue;
                            for (std::int64_t dt = 0; dt < d.kt; ++dt)
                                for (std::int64_t dh = 0; dh < d.kh; ++dh)
                                    for (std::int64_t dw = 0; dw < d.kw; ++dw)
                                        input->grad[c * in_thw + (zt * d.st + dt) * in_hw +
                                                    (zh * d.sh + dh) * d.w + (zw * d.sw + dw)] +=
                                            g * kernel->data[(o * d.c + c) * kvol +
                                                             (dt * d.kh + dh) * d.kw + dw];
                        }
        // kernel gradient, parallel over output channel
#pragma omp parallel for schedule(static)
        for (std::int64_t o = 0; o < d.o; ++o)
            for (std::int64_t zt = 0; zt < d.ot; ++zt)
                for (std::int64_t zh = 0; zh < d.oh; ++zh)
                    for (std::int64_t zw = 0; zw < d.ow; ++zw) {
                        const double g = out->grad[o * out_thw + (zt * d.oh + zh) * d.ow + zw];
                        if (g == 0.0) continue;
                        for (std::int64_t c = 0; c < d.c; ++c)
                            for (std::int64_t dt = 0; dt < d.kt; ++dt)
                                for (std::int64_t dh = 0; dh < d.kh; ++dh)
                                    for (std::int64_t dw = 0; dw < d.kw; ++dw)
                                        kernel->grad[(o * d.c + c) * kvol +
                                                     (dt * d.kh + dh) * d.kw + dw] +=
                                            g * input->data[c * in_thw + (zt * d.st + dt) * in_hw +
                                                            (zh * d.sh + dh) * d.w +
                                                            (zw * d.sw + dw)];
                    }
        if (bias)
            for (std::int64_t o = 0; o < d.o; ++o)
                for (std::int64_t p = 0; p < out_thw; ++p) bias->grad[o] += out->grad[o * out_thw + p];
    });
    return out;
}

TensorPtr conv3d_transpose(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                           const TensorPtr& bias, Stride3 stride) {
    check_finite(*input, "conv3d_transpose input");
    require(input->shape.size() == 4, "conv3d_transpose: input must be [C,T,H,W]");
    require(kernel->shape.size() == 5, "conv3d_transpose: kernel must be [C,O,kt,kh,kw]");
    require(kernel->shape[0] == input->shape[0], "conv3d_transpose: channel mismatch");
    const std::int64_t c = input->shape[0], t = input->shape[1], h = input->shape[2],
                       w = input->shape[3];
    const std::int64_t o = kernel->shape[1], kt = kernel->shape[2], kh = kernel->shape[3],
                       kw = kernel->shape[4];
    const std::int64_t st = stride[0], sh = stride[1], sw = stride[2];
    require(st > 0 && sh > 0 && sw > 0, "conv3d_transpose: stride must be positive");
    const std::int64_t ot = (t - 1) * st + kt, oh = (h - 1) * sh + kh, ow = (w - 1) * sw + kw;
    if (bias) require(bias->size() == o, "conv3d_transpose: bias dim mismatch");
    auto out = make_tensor({o, ot, oh, ow});
    const std::int64_t in_thw = t * h * w, in_hw = h * w;
    const std::int64_t out_thw = ot * oh * ow, out_hw = oh * ow;
    const std::int64_t kvol = kt * kh * kw;

#pragma omp parallel for schedule(static)
    for (std::int64_t oc = 0; oc < o; ++oc) {
        if (bias) {
            const double b = bias->data[oc];
            for (std::int64_t p = 0; p < out_thw; ++p) out->data[oc * out_thw + p] = b;
        }
        for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t zt = 0; zt < t; ++zt)
                for (std::int64_t zh = 0; zh < h; ++zh)
                    for (std::int64_t zw = 0; zw < w; ++zw) {
                        const double v = input->data[ic * in_thw + zt * in_hw + zh * w + zw];
                        if (v == 0.0) continue;
                        for (std::int64_t dt = 0; dt < kt; ++dt)
                            for (std::int64_t dh = 0; dh < kh; ++dh)
                                for (std::int64_t dw = 0; dw < kw; ++dw)
                                    out->data[oc * out_thw + (zt * st + dt) * out_hw +
                                              (zh * sh + dh) * ow + (zw * sw + dw)] +=
                                        v * kernel->data[(ic * o + oc) * kvol +
                                                         (dt * kh + dh) * kw + dw];
                    }
    }
    flop_counter().fetch_add(2 * o * c * in_thw * kvol, std::memory_order_relaxed);

    input->ensure_grad();
    kernel->ensure_grad();
    if (bias) bias->ensure_grad();
    out->ensure_grad();
    tape.record([input, kernel, bias, out, c, t, h, w, o, kt, kh, kw, st, sh, sw, in_thw, in_hw,
                 out_thw, out_hw, ow, kvol] {
#pragma omp parallel for schedule(static)
        for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t zt = 0; zt < t; ++zt)
                for (std::int64_t zh = 0; zh < h; ++zh)
                    for (std::int64_t zw = 0; zw < w; ++zw) {
                        double s = 0.0;
                        for (std::int64_t oc = 0; oc < o; ++oc)
                            for (std::int64_t dt = 0; dt < kt; ++dt)
                                for (std::int64_t dh = 0; dh < kh; ++dh)
                                    for (std::int64_t dw = 0; dw < kw; ++dw)
                                        s += out->grad[oc * out_thw + (zt * st + dt) * out_hw +
                                                       (zh * sh + dh) * ow + (zw * sw + dw)] *
                                             kernel->data[(ic * o + oc) * kvol +
                                                          (dt * kh + dh) * kw + dw];
                        input->grad[ic * in_thw + zt * in_hw + zh * w + zw] += s;
                    }
#pragma omp parallel for schedule(static)
        for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t oc = 0; oc < o; ++oc)
                for (std::int64_t dt = 0; dt < kt; ++dt)
                    for (std::int64_t dh = 0; dh < kh; ++dh)
                        for (std::int64_t dw = 0; dw < kw; ++dw) {
                            double s = 0.0;
                            for (std::int64_t zt = 0; zt < t; ++zt)
                                for (std::int64_t zh = 0; zh < h; ++zh)
                                    for (std::int64_t zw = 0; zw < w; ++zw)
                                        s += input->data[ic * in_thw + zt * in_hw + zh * w + zw] *
                                             out->grad[oc * out_thw + (zt * st + dt) * out_hw +
                                                       (zh * sh + dh) * ow + (zw * sw + dw)];
                            kernel->grad[(ic * o + oc) * kvol + (dt * kh + dh) * kw + dw] += s;
                        }
        if (bias)
            for (std::int64_t oc = 0; oc < o; ++oc)
                for (std::int64_t p = 0; p < out_thw; ++p)
                    bias->grad[oc] += out->grad[oc * out_thw + p];
    });
    return out;
}

}  // namespace lvmae
