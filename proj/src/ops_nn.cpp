#include <cmath>
#include <stdexcept>

#include "lvmae/tape.hpp"

namespace lvmae {

namespace {
void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

TensorPtr gelu(Tape& tape, const TensorPtr& x) {
    // tanh approximation
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    auto out = make_tensor(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) {
        const double v = x->data[i];
        out->data[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + 0.044715 * v * v * v)));
    }
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
        for (std::int64_t i = 0; i < x->size(); ++i) {
            const double v = x->data[i];
            const double u = kC * (v + 0.044715 * v * v * v);
            const double t = std::tanh(u);
            const double du = kC * (1.0 + 3.0 * 0.044715 * v * v);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            x->grad[i] += out->grad[i] * d;
        }
    });
    return out;
}

TensorPtr sigmoid(Tape& tape, const TensorPtr& x) {
    auto out = make_tensor(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
        for (std::int64_t i = 0; i < x->size(); ++i) {
            const double s = out->data[i];
            x->grad[i] += out->grad[i] * s * (1.0 - s);
        }
    });
    return out;
}

TensorPtr softmax(Tape& tape, const TensorPtr& x) {
    require(!x->shape.empty(), "softmax: empty shape");
    check_finite(*x, "softmax input");
    const std::int64_t d = x->shape.back();
    const std::int64_t rows = x->size() / d;
    auto out = make_tensor(x->shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x->data.data() + r * d;
        double* o = out->data.data() + r * d;
        double mx = in[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            s += o[j];
        }
        const double inv = 1.0 / s;
        for (std::int64_t j = 0; j < d; ++j) o[j] *= inv;
    }
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, rows, d] {
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* p = out->data.data() + r * d;
            const double* g = out->grad.data() + r * d;
            double dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += p[j] * g[j];
            for (std::int64_t j = 0; j < d; ++j) x->grad[r * d + j] += p[j] * (g[j] - dot);
        }
    });
    return out;
}

TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
    require(!x->shape.empty(), "layer_norm: empty shape");
    const std::int64_t d = x->shape.back();
    require(gamma->size() == d && beta->size() == d, "layer_norm: affine dim mismatch");
    require(eps > 0.0, "layer_norm: eps must be positive");
    const std::int64_t rows = x->size() / d;
    auto out = make_tensor(x->shape);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x->data.data() + r * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = in[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (in[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out->data[r * d + j] = gamma->data[j] * h + beta->data[j];
        }
    }
    x->ensure_grad();
    gamma->ensure_grad();
    beta->ensure_grad();
    out->ensure_grad();
    tape.record([x, gamma, beta, out, inv_std, xhat, rows, d] {
        for (std::int64_t r = 0; r < rows; ++r) {
            const double is = (*inv_std)[r];
            const double* h = xhat->data() + r * d;
            const double* g = out->grad.data() + r * d;
            double sum_gh = 0.0, sum_ghh = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double gg = g[j] * gamma->data[j];
                sum_gh += gg;
                sum_ghh += gg * h[j];
                gamma->grad[j] += g[j] * h[j];
                beta->grad[j] += g[j];
            }
            const double invd = 1.0 / static_cast<double>(d);
            for (std::int64_t j = 0; j < d; ++j) {
                const double gg = g[j] * gamma->data[j];
                x->grad[r * d + j] += is * (gg - invd * sum_gh - invd * h[j] * sum_ghh);
            }
        }
    });
    return out;
}

TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits,
                        const std::vector<std::int64_t>& labels, double smoothing) {
    require(logits->shape.size() == 2, "cross_entropy: logits must be 2-D");
    const std::int64_t n = logits->shape[0], c = logits->shape[1];
    require(static_cast<std::int64_t>(labels.size()) == n, "cross_entropy: label count mismatch");
    require(c >= 2, "cross_entropy: need at least 2 classes");
    require(smoothing >= 0.0 && smoothing < 1.0, "cross_entropy: bad smoothing");
    for (auto l : labels) require(0 <= l && l < c, "cross_entropy: label out of range");

    auto probs = std::make_shared<std::vector<double>>(logits->size());
    auto out = make_tensor({1});
    double loss = 0.0;
    for (std::int64_t r = 0; r < n; ++r) {
        const double* in = logits->data.data() + r * c;
        double mx = in[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
        const double lse = mx + std::log(s);
        for (std::int64_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(in[j] - lse);
        // smoothed target: (1-smoothing) on label, smoothing/C elsewhere-inclusive
        const double off = smoothing / static_cast<double>(c);
        for (std::int64_t j = 0; j < c; ++j) {
            const double y = off + (j == labels[r] ? (1.0 - smoothing) : 0.0);
            if (y > 0.0) loss -= y * (in[j] - lse);
        }
    }
    out->data[0] = loss / static_cast<double>(n);
    logits->ensure_grad();
    out->ensure_grad();
    tape.record([logits, out, probs, labels, n, c, smoothing] {
        const double g = out->grad[0] / static_cast<double>(n);
        const double off = smoothing / static_cast<double>(c);
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < c; ++j) {
                const double y = off + (j == labels[r] ? (1.0 - smoothing) : 0.0);
                logits->grad[r * c + j] += g * ((*probs)[r * c + j] - y);
            }
    });
    return out;
}

TensorPtr chw_to_rows(Tape& tape, const TensorPtr& x) {
    require(x->shape.size() == 4, "chw_to_rows: expected [C,T,H,W]");
    const std::int64_t c = x->shape[0];
    const std::int64_t vol = x->size() / c;
    auto out = make_tensor({vol, c});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < vol; ++p) out->data[p * c + ch] = x->data[ch * vol + p];
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, c, vol] {
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < vol; ++p) x->grad[ch * vol + p] += out->grad[p * c + ch];
    });
    return out;
}

TensorPtr rows_to_chw(Tape& tape, const TensorPtr& x, std::int64_t t, std::int64_t h,
                      std::int64_t w) {
    require(x->shape.size() == 2, "rows_to_chw: expected 2-D");
    require(x->shape[0] == t * h * w, "rows_to_chw: row count mismatch");
    const std::int64_t c = x->shape[1];
    const std::int64_t vol = t * h * w;
    auto out = make_tensor({c, t, h, w});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < vol; ++p) out->data[ch * vol + p] = x->data[p * c + ch];
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, c, vol] {
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < vol; ++p) x->grad[p * c + ch] += out->grad[ch * vol + p];
    });
    return out;
}

TensorPtr adjacent_frame_distance(Tape& tape, const TensorPtr& feat) {
    require(feat->shape.size() == 4, "adjacent_frame_distance: expected [C,T,H,W]");
    const std::int64_t c = feat->shape[0], t = feat->shape[1], h = feat->shape[2],
                       w = feat->shape[3];
    const std::int64_t hw = h * w;
    constexpr double kEps = 1e-12;  // keeps the sqrt differentiable at zero distance
    auto out = make_tensor({t * hw});
    for (std::int64_t f = 1; f < t; ++f)
        for (std::int64_t p = 0; p < hw; ++p) {
            double s = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double d = feat->data[(ch * t + f) * hw + p] -
                                 feat->data[(ch * t + f - 1) * hw + p];
                s += d * d;
            }
            out->data[f * hw + p] = std::sqrt(s + kEps);
        }
    feat->ensure_grad();
    out->ensure_grad();
    tape.record([feat, out, c, t, hw] {
        for (std::int64_t f = 1; f < t; ++f)
            for (std::int64_t p = 0; p < hw; ++p) {
                const double g = out->grad[f * hw + p];
                if (g == 0.0) continue;
                const double inv = 1.0 / out->data[f * hw + p];
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::int64_t cur = (ch * t + f) * hw + p;
                    const std::int64_t prev = (ch * t + f - 1) * hw + p;
                    const double d = feat->data[cur] - feat->data[prev];
                    feat->grad[cur] += g * d * inv;
                    feat->grad[prev] -= g * d * inv;
                }
            }
    });
    return out;
}

}  // namespace lvmae
