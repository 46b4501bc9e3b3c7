#include <algorithm>
#include <stdexcept>

#include "lvmae/tape.hpp"

namespace lvmae {

namespace {
void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}
TensorPtr like(const Shape& shape) { return make_tensor(shape); }
}  // namespace

TensorPtr constant(const TensorPtr& t) { return t; }

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape, "add: shape mismatch");
    auto out = like(a->shape);
    for (std::int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    a->ensure_grad();
    b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out] {
        for (std::int64_t i = 0; i < out->size(); ++i) {
            a->grad[i] += out->grad[i];
            b->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape, "sub: shape mismatch");
    auto out = like(a->shape);
    for (std::int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    a->ensure_grad();
    b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out] {
        for (std::int64_t i = 0; i < out->size(); ++i) {
            a->grad[i] += out->grad[i];
            b->grad[i] -= out->grad[i];
        }
    });
    return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape, "mul: shape mismatch");
    auto out = like(a->shape);
    for (std::int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    a->ensure_grad();
    b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out] {
        for (std::int64_t i = 0; i < out->size(); ++i) {
            a->grad[i] += out->grad[i] * b->data[i];
            b->grad[i] += out->grad[i] * a->data[i];
        }
    });
    return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
    auto out = like(a->shape);
    for (std::int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * c;
    a->ensure_grad();
    out->ensure_grad();
    tape.record([a, out, c] {
        for (std::int64_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * c;
    });
    return out;
}

TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& bias) {
    require(x->shape.size() == 2, "add_bias: x must be 2-D");
    require(bias->shape.size() == 1 && bias->shape[0] == x->shape[1], "add_bias: bias dim mismatch");
    const std::int64_t n = x->shape[0], d = x->shape[1];
    auto out = like(x->shape);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out->data[i * d + j] = x->data[i * d + j] + bias->data[j];
    x->ensure_grad();
    bias->ensure_grad();
    out->ensure_grad();
    tape.record([x, bias, out, n, d] {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) {
                x->grad[i * d + j] += out->grad[i * d + j];
                bias->grad[j] += out->grad[i * d + j];
            }
    });
    return out;
}

TensorPtr reshape(Tape& tape, const TensorPtr& x, Shape shape) {
    require(numel(shape) == x->size(), "reshape: element count mismatch");
    auto out = make_tensor(std::move(shape), x->data);
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
        for (std::int64_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
    });
    return out;
}

TensorPtr slice_rows(Tape& tape, const TensorPtr& x, std::int64_t r0, std::int64_t r1) {
    require(x->shape.size() == 2, "slice_rows: x must be 2-D");
    require(0 <= r0 && r0 <= r1 && r1 <= x->shape[0], "slice_rows: range out of bounds");
    const std::int64_t d = x->shape[1];
    auto out = like({r1 - r0, d});
    std::copy(x->data.begin() + r0 * d, x->data.begin() + r1 * d, out->data.begin());
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, r0, d] {
        for (std::int64_t i = 0; i < out->size(); ++i) x->grad[r0 * d + i] += out->grad[i];
    });
    return out;
}

TensorPtr slice_cols(Tape& tape, const TensorPtr& x, std::int64_t c0, std::int64_t c1) {
    require(x->shape.size() == 2, "slice_cols: x must be 2-D");
    require(0 <= c0 && c0 <= c1 && c1 <= x->shape[1], "slice_cols: range out of bounds");
    const std::int64_t n = x->shape[0], d = x->shape[1], w = c1 - c0;
    auto out = like({n, w});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < w; ++j) out->data[i * w + j] = x->data[i * d + c0 + j];
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, n, d, w, c0] {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < w; ++j) x->grad[i * d + c0 + j] += out->grad[i * w + j];
    });
    return out;
}

TensorPtr gather_rows(Tape& tape, const TensorPtr& x, const std::vector<std::int64_t>& idx) {
    require(x->shape.size() == 2, "gather_rows: x must be 2-D");
    const std::int64_t n = x->shape[0], d = x->shape[1];
    for (auto i : idx) require(0 <= i && i < n, "gather_rows: index out of bounds");
    auto out = like({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(x->data.begin() + idx[r] * d, x->data.begin() + (idx[r] + 1) * d,
                  out->data.begin() + static_cast<std::int64_t>(r) * d);
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, idx, d] {
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::int64_t j = 0; j < d; ++j)
                x->grad[idx[r] * d + j] += out->grad[static_cast<std::int64_t>(r) * d + j];
    });
    return out;
}

TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts) {
    require(!parts.empty(), "concat_rows: empty input");
    const std::int64_t d = parts[0]->shape[1];
    std::int64_t n = 0;
    for (const auto& p : parts) {
        require(p->shape.size() == 2 && p->shape[1] == d, "concat_rows: column mismatch");
        n += p->shape[0];
    }
    auto out = like({n, d});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->size();
        p->ensure_grad();
    }
    out->ensure_grad();
    tape.record([parts, out] {
        std::int64_t off2 = 0;
        for (const auto& p : parts) {
            for (std::int64_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off2 + i];
            off2 += p->size();
        }
    });
    return out;
}

TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
    require(!parts.empty(), "concat_cols: empty input");
    const std::int64_t n = parts[0]->shape[0];
    std::int64_t d = 0;
    for (const auto& p : parts) {
        require(p->shape.size() == 2 && p->shape[0] == n, "concat_cols: row mismatch");
        d += p->shape[1];
    }
    auto out = like({n, d});
    std::int64_t coff = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p->shape[1];
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < w; ++j) out->data[i * d + coff + j] = p->data[i * w + j];
        coff += w;
        p->ensure_grad();
    }
    out->ensure_grad();
    tape.record([parts, out, n, d] {
        std::int64_t coff2 = 0;
        for (const auto& p : parts) {
            const std::int64_t w = p->shape[1];
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < w; ++j)
                    p->grad[i * w + j] += out->grad[i * d + coff2 + j];
            coff2 += w;
        }
    });
    return out;
}

TensorPtr broadcast_row(Tape& tape, const TensorPtr& row, std::int64_t n) {
    require(row->shape.size() == 2 && row->shape[0] == 1, "broadcast_row: expected [1,d]");
    const std::int64_t d = row->shape[1];
    auto out = like({n, d});
    for (std::int64_t i = 0; i < n; ++i)
        std::copy(row->data.begin(), row->data.end(), out->data.begin() + i * d);
    row->ensure_grad();
    out->ensure_grad();
    tape.record([row, out, n, d] {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) row->grad[j] += out->grad[i * d + j];
    });
    return out;
}

TensorPtr sum_all(Tape& tape, const TensorPtr& x) {
    auto out = like({1});
    double s = 0.0;
    for (double v : x->data) s += v;
    out->data[0] = s;
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
        for (std::int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0];
    });
    return out;
}

TensorPtr mean_all(Tape& tape, const TensorPtr& x) {
    auto out = like({1});
    double s = 0.0;
    for (double v : x->data) s += v;
    const double inv = 1.0 / static_cast<double>(x->size());
    out->data[0] = s * inv;
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, inv] {
        for (std::int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0] * inv;
    });
    return out;
}

TensorPtr mean_rows(Tape& tape, const TensorPtr& x) {
    require(x->shape.size() == 2, "mean_rows: x must be 2-D");
    const std::int64_t n = x->shape[0], d = x->shape[1];
    auto out = like({1, d});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) out->data[j] += x->data[i * d + j];
    const double inv = 1.0 / static_cast<double>(n);
    for (std::int64_t j = 0; j < d; ++j) out->data[j] *= inv;
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out, n, d, inv] {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) x->grad[i * d + j] += out->grad[j] * inv;
    });
    return out;
}

TensorPtr mse_loss(Tape& tape, const TensorPtr& pred, const TensorPtr& target) {
    require(pred->shape == target->shape, "mse_loss: shape mismatch");
    auto out = like({1});
    const std::int64_t n = pred->size();
    if (n == 0) return out;  // degenerate empty selection: loss 0
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double e = pred->data[i] - target->data[i];
        s += e * e;
    }
    out->data[0] = s / static_cast<double>(n);
    pred->ensure_grad();
    target->ensure_grad();
    out->ensure_grad();
    tape.record([pred, target, out, n] {
        const double c = 2.0 * out->grad[0] / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const double e = pred->data[i] - target->data[i];
            pred->grad[i] += c * e;
            target->grad[i] -= c * e;
        }
    });
    return out;
}

}  // namespace lvmae
