#pragma once

#include <array>
#include <functional>
#include <vector>

#include "lvmae/tensor.hpp"

namespace lvmae {

// Records backward closures in forward order; backward() replays them in
// reverse exactly once.
class Tape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    void backward(const TensorPtr& loss) {
        if (consumed_) throw std::logic_error("tape: backward already run");
        if (loss->size() != 1) throw std::invalid_argument("tape: loss must be scalar");
        consumed_ = true;
        loss->ensure_grad();
        loss->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    std::size_t num_ops() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

using Stride3 = std::array<std::int64_t, 3>;

// ---- elementwise / shape ----
TensorPtr constant(const TensorPtr& t);  // marks intent only; constants need no op
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& a, double c);
TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& bias);  // [n,d]+[d]
TensorPtr reshape(Tape& tape, const TensorPtr& x, Shape shape);
TensorPtr gelu(Tape& tape, const TensorPtr& x);
TensorPtr sigmoid(Tape& tape, const TensorPtr& x);

// ---- linear algebra ----
TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose2d(Tape& tape, const TensorPtr& a);

// ---- row/column assembly ----
TensorPtr slice_rows(Tape& tape, const TensorPtr& x, std::int64_t r0, std::int64_t r1);
TensorPtr slice_cols(Tape& tape, const TensorPtr& x, std::int64_t c0, std::int64_t c1);
TensorPtr gather_rows(Tape& tape, const TensorPtr& x, const std::vector<std::int64_t>& idx);
TensorPtr concat_rows(Tape& tape, const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts);
TensorPtr broadcast_row(Tape& tape, const TensorPtr& row, std::int64_t n);  // [1,d]->[n,d]

// ---- normalization / attention pieces ----
TensorPtr softmax(Tape& tape, const TensorPtr& x);  // last axis
TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps = 1e-6);

// ---- reductions / losses ----
TensorPtr sum_all(Tape& tape, const TensorPtr& x);   // -> [1]
TensorPtr mean_all(Tape& tape, const TensorPtr& x);  // -> [1]
TensorPtr mean_rows(Tape& tape, const TensorPtr& x); // [n,d] -> [1,d]
TensorPtr mse_loss(Tape& tape, const TensorPtr& pred, const TensorPtr& target);
// labels: one index per row of logits; smoothing in [0,1)
TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits,
                        const std::vector<std::int64_t>& labels, double smoothing = 0.0);

// ---- convolution ----
// input [C,T,H,W], kernel [O,C,kt,kh,kw], valid cross-correlation
TensorPtr conv3d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, Stride3 stride);
// input [C,T,H,W], kernel [C,O,kt,kh,kw]; output extent (T-1)*st + kt
TensorPtr conv3d_transpose(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                           const TensorPtr& bias, Stride3 stride);

// ---- layout bridges ----
TensorPtr chw_to_rows(Tape& tape, const TensorPtr& x);  // [C,T,H,W] -> [T*H*W, C]
TensorPtr rows_to_chw(Tape& tape, const TensorPtr& x, std::int64_t t, std::int64_t h,
                      std::int64_t w);

// per-location feature distance between adjacent frames:
// feat [C,T,H,W] -> [T*H*W] with row-major (t,h,w); frame 0 scores are 0.
TensorPtr adjacent_frame_distance(Tape& tape, const TensorPtr& feat);

}  // namespace lvmae
