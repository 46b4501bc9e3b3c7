#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace lvmae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

// Dense row-major f64 tensor. grad is allocated lazily the first time the
// tensor participates in a taped op.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Shape shape, double fill = 0.0) {
    return std::make_shared<Tensor>(std::move(shape), fill);
}
inline TensorPtr make_tensor(Shape shape, std::vector<double> data) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void check_finite(const Tensor& t, const char* where) {
    if (!all_finite(t.data))
        throw std::domain_error(std::string("non-finite value in ") + where);
}

// Global multiply-add counter, used to cross-check the analytic cost model.
// Kernels add 2*multiplies (multiply-add counted as 2 FLOPs).
inline std::atomic<std::int64_t>& flop_counter() {
    static std::atomic<std::int64_t> c{0};
    return c;
}
inline void reset_flop_counter() { flop_counter().store(0); }
inline std::int64_t flops_counted() { return flop_counter().load(); }

}  // namespace lvmae
