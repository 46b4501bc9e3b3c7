#include <stdexcept>

#include "lvmae/tape.hpp"

namespace lvmae {

namespace {
void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// C[m,n] += A[m,k] * B[k,n]. Each output row is produced by one iteration of
// the outer loop with a fixed inner order, so results are identical for any
// thread count (and to the serial reference).
void matmul_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    flop_counter().fetch_add(2 * m * k * n, std::memory_order_relaxed);
}

// C[m,n] += A[k,m]^T * B[k,n]
void matmul_at_acc(const double* a, const double* b, double* c, std::int64_t k, std::int64_t m,
                   std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    flop_counter().fetch_add(2 * m * k * n, std::memory_order_relaxed);
}

// C[m,n] += A[m,k] * B[n,k]^T
void matmul_bt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            const double* arow = a + i * k;
            const double* brow = b + j * k;
            for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
    flop_counter().fetch_add(2 * m * k * n, std::memory_order_relaxed);
}
}  // namespace

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require(a->shape.size() == 2 && b->shape.size() == 2, "matmul: operands must be 2-D");
    require(a->shape[1] == b->shape[0], "matmul: inner dimension mismatch");
    check_finite(*a, "matmul lhs");
    check_finite(*b, "matmul rhs");
    const std::int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_tensor({m, n});
    matmul_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    a->ensure_grad();
    b->ensure_grad();
    out->ensure_grad();
    tape.record([a, b, out, m, k, n] {
        // dA = dC * B^T ; dB = A^T * dC
        matmul_bt_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
        matmul_at_acc(a->data.data(), out->grad.data(), b->grad.data(), m, k, n);
    });
    return out;
}

TensorPtr transpose2d(Tape& tape, const TensorPtr& a) {
    require(a->shape.size() == 2, "transpose2d: operand must be 2-D");
    const std::int64_t m = a->shape[0], n = a->shape[1];
    auto out = make_tensor({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    a->ensure_grad();
    out->ensure_grad();
    tape.record([a, out, m, n] {
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
    });
    return out;
}

}  // namespace lvmae
