// Benchmarks the OpenMP kernels against the serial reference implementations
// and verifies the outputs are bit-identical.
#include <chrono>
#include <cstdio>
#include <cstring>

#include "lvmae/reference.hpp"
#include "lvmae/rng.hpp"
#include "lvmae/tape.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void fill(lvmae::RngStream& rng, std::vector<double>& v) {
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
}

bool bench_matmul(lvmae::RngStream& rng, std::int64_t m, std::int64_t k, std::int64_t n,
                  int reps) {
    auto a = lvmae::make_tensor({m, k});
    auto b = lvmae::make_tensor({k, n});
    fill(rng, a->data);
    fill(rng, b->data);

    lvmae::TensorPtr c_omp;
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        lvmae::Tape tape;
        c_omp = lvmae::matmul(tape, a, b);
    }
    const double omp_ms = ms_since(t0) / reps;

    std::vector<double> c_ref(static_cast<std::size_t>(m * n));
    t0 = Clock::now();
    for (int r = 0; r < reps; ++r) lvmae::ref::matmul(a->data.data(), b->data.data(), c_ref.data(), m, k, n);
    const double ref_ms = ms_since(t0) / reps;

    const bool identical =
        std::memcmp(c_omp->data.data(), c_ref.data(), c_ref.size() * sizeof(double)) == 0;
    std::printf("matmul  %4lld x %4lld x %4lld  omp %8.3f ms  serial %8.3f ms  speedup %5.2fx  %s\n",
                static_cast<long long>(m), static_cast<long long>(k), static_cast<long long>(n),
                omp_ms, ref_ms, ref_ms / omp_ms, identical ? "bit-identical" : "MISMATCH");
    return identical;
}

bool bench_conv3d(lvmae::RngStream& rng, std::int64_t c, std::int64_t t, std::int64_t h,
                  std::int64_t w, std::int64_t o, std::int64_t kt, std::int64_t kh,
                  std::int64_t kw, int reps) {
    auto input = lvmae::make_tensor({c, t, h, w});
    auto kernel = lvmae::make_tensor({o, c, kt, kh, kw});
    auto bias = lvmae::make_tensor({o});
    fill(rng, input->data);
    fill(rng, kernel->data);
    fill(rng, bias->data);

    lvmae::TensorPtr out_omp;
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        lvmae::Tape tape;
        out_omp = lvmae::conv3d(tape, input, kernel, bias, {kt, kh, kw});
    }
    const double omp_ms = ms_since(t0) / reps;

    const std::int64_t ot = (t - kt) / kt + 1, oh = (h - kh) / kh + 1, ow = (w - kw) / kw + 1;
    std::vector<double> out_ref(static_cast<std::size_t>(o * ot * oh * ow));
    t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        lvmae::ref::conv3d(input->data.data(), kernel->data.data(), bias->data.data(),
                           out_ref.data(), c, t, h, w, o, kt, kh, kw, kt, kh, kw);
    const double ref_ms = ms_since(t0) / reps;

    const bool identical =
        std::memcmp(out_omp->data.data(), out_ref.data(), out_ref.size() * sizeof(double)) == 0;
    std::printf("conv3d  in %lldx%lldx%lldx%lld out-ch %lld  omp %8.3f ms  serial %8.3f ms  speedup %5.2fx  %s\n",
                static_cast<long long>(c), static_cast<long long>(t), static_cast<long long>(h),
                static_cast<long long>(w), static_cast<long long>(o), omp_ms, ref_ms,
                ref_ms / omp_ms, identical ? "bit-identical" : "MISMATCH");
    return identical;
}

}  // namespace

int main() {
    lvmae::RngStream rng(42);
    bool ok = true;
    ok &= bench_matmul(rng, 128, 128, 128, 5);
    ok &= bench_matmul(rng, 512, 64, 512, 5);
    ok &= bench_matmul(rng, 1024, 256, 64, 3);
    ok &= bench_conv3d(rng, 3, 16, 64, 64, 64, 2, 8, 8, 3);
    ok &= bench_conv3d(rng, 16, 8, 32, 32, 32, 2, 2, 2, 3);
    if (!ok) {
        std::printf("FAIL: parallel kernels do not match the serial reference\n");
        return 1;
    }
    std::printf("all kernels bit-identical to the serial reference\n");
    return 0;
}
