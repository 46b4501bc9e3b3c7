#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace lvmae {

// Counter-based generator: output j of stream (key) is splitmix64(key ^ mix(j)).
// Streams split by label, so every stochastic op draws from its own named
// substream and results do not depend on evaluation order elsewhere.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : key_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    RngStream split(std::string_view label) const {
        std::uint64_t h = key_;
        for (char c : label) h = splitmix(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
        return RngStream(h, 0);
    }
    RngStream split(std::uint64_t index) const { return RngStream(splitmix(key_ ^ splitmix(index + 1)), 0); }

    std::uint64_t next_u64() { return splitmix(key_ ^ splitmix(counter_++)); }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    double normal() {
        // Box-Muller; uniform() can return 0, guard the log.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // truncated normal, rejected outside 2 standard deviations
    double trunc_normal(double stddev) {
        double x = normal();
        while (std::fabs(x) > 2.0) x = normal();
        return x * stddev;
    }

    // sample k distinct indices from pool (without replacement), ascending output
    std::vector<std::int64_t> sample_without_replacement(const std::vector<std::int64_t>& pool,
                                                         std::int64_t k) {
        std::vector<std::int64_t> remaining = pool;
        std::vector<std::int64_t> out;
        out.reserve(static_cast<std::size_t>(k));
        for (std::int64_t i = 0; i < k; ++i) {
            std::size_t j = static_cast<std::size_t>(below(remaining.size()));
            out.push_back(remaining[j]);
            remaining[j] = remaining.back();
            remaining.pop_back();
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace lvmae
