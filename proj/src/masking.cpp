#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "lvmae/masking.hpp"

namespace lvmae {

std::int64_t round_half_up(double x) {
    return static_cast<std::int64_t>(std::floor(x + 0.5));
}

std::int64_t MaskSet::n_visible() const {
    std::int64_t c = 0;
    for (auto m : encoder_masked) c += (m == 0);
    return c;
}
std::int64_t MaskSet::n_selected() const {
    std::int64_t c = 0;
    for (auto m : decoder_selected) c += (m != 0);
    return c;
}

SaliencyMap normalize_saliency(TokenGrid grid, const std::vector<double>& raw,
                               bool* zero_flagged) {
    if (static_cast<std::int64_t>(raw.size()) != grid.count())
        throw std::invalid_argument("normalize_saliency: size mismatch");
    double total = 0.0;
    for (double v : raw) {
        if (v < 0.0) throw std::invalid_argument("normalize_saliency: negative score");
        total += v;
    }
    SaliencyMap s;
    s.grid = grid;
    if (total == 0.0) {
        if (zero_flagged) *zero_flagged = true;
        s.s.assign(raw.size(), 1.0 / static_cast<double>(grid.count()));
    } else {
        if (zero_flagged) *zero_flagged = false;
        s.s.resize(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) s.s[i] = raw[i] / total;
    }
    return s;
}

std::vector<std::uint8_t> make_tube_mask(TokenGrid grid, double rho_e, RngStream& rng) {
    if (!(rho_e > 0.0 && rho_e < 1.0)) throw std::invalid_argument("make_tube_mask: rho_e in (0,1)");
    const std::int64_t spatial = grid.gh * grid.gw;
    const std::int64_t visible = round_half_up((1.0 - rho_e) * static_cast<double>(spatial));
    if (visible == 0) throw std::invalid_argument("make_tube_mask: ratio yields 0 visible positions");
    std::vector<std::int64_t> pool(static_cast<std::size_t>(spatial));
    std::iota(pool.begin(), pool.end(), 0);
    const auto picked = rng.sample_without_replacement(pool, visible);
    std::vector<std::uint8_t> masked(static_cast<std::size_t>(grid.count()), 1);
    for (auto p : picked)
        for (std::int64_t t = 0; t < grid.gt; ++t)
            masked[static_cast<std::size_t>(t * spatial + p)] = 0;
    return masked;
}

namespace {
std::vector<std::int64_t> masked_pool(const std::vector<std::uint8_t>& encoder_masked) {
    std::vector<std::int64_t> pool;
    for (std::size_t i = 0; i < encoder_masked.size(); ++i)
        if (encoder_masked[i]) pool.push_back(static_cast<std::int64_t>(i));
    return pool;
}
}  // namespace

MaskSet decoder_none(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked) {
    MaskSet m;
    m.grid = grid;
    m.encoder_masked = encoder_masked;
    m.decoder_selected = encoder_masked;
    return m;
}

MaskSet decoder_random(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked,
                       double budget_fraction, RngStream& rng) {
    MaskSet m;
    m.grid = grid;
    m.encoder_masked = encoder_masked;
    m.decoder_selected.assign(encoder_masked.size(), 0);
    const std::int64_t budget = round_half_up(budget_fraction * static_cast<double>(grid.count()));
    const auto pool = masked_pool(encoder_masked);
    if (budget > static_cast<std::int64_t>(pool.size()))
        throw std::invalid_argument("decoder_random: budget exceeds encoder-masked pool");
    for (auto i : rng.sample_without_replacement(pool, budget))
        m.decoder_selected[static_cast<std::size_t>(i)] = 1;
    return m;
}

MaskSet decoder_uniform(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked,
                        std::int64_t step) {
    if (step < 1) throw std::invalid_argument("decoder_uniform: step must be >= 1");
    MaskSet m;
    m.grid = grid;
    m.encoder_masked = encoder_masked;
    m.decoder_selected.assign(encoder_masked.size(), 0);
    const std::int64_t spatial = grid.gh * grid.gw;
    for (std::int64_t t = 0; t < grid.gt; t += step)
        for (std::int64_t p = 0; p < spatial; ++p) {
            const std::size_t i = static_cast<std::size_t>(t * spatial + p);
            if (encoder_masked[i]) m.decoder_selected[i] = 1;
        }
    return m;
}

SaliencyMap flow_saliency(const FlowField& flow, const PatchSpec& patch, bool* zero_flagged) {
    if (flow.frames != patch.gt * patch.kt || flow.height != patch.gh * patch.kh ||
        flow.width != patch.gw * patch.kw)
        throw std::invalid_argument("flow_saliency: flow dims incompatible with patch grid");
    TokenGrid grid{patch.gt, patch.gh, patch.gw};
    std::vector<double> raw(static_cast<std::size_t>(grid.count()), 0.0);
    const double per_patch = 1.0 / static_cast<double>(2 * patch.kt * patch.kh * patch.kw);
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t f = 0; f < flow.frames; ++f)
            for (std::int64_t y = 0; y < flow.height; ++y)
                for (std::int64_t x = 0; x < flow.width; ++x) {
                    const std::int64_t tok =
                        ((f / patch.kt) * patch.gh + y / patch.kh) * patch.gw + x / patch.kw;
                    raw[static_cast<std::size_t>(tok)] += std::fabs(flow.at(c, f, y, x)) * per_patch;
                }
    return normalize_saliency(grid, raw, zero_flagged);
}

MaskSet decoder_adaptive(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked,
                         const SaliencyMap& saliency, double rho_d, double rho_r, RngStream& rng) {
    if (static_cast<std::int64_t>(saliency.s.size()) != grid.count())
        throw std::invalid_argument("decoder_adaptive: saliency size mismatch");
    double total = 0.0;
    for (double v : saliency.s) total += v;
    if (std::fabs(total - 1.0) > 1e-9)
        throw std::invalid_argument("decoder_adaptive: saliency not normalized");

    const std::int64_t n = grid.count();
    const std::int64_t k = round_half_up((1.0 - rho_d) * static_cast<double>(n));
    const std::int64_t extra = round_half_up(rho_r * static_cast<double>(n));
    auto pool = masked_pool(encoder_masked);
    if (k + extra > static_cast<std::int64_t>(pool.size()))
        throw std::invalid_argument("decoder_adaptive: infeasible budget");

    // rank encoder-masked tokens by saliency descending, ties by ascending index
    std::stable_sort(pool.begin(), pool.end(), [&](std::int64_t a, std::int64_t b) {
        const double sa = saliency.s[static_cast<std::size_t>(a)];
        const double sb = saliency.s[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });

    MaskSet m;
    m.grid = grid;
    m.encoder_masked = encoder_masked;
    m.decoder_selected.assign(encoder_masked.size(), 0);
    for (std::int64_t i = 0; i < k; ++i)
        m.decoder_selected[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])] = 1;

    std::vector<std::int64_t> rest(pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end());
    std::sort(rest.begin(), rest.end());
    for (auto i : rng.sample_without_replacement(rest, extra))
        m.decoder_selected[static_cast<std::size_t>(i)] = 1;
    return m;
}

MaskReport validate(const MaskSet& m, std::int64_t expected_selected) {
    MaskReport r;
    auto fail = [&](const std::string& v) {
        r.ok = false;
        r.violations.push_back(v);
    };
    if (static_cast<std::int64_t>(m.encoder_masked.size()) != m.n() ||
        static_cast<std::int64_t>(m.decoder_selected.size()) != m.n())
        fail("grid-size");
    else {
        for (std::size_t i = 0; i < m.decoder_selected.size(); ++i)
            if (m.decoder_selected[i] && !m.encoder_masked[i]) {
                fail("loss-on-visible");
                break;
            }
        if (expected_selected >= 0 && m.n_selected() != expected_selected) fail("budget-count");
    }
    return r;
}

namespace {
void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("mask dump: truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
void write_bits(std::ostream& os, const std::vector<std::uint8_t>& bits) {
    std::vector<unsigned char> packed((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(packed.size()));
}
std::vector<std::uint8_t> read_bits(std::istream& is, std::size_t n) {
    std::vector<unsigned char> packed((n + 7) / 8);
    is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!is) throw std::runtime_error("mask dump: truncated bitmask");
    std::vector<std::uint8_t> bits(n, 0);
    for (std::size_t i = 0; i < n; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return bits;
}
}  // namespace

void save_mask_dump(const std::string& path, const MaskSet& m, const BudgetSpec& budget) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_mask_dump: cannot open " + path);
    os.write("LVMK", 4);
    write_u32(os, static_cast<std::uint32_t>(m.grid.gt));
    write_u32(os, static_cast<std::uint32_t>(m.grid.gh));
    write_u32(os, static_cast<std::uint32_t>(m.grid.gw));
    const double b[3] = {budget.rho_e, budget.rho_d, budget.rho_r};
    os.write(reinterpret_cast<const char*>(b), sizeof(b));
    write_bits(os, m.encoder_masked);
    write_bits(os, m.decoder_selected);
    if (!os) throw std::runtime_error("save_mask_dump: write failed");
}

MaskSet load_mask_dump(const std::string& path, BudgetSpec* budget) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_mask_dump: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LVMK", 4) != 0)
        throw std::runtime_error("load_mask_dump: bad magic");
    MaskSet m;
    m.grid.gt = read_u32(is);
    m.grid.gh = read_u32(is);
    m.grid.gw = read_u32(is);
    double b[3];
    is.read(reinterpret_cast<char*>(b), sizeof(b));
    if (!is) throw std::runtime_error("load_mask_dump: truncated budget");
    if (budget) *budget = BudgetSpec{b[0], b[1], b[2]};
    const std::size_t n = static_cast<std::size_t>(m.grid.count());
    m.encoder_masked = read_bits(is, n);
    m.decoder_selected = read_bits(is, n);
    return m;
}

}  // namespace lvmae
