#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvmae/rng.hpp"
#include "lvmae/video.hpp"

namespace lvmae {

struct TokenGrid {
    std::int64_t gt = 0, gh = 0, gw = 0;
    std::int64_t count() const { return gt * gh * gw; }
};

// round-half-up, the one rounding rule used wherever a fraction of N becomes
// a token count
std::int64_t round_half_up(double x);

// Probability distribution over the token grid.
struct SaliencyMap {
    TokenGrid grid;
    std::vector<double> s;
};

SaliencyMap normalize_saliency(TokenGrid grid, const std::vector<double>& raw,
                               bool* zero_flagged = nullptr);

struct BudgetSpec {
    double rho_e = 0.9;
    double rho_d = 0.9;
    double rho_r = 0.05;
};

struct MaskSet {
    TokenGrid grid;
    std::vector<std::uint8_t> encoder_masked;    // true = hidden from encoder
    std::vector<std::uint8_t> decoder_selected;  // true = reconstructed

    std::int64_t n() const { return grid.count(); }
    std::int64_t n_visible() const;   // N^e
    std::int64_t n_selected() const;  // N^d
};

// Random tube mask: visible spatial pattern sampled once, replicated over time.
std::vector<std::uint8_t> make_tube_mask(TokenGrid grid, double rho_e, RngStream& rng);

MaskSet decoder_none(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked);
MaskSet decoder_random(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked,
                       double budget_fraction, RngStream& rng);
MaskSet decoder_uniform(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked,
                        std::int64_t step);

// Per-patch mean |flow| over both channels, normalized to sum 1.
SaliencyMap flow_saliency(const FlowField& flow, const PatchSpec& patch,
                          bool* zero_flagged = nullptr);

// Top-k by saliency over the encoder-masked pool (k = round((1-rho_d)*N)),
// plus round(rho_r*N) random disjoint extras from the remaining pool.
MaskSet decoder_adaptive(TokenGrid grid, const std::vector<std::uint8_t>& encoder_masked,
                         const SaliencyMap& saliency, double rho_d, double rho_r, RngStream& rng);

struct MaskReport {
    bool ok = true;
    std::vector<std::string> violations;
};

MaskReport validate(const MaskSet& mask_set, std::int64_t expected_selected = -1);

// LVMK dump: grid dims u32x3, budget scalars f64x3, two bitmasks padded to byte.
void save_mask_dump(const std::string& path, const MaskSet& mask_set, const BudgetSpec& budget);
MaskSet load_mask_dump(const std::string& path, BudgetSpec* budget = nullptr);

}  // namespace lvmae
