#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "lvmae/cost.hpp"
#include "lvmae/masking.hpp"

namespace lvmae {

namespace {
struct TokenCounts {
    std::int64_t n, ne, nd;
};

TokenCounts token_counts(const CostGeometry& g) {
    if (g.frames % g.kt != 0 || g.height % g.kh != 0 || g.width % g.kw != 0)
        throw std::invalid_argument("cost: geometry not divisible by tubelet");
    if (g.rho_e < 0 || g.rho_e >= 1 || g.rho_d < 0 || g.rho_d > 1 || g.rho_r < 0 || g.rho_r > 1)
        throw std::invalid_argument("cost: invalid ratios");
    TokenCounts c{};
    const std::int64_t gt = g.frames / g.kt, gh = g.height / g.kh, gw = g.width / g.kw;
    c.n = gt * gh * gw;
    // same arithmetic as the masking strategies: tube over spatial positions
    c.ne = gt * round_half_up((1.0 - g.rho_e) * static_cast<double>(gh * gw));
    c.nd = round_half_up((1.0 - g.rho_d) * static_cast<double>(c.n)) +
           round_half_up(g.rho_r * static_cast<double>(c.n));
    return c;
}

double layer_flops(double n, double d, double mlp) {
    return 8.0 * n * d * d + 4.0 * n * n * d + 4.0 * (mlp / d) * n * d * d;
}

double layer_mem(double n, double d, double heads, double bytes) {
    return bytes * (n * d * kActivationCopiesPerBlock + heads * n * n * kAttentionCopiesPerBlock);
}

double param_count(const ArchDims& a) {
    const double enc = static_cast<double>(a.enc_layers) *
                       (4.0 * a.enc_dim * a.enc_dim + 2.0 * a.enc_dim * a.enc_mlp);
    const double dec = static_cast<double>(a.dec_layers) *
                       (4.0 * a.dec_dim * a.dec_dim + 2.0 * a.dec_dim * a.dec_mlp);
    return enc + dec;
}
}  // namespace

CostReport flops_estimate(const CostGeometry& g, const ArchDims& a) {
    const auto c = token_counts(g);
    CostReport r;
    r.n_tokens = c.n;
    r.n_visible = c.ne;
    r.n_selected = c.nd;
    const double b = static_cast<double>(a.batch);
    // patch embedding: one matmul per token over the tubelet volume
    const double patch_in = 3.0 * static_cast<double>(g.kt * g.kh * g.kw);
    r.flops_patch_embed = b * 2.0 * static_cast<double>(c.n) * patch_in *
                          static_cast<double>(a.enc_dim);
    r.flops_encoder = b * static_cast<double>(a.enc_layers) *
                      layer_flops(static_cast<double>(c.ne), static_cast<double>(a.enc_dim),
                                  static_cast<double>(a.enc_mlp));
    const double dec_tokens = static_cast<double>(c.ne + c.nd);
    r.flops_decoder = b * static_cast<double>(a.dec_layers) *
                      layer_flops(dec_tokens, static_cast<double>(a.dec_dim),
                                  static_cast<double>(a.dec_mlp));
    // projection into the decoder plus the output head
    r.flops_head = b * (2.0 * static_cast<double>(c.ne) * a.enc_dim * a.dec_dim +
                        2.0 * dec_tokens * a.dec_dim * patch_in);
    return r;
}

CostReport memory_estimate(const CostGeometry& g, const ArchDims& a) {
    CostReport r = flops_estimate(g, a);
    const double b = static_cast<double>(a.batch);
    const double bytes = static_cast<double>(a.bytes_per_activation);
    r.mem_encoder = b * static_cast<double>(a.enc_layers) *
                    layer_mem(static_cast<double>(r.n_visible), static_cast<double>(a.enc_dim),
                              static_cast<double>(a.enc_heads), bytes);
    r.mem_decoder = b * static_cast<double>(a.dec_layers) *
                    layer_mem(static_cast<double>(r.n_visible + r.n_selected),
                              static_cast<double>(a.dec_dim), static_cast<double>(a.dec_heads),
                              bytes);
    // parameters + Adam first/second moments
    r.mem_params = param_count(a) * bytes * 3.0;
    return r;
}

std::string sweep_report(const std::vector<std::int64_t>& frame_list,
                         const std::vector<double>& rho_d_list, const CostGeometry& base,
                         const ArchDims& dims) {
    if (frame_list.empty() || rho_d_list.empty())
        throw std::invalid_argument("sweep_report: empty sweep lists");
    std::ostringstream os;
    os << "# FLOPs counted as multiply-adds x2; norms/softmax/bias ignored\n";
    os << "frames,rho_d,Ne,Nd,flops_total,flops_decoder_share,mem_bytes\n";
    auto frames = frame_list;
    auto rhos = rho_d_list;
    std::sort(frames.begin(), frames.end());
    std::sort(rhos.begin(), rhos.end());
    for (auto f : frames)
        for (auto rd : rhos) {
            CostGeometry g = base;
            g.frames = f;
            g.rho_d = rd;
            const auto r = memory_estimate(g, dims);
            os << f << ',' << rd << ',' << r.n_visible << ',' << r.n_selected << ','
               << r.flops_total() << ',' << r.decoder_flops_share() << ',' << r.mem_total()
               << '\n';
        }
    return os.str();
}

}  // namespace lvmae
