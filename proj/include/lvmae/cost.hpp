#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lvmae {

struct ArchDims {
    std::int64_t enc_layers = 12, enc_dim = 768, enc_heads = 12, enc_mlp = 3072;
    std::int64_t dec_layers = 4, dec_dim = 384, dec_heads = 4, dec_mlp = 1536;
    std::int64_t bytes_per_activation = 4;
    std::int64_t batch = 1;
};

struct CostReport {
    // token counts
    std::int64_t n_tokens = 0, n_visible = 0, n_selected = 0;
    // FLOPs per stage (multiply-adds x 2)
    double flops_patch_embed = 0, flops_encoder = 0, flops_decoder = 0, flops_head = 0;
    // activation-memory bytes per stage, plus parameter/optimizer state
    double mem_encoder = 0, mem_decoder = 0, mem_params = 0;

    double flops_total() const {
        return flops_patch_embed + flops_encoder + flops_decoder + flops_head;
    }
    double mem_total() const { return mem_encoder + mem_decoder + mem_params; }
    double decoder_flops_share() const { return flops_decoder / flops_total(); }
};

struct CostGeometry {
    std::int64_t frames = 128, height = 224, width = 224;
    std::int64_t kt = 2, kh = 16, kw = 16;
    double rho_e = 0.9, rho_d = 0.9, rho_r = 0.05;
};

// Per transformer layer on n tokens of width d with MLP ratio r:
// 8*n*d^2 (QKV+output projections) + 4*n^2*d (two attention matmuls)
// + 4*r*n*d^2 (MLP). Encoder runs on N^e tokens, decoder on N^e + N^d.
// Norms, softmax and biases are ignored (documented, ~<10% of the total).
CostReport flops_estimate(const CostGeometry& geom, const ArchDims& dims);

// Activation memory: per layer bytes*(n*d*c1 + heads*n^2*c2) with c1 the
// activation copies per block and c2 the materialized attention matrices.
CostReport memory_estimate(const CostGeometry& geom, const ArchDims& dims);

// constants used by memory_estimate, exposed for the report header
inline constexpr double kActivationCopiesPerBlock = 12.0;
inline constexpr double kAttentionCopiesPerBlock = 2.0;

// Cross-product sweep; CSV columns
// frames,rho_d,Ne,Nd,flops_total,flops_decoder_share,mem_bytes
// rows sorted ascending by (frames, rho_d).
std::string sweep_report(const std::vector<std::int64_t>& frame_list,
                         const std::vector<double>& rho_d_list, const CostGeometry& base,
                         const ArchDims& dims);

}  // namespace lvmae
