#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvmae/masking.hpp"
#include "lvmae/optim.hpp"
#include "lvmae/tape.hpp"
#include "lvmae/video.hpp"

namespace lvmae {

struct FsqSpec {
    std::vector<int> levels;  // every entry >= 2

    int dim() const { return static_cast<int>(levels.size()); }
    std::int64_t codebook_size() const {
        std::int64_t n = 1;
        for (int l : levels) n *= l;
        return n;
    }
    static FsqSpec paper() { return FsqSpec{{8, 8, 4, 4, 4, 4, 4, 4}}; }
};

// Per-channel projection onto the L-point lattice {-(L-1)/2..(L-1)/2}/((L-1)/2)
// in [-1,1]; input clamped; exact-midpoint ties break toward +. The encoder
// bounds its latents with tanh before this runs, so the projection alone is
// exactly idempotent.
void fsq_quantize_vec(const double* z, double* out, const FsqSpec& spec);
std::int64_t fsq_index(const double* zhat, const FsqSpec& spec);
void fsq_from_index(std::int64_t code, const FsqSpec& spec, double* out);

// Tape op over token rows [n,D]: forward quantizes, backward is straight-through.
TensorPtr fsq_quantize_st(Tape& tape, const TensorPtr& z, const FsqSpec& spec);

struct TokenizerConfig {
    std::int64_t base_channels = 16;
    std::int64_t scorer_channels = 32;
    FsqSpec fsq = FsqSpec::paper();
    std::int64_t window = 16;           // sliding-window frames for long videos
    std::int64_t temporal_down = 2;
    std::int64_t spatial_down = 8;      // 2 x 2 x 2 over the three blocks
    // training top-k as a fraction of latent tokens: k = round(fraction * n).
    // 0.375 reproduces k=768 on the 8x16x16 grid.
    double train_topk_fraction = 0.375;
    double infer_keep_fraction = 0.15;
    // when false, the training budget counts frame-0 tokens against k instead
    // of adding them (the non-additive reading of the keep-all rule)
    bool keep_all_additive = true;

    std::int64_t latent_dim() const { return fsq.dim(); }
};

struct Tokenizer {
    TokenizerConfig cfg;
    ParamStore params;

    static Tokenizer init(const TokenizerConfig& cfg, RngStream& rng);
};

struct LatentGrid {
    std::int64_t dt = 0, dh = 0, dw = 0, dim = 0;
    std::vector<double> z;              // continuous latents, rows (t,h,w) x dim
    std::vector<double> zq;             // quantized latents, same layout
    std::vector<std::uint8_t> selected; // per latent token

    std::int64_t tokens() const { return dt * dh * dw; }
};

struct ImportanceMap {
    std::int64_t dt = 0, dh = 0, dw = 0;
    std::vector<double> scores;  // >= 0, frame 0 entries are 0

    std::int64_t tokens() const { return dt * dh * dw; }
};

// graph builders (shared by training and frozen inference)
TensorPtr video_to_tensor(const VideoTensor& video);
TensorPtr magvit_encode(Tape& tape, const TensorPtr& video, const Tokenizer& tok);  // [D,T',H',W']
TensorPtr magvit_decode(Tape& tape, const TensorPtr& latent_chw, const Tokenizer& tok);
TensorPtr score_tokens(Tape& tape, const TensorPtr& video, const Tokenizer& tok);   // [n] flat scores

enum class SelectMode { Train, Infer };

// Hard top-k mask over flat scores. Train mode keeps all `frame0_tokens`
// leading tokens and applies top-k to the rest; infer mode is plain top-k
// over everything. Ties break by ascending flat index.
std::vector<std::uint8_t> topk_select_mask(const std::vector<double>& scores, std::int64_t k,
                                           std::int64_t frame0_tokens, SelectMode mode);

// Straight-through selection: hard 0/1 mask forward; backward passes the
// output gradient to kept rows of z and a sigmoid-relaxed gradient
// sigma((s - s_k)/tau) to the scores so the scorer trains end-to-end.
TensorPtr select_topk_st(Tape& tape, const TensorPtr& z_rows, const TensorPtr& scores,
                         std::int64_t k, std::int64_t frame0_tokens, SelectMode mode,
                         std::vector<std::uint8_t>* keep_out = nullptr);

std::int64_t train_topk_count(const TokenizerConfig& cfg, std::int64_t latent_tokens,
                              std::int64_t frame0_tokens);
std::int64_t infer_keep_count(const TokenizerConfig& cfg, std::int64_t latent_tokens);

// One joint Adam step on encoder+decoder+scorer; returns pixel MSE loss.
double tokenizer_train_step(const std::vector<const VideoTensor*>& batch, Tokenizer& tok,
                            Optimizer& opt, double lr);

struct TokenizeOut {
    LatentGrid latents;
    ImportanceMap importance;
    bool padded = false;  // last window padded by repeating the final frame
};

// Frozen inference; windows processed independently and concatenated in time.
TokenizeOut tokenize_long_video(const VideoTensor& video, const Tokenizer& tok);

// LVTK dump: grid dims u32x3, D u32, f64 latents (quantized), f64 scores,
// selection bitmask padded to byte.
void save_token_dump(const std::string& path, const LatentGrid& latents,
                     const ImportanceMap& importance);
struct TokenDump {
    LatentGrid latents;
    ImportanceMap importance;
};
TokenDump load_token_dump(const std::string& path);

}  // namespace lvmae
