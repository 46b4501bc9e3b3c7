#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "lvmae/tokenizer.hpp"

namespace lvmae {

// ---------------------------------------------------------------------------
// FSQ lattice
// ---------------------------------------------------------------------------

namespace {
// nearest lattice index in [0, L-1] for a value in [-1,1]; exact midpoints
// round toward the positive neighbor
std::int64_t lattice_digit(double v, int levels) {
    const double half = static_cast<double>(levels - 1) / 2.0;
    const double u = std::clamp(v, -1.0, 1.0) * half + half;  // [0, L-1]
    std::int64_t j = static_cast<std::int64_t>(std::floor(u + 0.5));
    return std::clamp<std::int64_t>(j, 0, levels - 1);
}
double lattice_value(std::int64_t digit, int levels) {
    const double half = static_cast<double>(levels - 1) / 2.0;
    return (static_cast<double>(digit) - half) / half;
}
}  // namespace

void fsq_quantize_vec(const double* z, double* out, const FsqSpec& spec) {
    for (int i = 0; i < spec.dim(); ++i) {
        if (!std::isfinite(z[i])) throw std::domain_error("fsq_quantize: non-finite input");
        out[i] = lattice_value(lattice_digit(z[i], spec.levels[i]), spec.levels[i]);
    }
}

std::int64_t fsq_index(const double* zhat, const FsqSpec& spec) {
    std::int64_t code = 0;
    for (int i = 0; i < spec.dim(); ++i) {
        const int l = spec.levels[i];
        const std::int64_t j = lattice_digit(zhat[i], l);
        if (std::fabs(lattice_value(j, l) - zhat[i]) > 1e-9)
            throw std::invalid_argument("fsq_index: value off lattice");
        code = code * l + j;
    }
    return code;
}

void fsq_from_index(std::int64_t code, const FsqSpec& spec, double* out) {
    if (code < 0 || code >= spec.codebook_size())
        throw std::out_of_range("fsq_from_index: code out of range");
    for (int i = spec.dim() - 1; i >= 0; --i) {
        const int l = spec.levels[i];
        out[i] = lattice_value(code % l, l);
        code /= l;
    }
}

TensorPtr fsq_quantize_st(Tape& tape, const TensorPtr& z, const FsqSpec& spec) {
    if (z->shape.size() != 2 || z->shape[1] != spec.dim())
        throw std::invalid_argument("fsq_quantize_st: expected [n,D] rows");
    const std::int64_t n = z->shape[0], d = z->shape[1];
    auto out = make_tensor(z->shape);
    for (std::int64_t r = 0; r < n; ++r)
        fsq_quantize_vec(z->data.data() + r * d, out->data.data() + r * d, spec);
    z->ensure_grad();
    out->ensure_grad();
    tape.record([z, out] {
        for (std::int64_t i = 0; i < z->size(); ++i) z->grad[i] += out->grad[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// selection
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> topk_select_mask(const std::vector<double>& scores, std::int64_t k,
                                           std::int64_t frame0_tokens, SelectMode mode) {
    const std::int64_t n = static_cast<std::int64_t>(scores.size());
    const std::int64_t start = (mode == SelectMode::Train) ? frame0_tokens : 0;
    const std::int64_t eligible = n - start;
    if (k <= 0 || k > eligible) throw std::invalid_argument("topk_select_mask: k out of range");
    std::vector<std::int64_t> order(static_cast<std::size_t>(eligible));
    std::iota(order.begin(), order.end(), start);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    });
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n), 0);
    if (mode == SelectMode::Train)
        for (std::int64_t i = 0; i < frame0_tokens; ++i) keep[static_cast<std::size_t>(i)] = 1;
    for (std::int64_t i = 0; i < k; ++i)
        keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    return keep;
}

TensorPtr select_topk_st(Tape& tape, const TensorPtr& z_rows, const TensorPtr& scores,
                         std::int64_t k, std::int64_t frame0_tokens, SelectMode mode,
                         std::vector<std::uint8_t>* keep_out) {
    if (z_rows->shape.size() != 2) throw std::invalid_argument("select_topk_st: z must be [n,D]");
    const std::int64_t n = z_rows->shape[0], d = z_rows->shape[1];
    if (scores->size() != n) throw std::invalid_argument("select_topk_st: score count mismatch");

    std::vector<double> s(scores->data);
    auto keep = topk_select_mask(s, k, frame0_tokens, mode);
    if (keep_out) *keep_out = keep;

    // k-th kept score among eligible rows = relaxation pivot
    const std::int64_t start = (mode == SelectMode::Train) ? frame0_tokens : 0;
    std::vector<double> eligible(s.begin() + static_cast<std::ptrdiff_t>(start), s.end());
    std::nth_element(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     eligible.end(), std::greater<double>());
    const double pivot = eligible[static_cast<std::size_t>(k - 1)];

    // temperature from the score spread of this batch
    double mean = 0.0;
    for (std::int64_t i = start; i < n; ++i) mean += s[static_cast<std::size_t>(i)];
    mean /= static_cast<double>(n - start);
    double var = 0.0;
    for (std::int64_t i = start; i < n; ++i) {
        const double c = s[static_cast<std::size_t>(i)] - mean;
        var += c * c;
    }
    var /= static_cast<double>(n - start);
    const double tau = std::max(0.1 * std::sqrt(var), 1e-6);

    auto out = make_tensor(z_rows->shape);
    for (std::int64_t r = 0; r < n; ++r)
        if (keep[static_cast<std::size_t>(r)])
            std::copy(z_rows->data.begin() + r * d, z_rows->data.begin() + (r + 1) * d,
                      out->data.begin() + r * d);
    z_rows->ensure_grad();
    scores->ensure_grad();
    out->ensure_grad();
    auto keep_shared = std::make_shared<std::vector<std::uint8_t>>(std::move(keep));
    tape.record([z_rows, scores, out, keep_shared, n, d, start, pivot, tau] {
        for (std::int64_t r = 0; r < n; ++r) {
            if ((*keep_shared)[static_cast<std::size_t>(r)])
                for (std::int64_t j = 0; j < d; ++j)
                    z_rows->grad[r * d + j] += out->grad[r * d + j];
            if (r < start) continue;
            // d(sigma((s-pivot)/tau) * z)/ds routed to the scorer
            const double a = (scores->data[r] - pivot) / tau;
            const double sg = 1.0 / (1.0 + std::exp(-a));
            double dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += out->grad[r * d + j] * z_rows->data[r * d + j];
            scores->grad[r] += dot * sg * (1.0 - sg) / tau;
        }
    });
    return out;
}

std::int64_t train_topk_count(const TokenizerConfig& cfg, std::int64_t latent_tokens,
                              std::int64_t frame0_tokens) {
    const std::int64_t k = round_half_up(cfg.train_topk_fraction *
                                         static_cast<double>(latent_tokens));
    if (cfg.keep_all_additive) return k;
    return std::max<std::int64_t>(1, k - frame0_tokens);
}

std::int64_t infer_keep_count(const TokenizerConfig& cfg, std::int64_t latent_tokens) {
    return round_half_up(cfg.infer_keep_fraction * static_cast<double>(latent_tokens));
}

// ---------------------------------------------------------------------------
// MAGVIT-lite encoder/decoder/scorer
// ---------------------------------------------------------------------------

Tokenizer Tokenizer::init(const TokenizerConfig& cfg, RngStream& rng) {
    Tokenizer tok;
    tok.cfg = cfg;
    const std::int64_t c1 = cfg.base_channels, c2 = 2 * cfg.base_channels;
    const std::int64_t d = cfg.latent_dim(), s = cfg.scorer_channels;
    auto w = [&](const std::string& name, Shape shape) {
        auto stream = rng.split(name);
        tok.params.add(name, init_trunc_normal(std::move(shape), 0.02, stream));
    };
    auto b = [&](const std::string& name, std::int64_t n) {
        tok.params.add(name, make_tensor({n}));
    };
    w("enc.conv1.w", {c1, 3, 2, 2, 2});
    b("enc.conv1.b", c1);
    w("enc.conv2.w", {c2, c1, 1, 2, 2});
    b("enc.conv2.b", c2);
    w("enc.conv3.w", {c2, c2, 1, 2, 2});
    b("enc.conv3.b", c2);
    w("enc.proj.w", {d, c2, 1, 1, 1});
    b("enc.proj.b", d);
    w("dec.proj.w", {c2, d, 1, 1, 1});
    b("dec.proj.b", c2);
    w("dec.up1.w", {c2, c2, 1, 2, 2});
    b("dec.up1.b", c2);
    w("dec.up2.w", {c2, c1, 1, 2, 2});
    b("dec.up2.b", c1);
    w("dec.up3.w", {c1, 3, 2, 2, 2});
    b("dec.up3.b", 3);
    w("scorer.conv1.w", {s, 3, 2, 2, 2});
    b("scorer.conv1.b", s);
    w("scorer.conv2.w", {s, s, 1, 4, 4});
    b("scorer.conv2.b", s);
    return tok;
}

TensorPtr video_to_tensor(const VideoTensor& video) {
    return make_tensor({3, video.frames, video.height, video.width}, video.data);
}

namespace {
TensorPtr tanh_op(Tape& tape, const TensorPtr& x) {
    auto out = make_tensor(x->shape);
    for (std::int64_t i = 0; i < x->size(); ++i) out->data[i] = std::tanh(x->data[i]);
    x->ensure_grad();
    out->ensure_grad();
    tape.record([x, out] {
        for (std::int64_t i = 0; i < x->size(); ++i)
            x->grad[i] += out->grad[i] * (1.0 - out->data[i] * out->data[i]);
    });
    return out;
}
}  // namespace

TensorPtr magvit_encode(Tape& tape, const TensorPtr& video, const Tokenizer& tok) {
    const auto& p = tok.params;
    auto h1 = gelu(tape, conv3d(tape, video, p.at("enc.conv1.w"), p.at("enc.conv1.b"), {2, 2, 2}));
    auto h2 = gelu(tape, conv3d(tape, h1, p.at("enc.conv2.w"), p.at("enc.conv2.b"), {1, 2, 2}));
    auto h3 = gelu(tape, conv3d(tape, h2, p.at("enc.conv3.w"), p.at("enc.conv3.b"), {1, 2, 2}));
    // tanh bounds latents to (-1,1) so the FSQ lattice projection covers them
    return tanh_op(tape, conv3d(tape, h3, p.at("enc.proj.w"), p.at("enc.proj.b"), {1, 1, 1}));
}

TensorPtr magvit_decode(Tape& tape, const TensorPtr& latent_chw, const Tokenizer& tok) {
    const auto& p = tok.params;
    auto h = gelu(tape, conv3d(tape, latent_chw, p.at("dec.proj.w"), p.at("dec.proj.b"), {1, 1, 1}));
    h = gelu(tape, conv3d_transpose(tape, h, p.at("dec.up1.w"), p.at("dec.up1.b"), {1, 2, 2}));
    h = gelu(tape, conv3d_transpose(tape, h, p.at("dec.up2.w"), p.at("dec.up2.b"), {1, 2, 2}));
    return sigmoid(tape, conv3d_transpose(tape, h, p.at("dec.up3.w"), p.at("dec.up3.b"), {2, 2, 2}));
}

TensorPtr score_tokens(Tape& tape, const TensorPtr& video, const Tokenizer& tok) {
    const auto& p = tok.params;
    auto f1 = gelu(tape,
                   conv3d(tape, video, p.at("scorer.conv1.w"), p.at("scorer.conv1.b"), {2, 2, 2}));
    auto f2 = conv3d(tape, f1, p.at("scorer.conv2.w"), p.at("scorer.conv2.b"), {1, 4, 4});
    // scorer grid must line up with the tokenizer latent grid
    const std::int64_t lt = video->shape[1] / tok.cfg.temporal_down;
    const std::int64_t lh = video->shape[2] / tok.cfg.spatial_down;
    const std::int64_t lw = video->shape[3] / tok.cfg.spatial_down;
    if (f2->shape[1] != lt || f2->shape[2] != lh || f2->shape[3] != lw)
        throw std::logic_error("score_tokens: scorer grid mismatch with latent grid");
    return adjacent_frame_distance(tape, f2);
}

// ---------------------------------------------------------------------------
// training and frozen inference
// ---------------------------------------------------------------------------

double tokenizer_train_step(const std::vector<const VideoTensor*>& batch, Tokenizer& tok,
                            Optimizer& opt, double lr) {
    if (batch.empty()) throw std::invalid_argument("tokenizer_train_step: empty batch");
    Tape tape;
    TensorPtr total;
    for (const auto* video : batch) {
        auto vt = video_to_tensor(*video);
        auto z_chw = magvit_encode(tape, vt, tok);
        const std::int64_t lt = z_chw->shape[1], lh = z_chw->shape[2], lw = z_chw->shape[3];
        auto z_rows = chw_to_rows(tape, z_chw);
        auto scores = score_tokens(tape, vt, tok);
        const std::int64_t frame0 = lh * lw;
        const std::int64_t k = train_topk_count(tok.cfg, lt * lh * lw, frame0);
        // quantize first, then zero unselected rows, so masked latents enter
        // the decoder as exact zeros
        auto zq = fsq_quantize_st(tape, z_rows, tok.cfg.fsq);
        auto masked = select_topk_st(tape, zq, scores, k, frame0, SelectMode::Train);
        auto recon = magvit_decode(tape, rows_to_chw(tape, masked, lt, lh, lw), tok);
        auto loss = mse_loss(tape, recon, vt);
        total = total ? add(tape, total, loss) : loss;
    }
    auto loss = scale(tape, total, 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(loss->data[0]))
        throw std::runtime_error("tokenizer_train_step: non-finite loss");
    tok.params.zero_grad();
    tape.backward(loss);
    opt.step(tok.params, lr);
    return loss->data[0];
}

TokenizeOut tokenize_long_video(const VideoTensor& video, const Tokenizer& tok) {
    if (video.frames <= 0) throw std::invalid_argument("tokenize_long_video: empty video");
    const std::int64_t window = tok.cfg.window;
    TokenizeOut out;

    VideoTensor padded_video;
    const VideoTensor* src = &video;
    if (video.frames % window != 0) {
        const std::int64_t target = ((video.frames / window) + 1) * window;
        padded_video = VideoTensor(target, video.height, video.width);
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t f = 0; f < target; ++f) {
                const std::int64_t sf = std::min(f, video.frames - 1);
                for (std::int64_t y = 0; y < video.height; ++y)
                    for (std::int64_t x = 0; x < video.width; ++x)
                        padded_video.at(c, f, y, x) = video.at(c, sf, y, x);
            }
        src = &padded_video;
        out.padded = true;
    }

    const std::int64_t n_windows = src->frames / window;
    const std::int64_t lt_w = window / tok.cfg.temporal_down;
    const std::int64_t lh = src->height / tok.cfg.spatial_down;
    const std::int64_t lw = src->width / tok.cfg.spatial_down;
    const std::int64_t d = tok.cfg.latent_dim();

    out.latents.dt = n_windows * lt_w;
    out.latents.dh = lh;
    out.latents.dw = lw;
    out.latents.dim = d;
    out.latents.z.resize(static_cast<std::size_t>(out.latents.tokens() * d));
    out.latents.zq.resize(out.latents.z.size());
    out.importance.dt = out.latents.dt;
    out.importance.dh = lh;
    out.importance.dw = lw;
    out.importance.scores.resize(static_cast<std::size_t>(out.importance.tokens()));

    for (std::int64_t wi = 0; wi < n_windows; ++wi) {
        VideoTensor clip(window, src->height, src->width);
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t f = 0; f < window; ++f)
                std::copy(&src->data[((c * src->frames + wi * window + f) * src->height) *
                                     src->width],
                          &src->data[((c * src->frames + wi * window + f + 1) * src->height) *
                                     src->width],
                          &clip.data[((c * window + f) * clip.height) * clip.width]);
        Tape tape;  // forward only
        auto vt = video_to_tensor(clip);
        auto z_chw = magvit_encode(tape, vt, tok);
        auto z_rows = chw_to_rows(tape, z_chw);
        auto scores = score_tokens(tape, vt, tok);
        const std::int64_t win_tokens = lt_w * lh * lw;
        const std::int64_t dst_tok = wi * win_tokens;
        std::copy(z_rows->data.begin(), z_rows->data.end(),
                  out.latents.z.begin() + dst_tok * d);
        for (std::int64_t r = 0; r < win_tokens; ++r)
            fsq_quantize_vec(out.latents.z.data() + (dst_tok + r) * d,
                             out.latents.zq.data() + (dst_tok + r) * d, tok.cfg.fsq);
        std::copy(scores->data.begin(), scores->data.end(),
                  out.importance.scores.begin() + dst_tok);
    }

    const std::int64_t k = infer_keep_count(tok.cfg, out.latents.tokens());
    out.latents.selected = topk_select_mask(out.importance.scores, k, 0, SelectMode::Infer);
    return out;
}

// ---------------------------------------------------------------------------
// LVTK dump
// ---------------------------------------------------------------------------

namespace {
void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("token dump: truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void save_token_dump(const std::string& path, const LatentGrid& latents,
                     const ImportanceMap& importance) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_token_dump: cannot open " + path);
    os.write("LVTK", 4);
    write_u32(os, static_cast<std::uint32_t>(latents.dt));
    write_u32(os, static_cast<std::uint32_t>(latents.dh));
    write_u32(os, static_cast<std::uint32_t>(latents.dw));
    write_u32(os, static_cast<std::uint32_t>(latents.dim));
    os.write(reinterpret_cast<const char*>(latents.zq.data()),
             static_cast<std::streamsize>(latents.zq.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(importance.scores.data()),
             static_cast<std::streamsize>(importance.scores.size() * sizeof(double)));
    std::vector<unsigned char> packed((latents.selected.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < latents.selected.size(); ++i)
        if (latents.selected[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(packed.size()));
    if (!os) throw std::runtime_error("save_token_dump: write failed");
}

TokenDump load_token_dump(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_token_dump: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LVTK", 4) != 0)
        throw std::runtime_error("load_token_dump: bad magic");
    TokenDump dump;
    dump.latents.dt = read_u32(is);
    dump.latents.dh = read_u32(is);
    dump.latents.dw = read_u32(is);
    dump.latents.dim = read_u32(is);
    const std::int64_t n = dump.latents.tokens();
    dump.latents.zq.resize(static_cast<std::size_t>(n * dump.latents.dim));
    is.read(reinterpret_cast<char*>(dump.latents.zq.data()),
            static_cast<std::streamsize>(dump.latents.zq.size() * sizeof(double)));
    dump.importance.dt = dump.latents.dt;
    dump.importance.dh = dump.latents.dh;
    dump.importance.dw = dump.latents.dw;
    dump.importance.scores.resize(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(dump.importance.scores.data()),
            static_cast<std::streamsize>(dump.importance.scores.size() * sizeof(double)));
    std::vector<unsigned char> packed(static_cast<std::size_t>((n + 7) / 8));
    is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!is) throw std::runtime_error("load_token_dump: truncated");
    dump.latents.selected.assign(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n; ++i)
        dump.latents.selected[static_cast<std::size_t>(i)] = (packed[i / 8] >> (i % 8)) & 1u;
    return dump;
}

}  // namespace lvmae
