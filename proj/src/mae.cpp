#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lvmae/mae.hpp"

namespace lvmae {

namespace {
void add_block_params(ParamStore& params, const std::string& prefix, std::int64_t d,
                      std::int64_t mlp, RngStream& rng) {
    auto w = [&](const std::string& name, Shape shape) {
        auto stream = rng.split(name);
        params.add(name, init_trunc_normal(std::move(shape), 0.02, stream));
    };
    params.add(prefix + ".ln1.g", make_tensor({d}, 1.0));
    params.add(prefix + ".ln1.b", make_tensor({d}));
    w(prefix + ".attn.wq", {d, d});
    params.add(prefix + ".attn.bq", make_tensor({d}));
    w(prefix + ".attn.wk", {d, d});
    params.add(prefix + ".attn.bk", make_tensor({d}));
    w(prefix + ".attn.wv", {d, d});
    params.add(prefix + ".attn.bv", make_tensor({d}));
    w(prefix + ".attn.wo", {d, d});
    params.add(prefix + ".attn.bo", make_tensor({d}));
    params.add(prefix + ".ln2.g", make_tensor({d}, 1.0));
    params.add(prefix + ".ln2.b", make_tensor({d}));
    w(prefix + ".mlp.w1", {d, mlp});
    params.add(prefix + ".mlp.b1", make_tensor({mlp}));
    w(prefix + ".mlp.w2", {mlp, d});
    params.add(prefix + ".mlp.b2", make_tensor({d}));
}

// multi-head attention; x_q [m,d] attends over x_kv [n,d]
TensorPtr attention(Tape& tape, const TensorPtr& x_q, const TensorPtr& x_kv,
                    const ParamStore& params, const std::string& prefix, std::int64_t heads) {
    const std::int64_t d = x_q->shape[1];
    if (d % heads != 0) throw std::invalid_argument("attention: heads must divide dim");
    const std::int64_t dh = d / heads;
    auto q = add_bias(tape, matmul(tape, x_q, params.at(prefix + ".wq")), params.at(prefix + ".bq"));
    auto k = add_bias(tape, matmul(tape, x_kv, params.at(prefix + ".wk")), params.at(prefix + ".bk"));
    auto v = add_bias(tape, matmul(tape, x_kv, params.at(prefix + ".wv")), params.at(prefix + ".bv"));
    std::vector<TensorPtr> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::int64_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
        auto logits = scale(tape, matmul(tape, qh, transpose2d(tape, kh)), inv_sqrt);
        head_outs.push_back(matmul(tape, softmax(tape, logits), vh));
    }
    auto merged = concat_cols(tape, head_outs);
    return add_bias(tape, matmul(tape, merged, params.at(prefix + ".wo")),
                    params.at(prefix + ".bo"));
}

TensorPtr vit_block(Tape& tape, const TensorPtr& x, const ParamStore& params,
                    const std::string& prefix, std::int64_t heads) {
    auto h = layer_norm(tape, x, params.at(prefix + ".ln1.g"), params.at(prefix + ".ln1.b"));
    auto y = add(tape, x, attention(tape, h, h, params, prefix + ".attn", heads));
    auto h2 = layer_norm(tape, y, params.at(prefix + ".ln2.g"), params.at(prefix + ".ln2.b"));
    auto m1 = gelu(tape, add_bias(tape, matmul(tape, h2, params.at(prefix + ".mlp.w1")),
                                  params.at(prefix + ".mlp.b1")));
    auto m2 = add_bias(tape, matmul(tape, m1, params.at(prefix + ".mlp.w2")),
                       params.at(prefix + ".mlp.b2"));
    return add(tape, y, m2);
}

// per-axis sin-cos table [extent, part]
std::vector<double> axis_sincos(std::int64_t extent, std::int64_t part) {
    std::vector<double> t(static_cast<std::size_t>(extent * part), 0.0);
    const std::int64_t half = part / 2;
    for (std::int64_t pos = 0; pos < extent; ++pos)
        for (std::int64_t i = 0; i < half; ++i) {
            const double omega =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(part));
            t[static_cast<std::size_t>(pos * part + 2 * i)] =
                std::sin(static_cast<double>(pos) * omega);
            t[static_cast<std::size_t>(pos * part + 2 * i + 1)] =
                std::cos(static_cast<double>(pos) * omega);
        }
    return t;
}
}  // namespace

TensorPtr sincos_pos3d(std::int64_t gt, std::int64_t gh, std::int64_t gw, std::int64_t d) {
    // feature split across the three axes, each part even
    std::int64_t pt = (d / 3) & ~1ll;
    std::int64_t ph = (d / 3) & ~1ll;
    std::int64_t pw = d - pt - ph;
    if (pw % 2 != 0) {
        pw -= 1;
        pt += 1;  // keep total = d; odd leftover joins the temporal part
    }
    const auto tt = axis_sincos(gt, pt);
    const auto th = axis_sincos(gh, ph);
    const auto tw = axis_sincos(gw, pw);
    auto out = make_tensor({gt * gh * gw, d});
    std::int64_t row = 0;
    for (std::int64_t t = 0; t < gt; ++t)
        for (std::int64_t h = 0; h < gh; ++h)
            for (std::int64_t w = 0; w < gw; ++w, ++row) {
                double* o = out->data.data() + row * d;
                for (std::int64_t i = 0; i < pt; ++i) o[i] = tt[static_cast<std::size_t>(t * pt + i)];
                for (std::int64_t i = 0; i < ph; ++i)
                    o[pt + i] = th[static_cast<std::size_t>(h * ph + i)];
                for (std::int64_t i = 0; i < pw; ++i)
                    o[pt + ph + i] = tw[static_cast<std::size_t>(w * pw + i)];
            }
    return out;
}

MaeModel MaeModel::init(const MaeConfig& cfg, RngStream& rng) {
    MaeModel model;
    model.cfg = cfg;
    auto& p = model.params;
    auto w = [&](const std::string& name, Shape shape) {
        auto stream = rng.split(name);
        p.add(name, init_trunc_normal(std::move(shape), 0.02, stream));
    };
    w("patch.w", {cfg.dim, 3, cfg.kt, cfg.kh, cfg.kw});
    p.add("patch.b", make_tensor({cfg.dim}));
    for (std::int64_t l = 0; l < cfg.enc_layers; ++l)
        add_block_params(p, "enc.l" + std::to_string(l), cfg.dim, cfg.enc_mlp, rng);
    p.add("enc.norm.g", make_tensor({cfg.dim}, 1.0));
    p.add("enc.norm.b", make_tensor({cfg.dim}));
    w("dec.proj.w", {cfg.dim, cfg.dec_dim});
    p.add("dec.proj.b", make_tensor({cfg.dec_dim}));
    w("dec.mask", {1, cfg.dec_dim});
    for (std::int64_t l = 0; l < cfg.dec_layers; ++l)
        add_block_params(p, "dec.l" + std::to_string(l), cfg.dec_dim, cfg.dec_mlp, rng);
    p.add("dec.norm.g", make_tensor({cfg.dec_dim}, 1.0));
    p.add("dec.norm.b", make_tensor({cfg.dec_dim}));
    w("dec.head.w", {cfg.dec_dim, cfg.target_dim()});
    p.add("dec.head.b", make_tensor({cfg.target_dim()}));
    return model;
}

std::vector<double> patchify_pixels(const VideoTensor& video, const PatchSpec& patch) {
    const std::int64_t n = patch.tokens();
    const std::int64_t tdim = 3 * patch.kt * patch.kh * patch.kw;
    std::vector<double> out(static_cast<std::size_t>(n * tdim));
    std::int64_t row = 0;
    for (std::int64_t t = 0; t < patch.gt; ++t)
        for (std::int64_t h = 0; h < patch.gh; ++h)
            for (std::int64_t w = 0; w < patch.gw; ++w, ++row) {
                double* o = out.data() + row * tdim;
                std::int64_t i = 0;
                for (std::int64_t c = 0; c < 3; ++c)
                    for (std::int64_t dt = 0; dt < patch.kt; ++dt)
                        for (std::int64_t dy = 0; dy < patch.kh; ++dy)
                            for (std::int64_t dx = 0; dx < patch.kw; ++dx)
                                o[i++] = video.at(c, t * patch.kt + dt, h * patch.kh + dy,
                                                  w * patch.kw + dx);
            }
    return out;
}

TensorPtr patchify_embed(Tape& tape, const TensorPtr& video, const MaeModel& model) {
    const auto& cfg = model.cfg;
    auto emb = conv3d(tape, video, model.params.at("patch.w"), model.params.at("patch.b"),
                      {cfg.kt, cfg.kh, cfg.kw});
    const std::int64_t gt = emb->shape[1], gh = emb->shape[2], gw = emb->shape[3];
    auto rows = chw_to_rows(tape, emb);
    return add(tape, rows, sincos_pos3d(gt, gh, gw, cfg.dim));
}

TensorPtr vit_blocks(Tape& tape, TensorPtr x, const MaeModel& model, const std::string& prefix,
                     std::int64_t layers, std::int64_t heads) {
    for (std::int64_t l = 0; l < layers; ++l)
        x = vit_block(tape, x, model.params, prefix + ".l" + std::to_string(l), heads);
    return x;
}

std::vector<std::int64_t> visible_indices(const std::vector<std::uint8_t>& encoder_masked) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < encoder_masked.size(); ++i)
        if (!encoder_masked[i]) idx.push_back(static_cast<std::int64_t>(i));
    return idx;
}
std::vector<std::int64_t> selected_indices(const std::vector<std::uint8_t>& decoder_selected) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < decoder_selected.size(); ++i)
        if (decoder_selected[i]) idx.push_back(static_cast<std::int64_t>(i));
    return idx;
}

TensorPtr encode_visible(Tape& tape, const TensorPtr& all_tokens,
                         const std::vector<std::int64_t>& visible, const MaeModel& model) {
    if (visible.empty()) throw std::invalid_argument("encode_visible: empty visible set");
    auto x = gather_rows(tape, all_tokens, visible);
    x = vit_blocks(tape, x, model, "enc", model.cfg.enc_layers, model.cfg.enc_heads);
    return layer_norm(tape, x, model.params.at("enc.norm.g"), model.params.at("enc.norm.b"));
}

TensorPtr decode_selected(Tape& tape, const TensorPtr& z, const MaskSet& masks,
                          const MaeModel& model) {
    auto report = validate(masks);
    if (!report.ok) throw std::invalid_argument("decode_selected: invalid mask set");
    const auto& cfg = model.cfg;
    const auto visible = visible_indices(masks.encoder_masked);
    const auto selected = selected_indices(masks.decoder_selected);
    if (z->shape[0] != static_cast<std::int64_t>(visible.size()))
        throw std::invalid_argument("decode_selected: Z row count != N^e");

    auto pos = sincos_pos3d(masks.grid.gt, masks.grid.gh, masks.grid.gw, cfg.dec_dim);
    auto zp = add_bias(tape, matmul(tape, z, model.params.at("dec.proj.w")),
                       model.params.at("dec.proj.b"));
    zp = add(tape, zp, gather_rows(tape, pos, visible));

    TensorPtr x = zp;
    const std::int64_t n_sel = static_cast<std::int64_t>(selected.size());
    if (n_sel > 0) {
        auto masks_emb = broadcast_row(tape, model.params.at("dec.mask"), n_sel);
        masks_emb = add(tape, masks_emb, gather_rows(tape, pos, selected));
        x = concat_rows(tape, {zp, masks_emb});
    }
    x = vit_blocks(tape, x, model, "dec", cfg.dec_layers, cfg.dec_heads);
    x = layer_norm(tape, x, model.params.at("dec.norm.g"), model.params.at("dec.norm.b"));
    auto preds = add_bias(tape, matmul(tape, x, model.params.at("dec.head.w")),
                          model.params.at("dec.head.b"));
    const std::int64_t n_vis = static_cast<std::int64_t>(visible.size());
    return slice_rows(tape, preds, n_vis, n_vis + n_sel);
}

TensorPtr mae_loss(Tape& tape, const TensorPtr& pred, const TensorPtr& targets_all,
                   const MaskSet& masks) {
    const auto selected = selected_indices(masks.decoder_selected);
    if (pred->shape[0] != static_cast<std::int64_t>(selected.size()))
        throw std::invalid_argument("mae_loss: prediction rows != N^d");
    if (targets_all->shape[0] != masks.n())
        throw std::invalid_argument("mae_loss: target rows != N");
    if (selected.empty()) return make_tensor({1});
    return mse_loss(tape, pred, gather_rows(tape, targets_all, selected));
}

namespace {
TensorPtr build_targets(const VideoTensor& video, const MaeModel& model,
                        const Tokenizer* frozen) {
    const auto& cfg = model.cfg;
    const auto patch = patch_grid(video.frames, video.height, video.width, cfg.kt, cfg.kh, cfg.kw);
    if (cfg.target == MaeConfig::Target::Rgb)
        return make_tensor({patch.tokens(), cfg.target_dim()}, patchify_pixels(video, patch));
    if (!frozen) throw std::invalid_argument("pretrain: FSQ targets need a frozen tokenizer");
    auto tok = tokenize_long_video(video, *frozen);
    if (tok.latents.tokens() != patch.tokens() || tok.latents.dim != cfg.target_dim())
        throw std::logic_error("pretrain: tokenizer latent grid != MAE token grid");
    return make_tensor({patch.tokens(), cfg.target_dim()}, tok.latents.zq);
}
}  // namespace

double pretrain_step(const std::vector<PretrainItem>& batch, MaeModel& model, Optimizer& opt,
                     double lr, const Tokenizer* frozen_tokenizer) {
    if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
    Tape tape;
    TensorPtr total;
    for (const auto& item : batch) {
        auto vt = video_to_tensor(*item.video);
        auto tokens = patchify_embed(tape, vt, model);
        auto z = encode_visible(tape, tokens, visible_indices(item.masks.encoder_masked), model);
        auto pred = decode_selected(tape, z, item.masks, model);
        auto targets = build_targets(*item.video, model, frozen_tokenizer);
        auto loss = mae_loss(tape, pred, targets, item.masks);
        total = total ? add(tape, total, loss) : loss;
    }
    auto loss = scale(tape, total, 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(loss->data[0])) throw std::runtime_error("pretrain_step: non-finite loss");
    model.params.zero_grad();
    tape.backward(loss);
    opt.step(model.params, lr);
    return loss->data[0];
}

// ---------------------------------------------------------------------------
// fine-tuning / evaluation
// ---------------------------------------------------------------------------

void init_classifier(MaeModel& model, const FinetuneConfig& cfg, RngStream& rng) {
    if (cfg.classes < 2) throw std::invalid_argument("init_classifier: need >= 2 classes");
    auto& p = model.params;
    const std::int64_t d = model.cfg.dim;
    auto w = [&](const std::string& name, Shape shape) {
        auto stream = rng.split(name);
        p.add(name, init_trunc_normal(std::move(shape), 0.02, stream));
    };
    if (cfg.head == FinetuneConfig::Head::ClassAttention) {
        w("head.query", {1, d});
        p.add("head.ln.g", make_tensor({d}, 1.0));
        p.add("head.ln.b", make_tensor({d}));
        w("head.ca.wq", {d, d});
        p.add("head.ca.bq", make_tensor({d}));
        w("head.ca.wk", {d, d});
        p.add("head.ca.bk", make_tensor({d}));
        w("head.ca.wv", {d, d});
        p.add("head.ca.bv", make_tensor({d}));
        w("head.ca.wo", {d, d});
        p.add("head.ca.bo", make_tensor({d}));
    }
    w("head.fc.w", {d, cfg.classes});
    p.add("head.fc.b", make_tensor({cfg.classes}));
}

TensorPtr classify_tokens(Tape& tape, const TensorPtr& video, const MaeModel& model,
                          const FinetuneConfig& cfg, const std::vector<std::int64_t>& kept) {
    auto tokens = patchify_embed(tape, video, model);
    auto z = encode_visible(tape, tokens, kept, model);
    TensorPtr pooled;
    if (cfg.head == FinetuneConfig::Head::MeanPool) {
        pooled = mean_rows(tape, z);
    } else {
        auto zn = layer_norm(tape, z, model.params.at("head.ln.g"), model.params.at("head.ln.b"));
        pooled = attention(tape, model.params.at("head.query"), zn, model.params, "head.ca",
                           model.cfg.enc_heads);
    }
    return add_bias(tape, matmul(tape, pooled, model.params.at("head.fc.w")),
                    model.params.at("head.fc.b"));
}

namespace {
std::vector<std::int64_t> all_indices(std::int64_t n) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
}
}  // namespace

double finetune_step(const std::vector<LabeledClip>& batch, MaeModel& model,
                     const FinetuneConfig& cfg, Optimizer& opt, double lr, RngStream& rng) {
    if (batch.empty()) throw std::invalid_argument("finetune_step: empty batch");
    Tape tape;
    std::vector<TensorPtr> logits;
    std::vector<std::int64_t> labels;
    for (const auto& clip : batch) {
        const auto& v = *clip.video;
        const auto patch = patch_grid(v.frames, v.height, v.width, model.cfg.kt, model.cfg.kh,
                                      model.cfg.kw);
        std::vector<std::int64_t> kept;
        if (cfg.drop_ratio > 0.0) {
            TokenGrid grid{patch.gt, patch.gh, patch.gw};
            auto drop_rng = rng.split("drop");
            kept = visible_indices(make_tube_mask(grid, cfg.drop_ratio, drop_rng));
        } else {
            kept = all_indices(patch.tokens());
        }
        logits.push_back(classify_tokens(tape, video_to_tensor(v), model, cfg, kept));
        labels.push_back(clip.label);
    }
    auto stacked = concat_rows(tape, logits);
    auto loss = cross_entropy(tape, stacked, labels, cfg.label_smoothing);
    if (!std::isfinite(loss->data[0])) throw std::runtime_error("finetune_step: non-finite loss");
    model.params.zero_grad();
    tape.backward(loss);
    opt.step(model.params, lr);
    return loss->data[0];
}

std::vector<double> predict_logits(const VideoTensor& video, const MaeModel& model,
                                   const FinetuneConfig& cfg) {
    Tape tape;
    const auto patch = patch_grid(video.frames, video.height, video.width, model.cfg.kt,
                                  model.cfg.kh, model.cfg.kw);
    auto logits =
        classify_tokens(tape, video_to_tensor(video), model, cfg, all_indices(patch.tokens()));
    return logits->data;
}

std::vector<double> multi_crop_eval(const VideoTensor& video, const MaeModel& model,
                                    const FinetuneConfig& cfg, std::int64_t crop_len,
                                    std::int64_t n_crops) {
    if (crop_len > video.frames) throw std::invalid_argument("multi_crop_eval: crop too long");
    if (n_crops < 1) throw std::invalid_argument("multi_crop_eval: need >= 1 crop");
    std::vector<double> avg(static_cast<std::size_t>(cfg.classes), 0.0);
    for (std::int64_t i = 0; i < n_crops; ++i) {
        const std::int64_t start =
            (n_crops == 1) ? 0
                           : i * (video.frames - crop_len) / (n_crops - 1);
        VideoTensor crop(crop_len, video.height, video.width);
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t f = 0; f < crop_len; ++f)
                for (std::int64_t y = 0; y < video.height; ++y)
                    for (std::int64_t x = 0; x < video.width; ++x)
                        crop.at(c, f, y, x) = video.at(c, start + f, y, x);
        const auto logits = predict_logits(crop, model, cfg);
        for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += logits[j];
    }
    for (auto& v : avg) v /= static_cast<double>(n_crops);
    return avg;
}

}  // namespace lvmae
