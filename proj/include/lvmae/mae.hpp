#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvmae/masking.hpp"
#include "lvmae/optim.hpp"
#include "lvmae/tape.hpp"
#include "lvmae/tokenizer.hpp"
#include "lvmae/video.hpp"

namespace lvmae {

struct MaeConfig {
    std::int64_t dim = 64;
    std::int64_t enc_layers = 4, enc_heads = 4, enc_mlp = 256;
    std::int64_t dec_dim = 32;
    std::int64_t dec_layers = 2, dec_heads = 4, dec_mlp = 128;
    std::int64_t kt = 2, kh = 8, kw = 8;  // tubelet
    enum class Target { Rgb, FsqLatent } target = Target::Rgb;
    std::int64_t fsq_dim = 8;

    std::int64_t target_dim() const {
        return target == Target::Rgb ? 3 * kt * kh * kw : fsq_dim;
    }
};

struct MaeModel {
    MaeConfig cfg;
    ParamStore params;

    static MaeModel init(const MaeConfig& cfg, RngStream& rng);
};

// Fixed 3D sin-cos positional table [gt*gh*gw, d]; per-axis encodings
// concatenated along the feature dimension.
TensorPtr sincos_pos3d(std::int64_t gt, std::int64_t gh, std::int64_t gw, std::int64_t d);

// Raw per-token pixel targets [N, 3*kt*kh*kw], token raster order (t,h,w).
std::vector<double> patchify_pixels(const VideoTensor& video, const PatchSpec& patch);

// 3DConv patch embedding + positional encoding -> [N, d].
TensorPtr patchify_embed(Tape& tape, const TensorPtr& video, const MaeModel& model);

// generic pre-norm ViT stack over given rows
TensorPtr vit_blocks(Tape& tape, TensorPtr x, const MaeModel& model, const std::string& prefix,
                     std::int64_t layers, std::int64_t heads);

std::vector<std::int64_t> visible_indices(const std::vector<std::uint8_t>& encoder_masked);
std::vector<std::int64_t> selected_indices(const std::vector<std::uint8_t>& decoder_selected);

// ViT encoder over the visible tokens only -> [N^e, dim].
TensorPtr encode_visible(Tape& tape, const TensorPtr& all_tokens,
                         const std::vector<std::int64_t>& visible, const MaeModel& model);

// Decoder over projected Z + [MASK] tokens at selected positions; returns
// predictions at the N^d selected positions only.
TensorPtr decode_selected(Tape& tape, const TensorPtr& z, const MaskSet& masks,
                          const MaeModel& model);

// Mean squared error over decoder-selected tokens; targets_all is [N, target_dim].
TensorPtr mae_loss(Tape& tape, const TensorPtr& pred, const TensorPtr& targets_all,
                   const MaskSet& masks);

struct PretrainItem {
    const VideoTensor* video = nullptr;
    MaskSet masks;
};

// frozen tokenizer required for FsqLatent targets
double pretrain_step(const std::vector<PretrainItem>& batch, MaeModel& model, Optimizer& opt,
                     double lr, const Tokenizer* frozen_tokenizer = nullptr);

// ---------------------------------------------------------------------------
// fine-tuning / evaluation
// ---------------------------------------------------------------------------

struct FinetuneConfig {
    enum class Head { MeanPool, ClassAttention } head = Head::ClassAttention;
    std::int64_t classes = 2;
    double drop_ratio = 0.0;  // tube-pattern token drop during fine-tuning
    double label_smoothing = 0.2;
};

// appends classifier parameters (head.*) to the model
void init_classifier(MaeModel& model, const FinetuneConfig& cfg, RngStream& rng);

// full forward to logits over the kept tokens
TensorPtr classify_tokens(Tape& tape, const TensorPtr& video, const MaeModel& model,
                          const FinetuneConfig& cfg, const std::vector<std::int64_t>& kept);

struct LabeledClip {
    const VideoTensor* video = nullptr;
    std::int64_t label = 0;
};

double finetune_step(const std::vector<LabeledClip>& batch, MaeModel& model,
                     const FinetuneConfig& cfg, Optimizer& opt, double lr, RngStream& rng);

// single forward, all tokens kept
std::vector<double> predict_logits(const VideoTensor& video, const MaeModel& model,
                                   const FinetuneConfig& cfg);

// evenly spaced temporal crops, per-crop logits averaged
std::vector<double> multi_crop_eval(const VideoTensor& video, const MaeModel& model,
                                    const FinetuneConfig& cfg, std::int64_t crop_len,
                                    std::int64_t n_crops);

}  // namespace lvmae
