#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lvmae/rng.hpp"

namespace lvmae {

// Raw video volume [3,F,H,W], pixels in [0,1].
struct VideoTensor {
    std::int64_t frames = 0, height = 0, width = 0;
    std::vector<double> data;

    VideoTensor() = default;
    VideoTensor(std::int64_t f, std::int64_t h, std::int64_t w)
        : frames(f), height(h), width(w), data(static_cast<std::size_t>(3 * f * h * w), 0.0) {}

    double& at(std::int64_t c, std::int64_t f, std::int64_t y, std::int64_t x) {
        return data[((c * frames + f) * height + y) * width + x];
    }
    double at(std::int64_t c, std::int64_t f, std::int64_t y, std::int64_t x) const {
        return data[((c * frames + f) * height + y) * width + x];
    }
};

// Normalized displacement field [2,T,H,W] in [-1,1]; frame 0 zero-filled.
struct FlowField {
    std::int64_t frames = 0, height = 0, width = 0;
    std::vector<double> data;

    FlowField() = default;
    FlowField(std::int64_t t, std::int64_t h, std::int64_t w)
        : frames(t), height(h), width(w), data(static_cast<std::size_t>(2 * t * h * w), 0.0) {}

    double& at(std::int64_t c, std::int64_t f, std::int64_t y, std::int64_t x) {
        return data[((c * frames + f) * height + y) * width + x];
    }
    double at(std::int64_t c, std::int64_t f, std::int64_t y, std::int64_t x) const {
        return data[((c * frames + f) * height + y) * width + x];
    }
};

struct PatchSpec {
    std::int64_t kt = 2, kh = 8, kw = 8;  // tubelet
    std::int64_t gt = 0, gh = 0, gw = 0;  // token grid
    std::int64_t tokens() const { return gt * gh * gw; }
};

PatchSpec patch_grid(std::int64_t frames, std::int64_t height, std::int64_t width, std::int64_t kt,
                     std::int64_t kh, std::int64_t kw);

// .rvid: magic RVID, version u32=1, F,H,W u32 LE, then F*H*W*3 bytes
// frame-major RGB (value = byte/255).
void save_rvid(const std::string& path, const VideoTensor& video);
VideoTensor load_rvid(const std::string& path);

// .rflo: magic RFLO, T,H,W u32 LE, then T*H*W*2 f32 LE in [-1,1].
void save_rflo(const std::string& path, const FlowField& flow);
FlowField load_rflo(const std::string& path);

// One binary P6 PPM per frame (maxval 255): <prefix>_NNNN.ppm in dir.
void export_ppm(const VideoTensor& video, const std::string& dir, const std::string& prefix);
// Overlay mode: pixels of unselected patches dimmed to 25% brightness.
void export_ppm_overlay(const VideoTensor& video, const PatchSpec& patch,
                        const std::vector<std::uint8_t>& selected, const std::string& dir,
                        const std::string& prefix);

struct SceneSpec {
    int sprites = 1;
    std::int64_t size_min = 6, size_max = 10;
    double vel_min = 1.0, vel_max = 3.0;  // pixels/frame, magnitude per axis
    enum class Background { Noise, Gradient } background = Background::Noise;
    std::uint64_t seed = 0;
    // forces every sprite's x-velocity sign; 0 = unconstrained (used for the
    // 2-class motion-direction task)
    int force_dx_sign = 0;
};

struct SpriteScene {
    VideoTensor video;
    FlowField flow;
    std::vector<std::uint8_t> motion_mask;  // per token of `patch`
    PatchSpec patch;
    std::vector<std::array<double, 2>> velocities;  // (vx, vy) per sprite
};

// Sprites translate with constant velocity, reflecting at borders. Flow holds
// exact per-pixel displacement / max(H,W) on sprite pixels; motion_mask marks
// tokens whose patch volume overlaps a sprite in any covered frame.
SpriteScene gen_moving_sprites(const SceneSpec& spec, std::int64_t frames, std::int64_t height,
                               std::int64_t width, std::int64_t kt, std::int64_t kh,
                               std::int64_t kw);

}  // namespace lvmae
