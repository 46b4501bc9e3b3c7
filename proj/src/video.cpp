#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "lvmae/video.hpp"

namespace lvmae {

namespace {
void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

PatchSpec patch_grid(std::int64_t frames, std::int64_t height, std::int64_t width, std::int64_t kt,
                     std::int64_t kh, std::int64_t kw) {
    if (kt <= 0 || kh <= 0 || kw <= 0) throw std::invalid_argument("patch_grid: bad tubelet");
    if (frames % kt != 0 || height % kh != 0 || width % kw != 0)
        throw std::invalid_argument("patch_grid: extents not divisible by tubelet");
    PatchSpec p;
    p.kt = kt;
    p.kh = kh;
    p.kw = kw;
    p.gt = frames / kt;
    p.gh = height / kh;
    p.gw = width / kw;
    return p;
}

void save_rvid(const std::string& path, const VideoTensor& video) {
    if (video.frames <= 0 || video.height <= 0 || video.width <= 0)
        throw std::invalid_argument("save_rvid: zero dims");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_rvid: cannot open " + path);
    os.write("RVID", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(video.frames));
    write_u32(os, static_cast<std::uint32_t>(video.height));
    write_u32(os, static_cast<std::uint32_t>(video.width));
    std::vector<unsigned char> buf(static_cast<std::size_t>(video.frames * video.height *
                                                            video.width * 3));
    std::size_t i = 0;
    for (std::int64_t f = 0; f < video.frames; ++f)
        for (std::int64_t y = 0; y < video.height; ++y)
            for (std::int64_t x = 0; x < video.width; ++x)
                for (std::int64_t c = 0; c < 3; ++c)
                    buf[i++] = static_cast<unsigned char>(
                        std::lround(std::clamp(video.at(c, f, y, x), 0.0, 1.0) * 255.0));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("save_rvid: write failed");
}

VideoTensor load_rvid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_rvid: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RVID", 4) != 0) throw std::runtime_error("load_rvid: bad magic");
    if (read_u32(is) != 1) throw std::runtime_error("load_rvid: unsupported version");
    const std::int64_t f = read_u32(is), h = read_u32(is), w = read_u32(is);
    if (f == 0 || h == 0 || w == 0) throw std::runtime_error("load_rvid: zero dims");
    std::vector<unsigned char> buf(static_cast<std::size_t>(f * h * w * 3));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("load_rvid: truncated payload");
    VideoTensor video(f, h, w);
    std::size_t i = 0;
    for (std::int64_t fr = 0; fr < f; ++fr)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                for (std::int64_t c = 0; c < 3; ++c)
                    video.at(c, fr, y, x) = static_cast<double>(buf[i++]) / 255.0;
    return video;
}

void save_rflo(const std::string& path, const FlowField& flow) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_rflo: cannot open " + path);
    os.write("RFLO", 4);
    write_u32(os, static_cast<std::uint32_t>(flow.frames));
    write_u32(os, static_cast<std::uint32_t>(flow.height));
    write_u32(os, static_cast<std::uint32_t>(flow.width));
    std::vector<float> buf(flow.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(flow.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) throw std::runtime_error("save_rflo: write failed");
}

FlowField load_rflo(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_rflo: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RFLO", 4) != 0) throw std::runtime_error("load_rflo: bad magic");
    const std::int64_t t = read_u32(is), h = read_u32(is), w = read_u32(is);
    FlowField flow(t, h, w);
    std::vector<float> buf(flow.data.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw std::runtime_error("load_rflo: truncated payload");
    for (std::size_t i = 0; i < buf.size(); ++i) flow.data[i] = static_cast<double>(buf[i]);
    return flow;
}

namespace {
void write_ppm_frame(const VideoTensor& video, std::int64_t f, const std::string& path,
                     const std::vector<double>* gain_per_pixel) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("export_ppm: cannot open " + path);
    os << "P6\n" << video.width << " " << video.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(video.width * 3));
    for (std::int64_t y = 0; y < video.height; ++y) {
        for (std::int64_t x = 0; x < video.width; ++x) {
            const double g = gain_per_pixel
                                 ? (*gain_per_pixel)[static_cast<std::size_t>(y * video.width + x)]
                                 : 1.0;
            for (std::int64_t c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x * 3 + c)] = static_cast<unsigned char>(
                    std::lround(std::clamp(video.at(c, f, y, x) * g, 0.0, 1.0) * 255.0));
        }
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("export_ppm: write failed");
}

std::string frame_path(const std::string& dir, const std::string& prefix, std::int64_t f) {
    char num[24];
    std::snprintf(num, sizeof(num), "%04lld", static_cast<long long>(f));
    return dir + "/" + prefix + "_" + num + ".ppm";
}
}  // namespace

void export_ppm(const VideoTensor& video, const std::string& dir, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    for (std::int64_t f = 0; f < video.frames; ++f)
        write_ppm_frame(video, f, frame_path(dir, prefix, f), nullptr);
}

void export_ppm_overlay(const VideoTensor& video, const PatchSpec& patch,
                        const std::vector<std::uint8_t>& selected, const std::string& dir,
                        const std::string& prefix) {
    if (static_cast<std::int64_t>(selected.size()) != patch.tokens())
        throw std::invalid_argument("export_ppm_overlay: selection size mismatch");
    std::filesystem::create_directories(dir);
    for (std::int64_t f = 0; f < video.frames; ++f) {
        const std::int64_t t = f / patch.kt;
        std::vector<double> gain(static_cast<std::size_t>(video.height * video.width), 0.25);
        for (std::int64_t y = 0; y < video.height; ++y)
            for (std::int64_t x = 0; x < video.width; ++x) {
                const std::int64_t tok =
                    (t * patch.gh + y / patch.kh) * patch.gw + x / patch.kw;
                if (selected[static_cast<std::size_t>(tok)])
                    gain[static_cast<std::size_t>(y * video.width + x)] = 1.0;
            }
        write_ppm_frame(video, f, frame_path(dir, prefix, f), &gain);
    }
}

SpriteScene gen_moving_sprites(const SceneSpec& spec, std::int64_t frames, std::int64_t height,
                               std::int64_t width, std::int64_t kt, std::int64_t kh,
                               std::int64_t kw) {
    if (spec.size_max >= height || spec.size_max >= width)
        throw std::invalid_argument("gen_moving_sprites: sprite larger than frame");
    SpriteScene scene;
    scene.patch = patch_grid(frames, height, width, kt, kh, kw);
    scene.video = VideoTensor(frames, height, width);
    scene.flow = FlowField(frames, height, width);
    scene.motion_mask.assign(static_cast<std::size_t>(scene.patch.tokens()), 0);

    RngStream rng(spec.seed);
    auto bg_rng = rng.split("background");

    // background
    if (spec.background == SceneSpec::Background::Noise) {
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const double v = 0.2 + 0.2 * bg_rng.uniform();
                for (std::int64_t c = 0; c < 3; ++c)
                    for (std::int64_t f = 0; f < frames; ++f) scene.video.at(c, f, y, x) = v;
            }
    } else {
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const double v = 0.15 + 0.3 * static_cast<double>(x + y) /
                                            static_cast<double>(width + height);
                for (std::int64_t c = 0; c < 3; ++c)
                    for (std::int64_t f = 0; f < frames; ++f) scene.video.at(c, f, y, x) = v;
            }
    }

    // reflective bounce keeping [lo, hi] in-bounds
    auto reflect = [](double p, double lo, double hi) {
        const double range = hi - lo;
        if (range <= 0.0) return lo;
        double q = std::fmod(p - lo, 2.0 * range);
        if (q < 0.0) q += 2.0 * range;
        return lo + (q <= range ? q : 2.0 * range - q);
    };

    const double norm = static_cast<double>(std::max(height, width));

    for (int s = 0; s < spec.sprites; ++s) {
        auto srng = rng.split("sprite").split(static_cast<std::uint64_t>(s));
        const std::int64_t size =
            spec.size_min +
            static_cast<std::int64_t>(srng.below(static_cast<std::uint64_t>(
                spec.size_max - spec.size_min + 1)));
        const double x0 = srng.uniform(0.0, static_cast<double>(width - size));
        const double y0 = srng.uniform(0.0, static_cast<double>(height - size));
        double vx = srng.uniform(spec.vel_min, spec.vel_max) * (srng.uniform() < 0.5 ? -1.0 : 1.0);
        double vy = srng.uniform(spec.vel_min, spec.vel_max) * (srng.uniform() < 0.5 ? -1.0 : 1.0);
        if (spec.force_dx_sign != 0) vx = std::fabs(vx) * static_cast<double>(spec.force_dx_sign);
        scene.velocities.push_back({vx, vy});
        const double color[3] = {0.6 + 0.4 * srng.uniform(), 0.6 + 0.4 * srng.uniform(),
                                 0.6 + 0.4 * srng.uniform()};

        double px = x0, py = y0, prev_px = x0, prev_py = y0;
        for (std::int64_t f = 0; f < frames; ++f) {
            if (f > 0) {
                prev_px = px;
                prev_py = py;
                px = reflect(x0 + vx * static_cast<double>(f), 0.0,
                             static_cast<double>(width - size));
                py = reflect(y0 + vy * static_cast<double>(f), 0.0,
                             static_cast<double>(height - size));
            }
            const std::int64_t ix = static_cast<std::int64_t>(std::lround(px));
            const std::int64_t iy = static_cast<std::int64_t>(std::lround(py));
            const double dx = (f == 0) ? 0.0 : (px - prev_px) / norm;
            const double dy = (f == 0) ? 0.0 : (py - prev_py) / norm;
            for (std::int64_t y = iy; y < iy + size; ++y)
                for (std::int64_t x = ix; x < ix + size; ++x) {
                    for (std::int64_t c = 0; c < 3; ++c) scene.video.at(c, f, y, x) = color[c];
                    if (f > 0) {
                        scene.flow.at(0, f, y, x) = dx;
                        scene.flow.at(1, f, y, x) = dy;
                    }
                    const std::int64_t tok = ((f / kt) * scene.patch.gh + y / kh) * scene.patch.gw +
                                             x / kw;
                    scene.motion_mask[static_cast<std::size_t>(tok)] = 1;
                }
        }
    }
    return scene;
}

}  // namespace lvmae
