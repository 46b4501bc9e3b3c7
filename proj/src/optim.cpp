#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "lvmae/optim.hpp"

namespace lvmae {

TensorPtr init_trunc_normal(Shape shape, double stddev, RngStream& rng) {
    auto t = make_tensor(std::move(shape));
    for (auto& v : t->data) v = rng.trunc_normal(stddev);
    return t;
}

void adam_update(Tensor& param, AdamState& state, const AdamConfig& cfg, double lr) {
    if (lr < 0.0) throw std::invalid_argument("adam: negative learning rate");
    if (param.grad.size() != param.data.size())
        throw std::invalid_argument("adam: gradient missing or shape mismatch");
    if (state.m.size() != param.data.size() || state.v.size() != param.data.size())
        throw std::invalid_argument("adam: moment shape mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        const double g = param.grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param.data[i]);
    }
}

double lr_at(std::int64_t step, const LrSchedule& s) {
    if (step < 0 || step > s.total_steps) throw std::invalid_argument("lr_at: step out of range");
    if (s.warmup_steps >= s.total_steps) throw std::invalid_argument("lr_at: warmup >= total");
    if (step < s.warmup_steps)
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    const double progress = static_cast<double>(step - s.warmup_steps) /
                            static_cast<double>(s.total_steps - s.warmup_steps);
    return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(3.141592653589793 * progress));
}

namespace {
constexpr char kMagic[4] = {'L', 'V', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
void write_f64(std::ostream& os, const double* p, std::size_t n) {
    // assumes little-endian host; asserted at startup of the test suite
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(params.items.size()));
    for (const auto& [name, t] : params.items) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(t->shape.size()));
        for (auto d : t->shape) write_u32(os, static_cast<std::uint32_t>(d));
        write_f64(os, t->data.data(), t->data.size());
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    if (read_u32(is) != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    const std::uint32_t count = read_u32(is);
    ParamStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = read_u32(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::int64_t>(read_u32(is));
        auto t = make_tensor(shape);
        is.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated payload");
        store.add(name, t);
    }
    return store;
}

void save_optimizer_state(const std::string& path, const Optimizer& opt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("optimizer state: cannot open for write: " + path);
    os.write("LVMO", 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(opt.states().size()));
    for (const auto& [name, st] : opt.states()) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(st.t));
        write_u32(os, static_cast<std::uint32_t>(st.m.size()));
        write_f64(os, st.m.data(), st.m.size());
        write_f64(os, st.v.data(), st.v.size());
    }
    if (!os) throw std::runtime_error("optimizer state: write failed: " + path);
}

void load_optimizer_state(const std::string& path, Optimizer& opt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("optimizer state: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LVMO", 4) != 0)
        throw std::runtime_error("optimizer state: bad magic");
    if (read_u32(is) != kVersion) throw std::runtime_error("optimizer state: unsupported version");
    const std::uint32_t count = read_u32(is);
    opt.states().clear();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        AdamState st;
        st.t = static_cast<std::int64_t>(read_u32(is));
        const std::uint32_t n = read_u32(is);
        st.m.resize(n);
        st.v.resize(n);
        is.read(reinterpret_cast<char*>(st.m.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        is.read(reinterpret_cast<char*>(st.v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw std::runtime_error("optimizer state: truncated payload");
        opt.states()[name] = std::move(st);
    }
}

}  // namespace lvmae
