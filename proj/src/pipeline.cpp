#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lvmae/cost.hpp"
#include "lvmae/mae.hpp"
#include "lvmae/masking.hpp"
#include "lvmae/pipeline.hpp"
#include "lvmae/tokenizer.hpp"
#include "lvmae/video.hpp"

namespace fs = std::filesystem;

namespace lvmae {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

Json ExperimentConfig::defaults() {
    return Json{
        {"stage", "pretrain"},
        {"seed", 0},
        {"data_dir", ""},
        {"output_dir", "out"},
        {"checkpoint_in", ""},
        {"checkpoint_out", ""},
        {"tokenizer_checkpoint", ""},
        {"start_step", 0},
        {"geometry", {{"frames", 16}, {"height", 64}, {"width", 64},
                      {"kt", 2}, {"kh", 8}, {"kw", 8}}},
        {"budget", {{"rho_e", 0.9}, {"rho_d", 0.9}, {"rho_r", 0.05}}},
        {"strategy", "adaptive"},
        {"uniform_step", 7},
        {"targets", "rgb"},
        {"saliency", "auto"},
        {"schedule", {{"steps", 200}, {"warmup_steps", 20},
                      {"peak_lr", 1.5e-4}, {"min_lr", 0.0}}},
        {"optimizer", {{"beta1", 0.9}, {"beta2", 0.95}, {"eps", 1e-8},
                       {"weight_decay", 0.05}}},
        {"batch_size", 2},
        {"checkpoint_every", 100},
        {"dump_masks", false},
        {"model", {{"dim", 64}, {"enc_layers", 4}, {"enc_heads", 4}, {"enc_mlp", 256},
                   {"dec_dim", 32}, {"dec_layers", 2}, {"dec_heads", 4}, {"dec_mlp", 128}}},
        {"tokenizer", {{"base_channels", 16}, {"scorer_channels", 32}, {"window", 16},
                       {"temporal_down", 2}, {"spatial_down", 8},
                       {"train_topk_fraction", 0.375}, {"infer_keep_fraction", 0.15},
                       {"keep_all_additive", true}}},
        {"finetune", {{"classes", 2}, {"head", "class_attention"}, {"drop_ratio", 0.0},
                      {"label_smoothing", 0.2}}},
        {"eval", {{"crop_len", 16}, {"n_crops", 1}}},
        {"cost", {{"frames", Json::array({16, 32, 64, 128})},
                  {"rho_d", Json::array({0.0, 0.5, 0.85, 0.9})},
                  {"arch", {{"enc_layers", 12}, {"enc_dim", 768}, {"enc_heads", 12},
                            {"enc_mlp", 3072}, {"dec_layers", 4}, {"dec_dim", 384},
                            {"dec_heads", 4}, {"dec_mlp", 1536},
                            {"bytes_per_activation", 4}, {"batch", 1}}}}},
        {"data", {{"count_train", 8}, {"count_val", 8}, {"write_flow", true}}},
        {"scene", {{"sprites", 1}, {"size_min", 6}, {"size_max", 10},
                   {"vel_min", 1.0}, {"vel_max", 3.0}, {"background", "noise"},
                   {"force_dx_sign", 0}}},
    };
}

namespace {

void merge_checked(Json& base, const Json& user, const std::string& prefix) {
    if (!user.is_object()) config_error("bad_config", "config section is not an object: " + prefix);
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        auto slot = base.find(it.key());
        if (slot == base.end()) config_error("bad_config", "unknown config key: " + path);
        if (slot->is_object() && it.value().is_object())
            merge_checked(*slot, it.value(), path);
        else
            *slot = it.value();
    }
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string git_describe() {
    std::string out = "unknown";
    if (FILE* p = ::popen("git describe --always --dirty 2>/dev/null", "r")) {
        char buf[256];
        if (std::fgets(buf, sizeof buf, p)) {
            out = buf;
            while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
        }
        ::pclose(p);
        if (out.empty()) out = "unknown";
    }
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

std::string require_path(const ExperimentConfig& cfg, const std::string& key) {
    const std::string p = cfg.j.at(key).get<std::string>();
    if (p.empty()) config_error("bad_config", "required path is empty: " + key);
    return p;
}

std::string require_input_file(const ExperimentConfig& cfg, const std::string& key) {
    const std::string p = require_path(cfg, key);
    if (!fs::exists(p)) config_error("missing_file", key + " does not exist: " + p);
    return p;
}

PatchSpec geometry_grid(const ExperimentConfig& cfg) {
    const auto& g = cfg.j.at("geometry");
    try {
        return patch_grid(g.at("frames").get<std::int64_t>(), g.at("height").get<std::int64_t>(),
                          g.at("width").get<std::int64_t>(), g.at("kt").get<std::int64_t>(),
                          g.at("kh").get<std::int64_t>(), g.at("kw").get<std::int64_t>());
    } catch (const std::exception& e) {
        config_error("bad_geometry", e.what());
    }
}

BudgetSpec budget_of(const ExperimentConfig& cfg) {
    const auto& b = cfg.j.at("budget");
    BudgetSpec out;
    out.rho_e = b.at("rho_e").get<double>();
    out.rho_d = b.at("rho_d").get<double>();
    out.rho_r = b.at("rho_r").get<double>();
    if (out.rho_e < 0 || out.rho_e >= 1 || out.rho_d < 0 || out.rho_d > 1 || out.rho_r < 0 ||
        out.rho_r > 1)
        config_error("bad_config", "budget ratios out of range");
    return out;
}

LrSchedule schedule_of(const ExperimentConfig& cfg) {
    const auto& s = cfg.j.at("schedule");
    LrSchedule out;
    out.peak_lr = s.at("peak_lr").get<double>();
    out.warmup_steps = s.at("warmup_steps").get<std::int64_t>();
    out.total_steps = s.at("steps").get<std::int64_t>();
    out.min_lr = s.at("min_lr").get<double>();
    if (out.total_steps <= 0) config_error("bad_config", "schedule.steps must be positive");
    if (out.warmup_steps < 0 || out.warmup_steps >= out.total_steps)
        config_error("bad_config", "schedule.warmup_steps must be in [0, steps)");
    return out;
}

AdamConfig adam_of(const ExperimentConfig& cfg) {
    const auto& o = cfg.j.at("optimizer");
    AdamConfig a;
    a.beta1 = o.at("beta1").get<double>();
    a.beta2 = o.at("beta2").get<double>();
    a.eps = o.at("eps").get<double>();
    a.weight_decay = o.at("weight_decay").get<double>();
    return a;
}

MaeConfig mae_config_of(const ExperimentConfig& cfg) {
    const auto& m = cfg.j.at("model");
    const auto& g = cfg.j.at("geometry");
    MaeConfig mc;
    mc.dim = m.at("dim").get<std::int64_t>();
    mc.enc_layers = m.at("enc_layers").get<std::int64_t>();
    mc.enc_heads = m.at("enc_heads").get<std::int64_t>();
    mc.enc_mlp = m.at("enc_mlp").get<std::int64_t>();
    mc.dec_dim = m.at("dec_dim").get<std::int64_t>();
    mc.dec_layers = m.at("dec_layers").get<std::int64_t>();
    mc.dec_heads = m.at("dec_heads").get<std::int64_t>();
    mc.dec_mlp = m.at("dec_mlp").get<std::int64_t>();
    mc.kt = g.at("kt").get<std::int64_t>();
    mc.kh = g.at("kh").get<std::int64_t>();
    mc.kw = g.at("kw").get<std::int64_t>();
    const std::string targets = cfg.j.at("targets").get<std::string>();
    if (targets == "rgb")
        mc.target = MaeConfig::Target::Rgb;
    else if (targets == "fsq")
        mc.target = MaeConfig::Target::FsqLatent;
    else
        config_error("bad_config", "targets must be rgb or fsq, got: " + targets);
    return mc;
}

TokenizerConfig tokenizer_config_of(const ExperimentConfig& cfg) {
    const auto& t = cfg.j.at("tokenizer");
    TokenizerConfig tc;
    tc.base_channels = t.at("base_channels").get<std::int64_t>();
    tc.scorer_channels = t.at("scorer_channels").get<std::int64_t>();
    tc.window = t.at("window").get<std::int64_t>();
    tc.temporal_down = t.at("temporal_down").get<std::int64_t>();
    tc.spatial_down = t.at("spatial_down").get<std::int64_t>();
    tc.train_topk_fraction = t.at("train_topk_fraction").get<double>();
    tc.infer_keep_fraction = t.at("infer_keep_fraction").get<double>();
    tc.keep_all_additive = t.at("keep_all_additive").get<bool>();
    return tc;
}

FinetuneConfig finetune_config_of(const ExperimentConfig& cfg) {
    const auto& f = cfg.j.at("finetune");
    FinetuneConfig fc;
    fc.classes = f.at("classes").get<std::int64_t>();
    fc.drop_ratio = f.at("drop_ratio").get<double>();
    fc.label_smoothing = f.at("label_smoothing").get<double>();
    const std::string head = f.at("head").get<std::string>();
    if (head == "mean_pool")
        fc.head = FinetuneConfig::Head::MeanPool;
    else if (head == "class_attention")
        fc.head = FinetuneConfig::Head::ClassAttention;
    else
        config_error("bad_config", "finetune.head must be mean_pool or class_attention");
    if (fc.classes < 2) config_error("bad_config", "finetune.classes must be >= 2");
    return fc;
}

std::string out_dir(const ExperimentConfig& cfg) {
    const std::string d = require_path(cfg, "output_dir");
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) runtime_error_code("io_error", "cannot create output_dir: " + d);
    return d;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) runtime_error_code("io_error", "cannot open for write: " + path);
    return os;
}

// fixed formatting so metrics files are byte-identical across runs
std::string fmt_metric(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

RunManifest make_manifest(const ExperimentConfig& cfg, const std::string& stage,
                          std::vector<std::string> outputs, const Timer& timer,
                          const std::string& dir) {
    RunManifest m;
    m.stage = stage;
    m.config_hash = cfg.config_hash();
    m.git_describe = git_describe();
    m.seed = cfg.seed();
    const std::string manifest_path = dir + "/manifest.json";
    outputs.push_back(manifest_path);
    std::sort(outputs.begin(), outputs.end());
    m.outputs = std::move(outputs);
    m.wall_clock_ms = timer.ms();
    m.write(manifest_path);
    return m;
}

// first `frames` frames starting at `start`
VideoTensor temporal_crop(const VideoTensor& v, std::int64_t start, std::int64_t frames) {
    if (start < 0 || start + frames > v.frames)
        runtime_error_code("bad_crop", "temporal crop out of range");
    VideoTensor out(frames, v.height, v.width);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t f = 0; f < frames; ++f)
            for (std::int64_t y = 0; y < v.height; ++y)
                for (std::int64_t x = 0; x < v.width; ++x)
                    out.at(c, f, y, x) = v.at(c, start + f, y, x);
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& user) {
    ExperimentConfig cfg;
    cfg.j = defaults();
    merge_checked(cfg.j, user, "");
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) config_error("missing_file", "cannot open config: " + path);
    Json user;
    try {
        user = Json::parse(is);
    } catch (const std::exception& e) {
        config_error("bad_config", std::string("config is not valid JSON: ") + e.what());
    }
    return from_json(user);
}

void ExperimentConfig::set_override(const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos || eq == 0)
        config_error("bad_override", "--set expects key=value, got: " + key_eq_value);
    const std::string key = key_eq_value.substr(0, eq);
    const std::string raw = key_eq_value.substr(eq + 1);
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings

    Json* node = &j;
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        auto it = node->find(part);
        if (it == node->end()) config_error("bad_override", "unknown config key: " + key);
        if (dot == std::string::npos) {
            *it = value;
            break;
        }
        node = &*it;
        pos = dot + 1;
    }
    validate();
}

std::string ExperimentConfig::canonical() const {
    // nlohmann::json keeps object keys sorted, so dump() is canonical
    return j.dump(2) + "\n";
}

std::string ExperimentConfig::config_hash() const { return fnv1a_hex(canonical()); }

void ExperimentConfig::validate() const {
    static const std::vector<std::string> kStages = {
        "gen-data", "train-tokenizer", "pretrain", "finetune", "eval", "masks", "cost", "viz"};
    const std::string stage = j.at("stage").get<std::string>();
    if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end())
        config_error("bad_stage", "unknown stage: " + stage);
    static const std::vector<std::string> kStrategies = {"none", "random", "uniform", "flow",
                                                         "adaptive"};
    const std::string strategy = j.at("strategy").get<std::string>();
    if (std::find(kStrategies.begin(), kStrategies.end(), strategy) == kStrategies.end())
        config_error("bad_strategy", "unknown strategy: " + strategy);
    const std::string targets = j.at("targets").get<std::string>();
    if (targets != "rgb" && targets != "fsq")
        config_error("bad_config", "targets must be rgb or fsq");
    if (j.at("batch_size").get<std::int64_t>() < 1)
        config_error("bad_config", "batch_size must be >= 1");
}

std::uint64_t ExperimentConfig::seed() const {
    if (const char* env = std::getenv("LVMAE_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') config_error("bad_seed", "LVMAE_SEED is not an integer");
        return static_cast<std::uint64_t>(v);
    }
    return j.at("seed").get<std::uint64_t>();
}

void RunManifest::write(const std::string& path) const {
    Json m{{"stage", stage},
           {"config_hash", config_hash},
           {"git_describe", git_describe},
           {"seed", seed},
           {"outputs", outputs},
           {"wall_clock_ms", wall_clock_ms}};
    auto os = open_out(path);
    os << m.dump(2) << "\n";
}

std::vector<DatasetItem> scan_dataset(const std::string& dir, bool require_labels) {
    if (!fs::is_directory(dir)) config_error("missing_file", "data dir does not exist: " + dir);
    std::map<std::string, std::int64_t> labels;
    const std::string labels_path = dir + "/labels.csv";
    if (fs::exists(labels_path)) {
        std::ifstream is(labels_path);
        std::string line;
        std::getline(is, line);  // header
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos)
                config_error("bad_config", "malformed labels.csv row: " + line);
            labels[line.substr(0, comma)] = std::stoll(line.substr(comma + 1));
        }
    } else if (require_labels) {
        config_error("missing_file", "labels.csv required but missing in " + dir);
    }

    std::vector<DatasetItem> items;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".rvid") continue;
        DatasetItem item;
        item.rvid = entry.path().string();
        const fs::path flo = fs::path(item.rvid).replace_extension(".rflo");
        if (fs::exists(flo)) item.rflo = flo.string();
        const std::string name = entry.path().filename().string();
        auto it = labels.find(name);
        if (it != labels.end()) item.label = it->second;
        else if (require_labels)
            config_error("bad_config", "no label for " + name);
        items.push_back(std::move(item));
    }
    std::sort(items.begin(), items.end(),
              [](const DatasetItem& a, const DatasetItem& b) { return a.rvid < b.rvid; });
    if (items.empty()) config_error("missing_file", "no .rvid files in " + dir);
    return items;
}

std::int64_t load_matching(ParamStore& dst, const ParamStore& src) {
    std::int64_t copied = 0;
    for (const auto& [name, t] : src.items) {
        auto it = dst.items.find(name);
        if (it == dst.items.end() || it->second->shape != t->shape) continue;
        it->second->data = t->data;
        ++copied;
    }
    return copied;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

RunManifest run_gen_data(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string root = require_path(cfg, "data_dir");
    const auto& g = cfg.j.at("geometry");
    const std::int64_t frames = g.at("frames").get<std::int64_t>();
    const std::int64_t height = g.at("height").get<std::int64_t>();
    const std::int64_t width = g.at("width").get<std::int64_t>();
    const std::int64_t kt = g.at("kt").get<std::int64_t>();
    const std::int64_t kh = g.at("kh").get<std::int64_t>();
    const std::int64_t kw = g.at("kw").get<std::int64_t>();
    geometry_grid(cfg);  // validates divisibility

    const auto& sc = cfg.j.at("scene");
    SceneSpec base;
    base.sprites = sc.at("sprites").get<int>();
    base.size_min = sc.at("size_min").get<std::int64_t>();
    base.size_max = sc.at("size_max").get<std::int64_t>();
    base.vel_min = sc.at("vel_min").get<double>();
    base.vel_max = sc.at("vel_max").get<double>();
    const std::string bg = sc.at("background").get<std::string>();
    if (bg == "noise")
        base.background = SceneSpec::Background::Noise;
    else if (bg == "gradient")
        base.background = SceneSpec::Background::Gradient;
    else
        config_error("bad_config", "scene.background must be noise or gradient");
    base.force_dx_sign = sc.at("force_dx_sign").get<int>();

    const bool write_flow = cfg.j.at("data").at("write_flow").get<bool>();
    RngStream root_rng(cfg.seed());
    std::vector<std::string> outputs;

    for (const std::string split : {"train", "val"}) {
        const std::int64_t count =
            cfg.j.at("data").at(split == "train" ? "count_train" : "count_val")
                .get<std::int64_t>();
        if (count <= 0) config_error("bad_config", "data counts must be positive");
        const std::string dir = root + "/" + split;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) runtime_error_code("io_error", "cannot create " + dir);

        std::ostringstream labels;
        labels << "filename,label\n";
        RngStream split_rng = root_rng.split(split);
        for (std::int64_t i = 0; i < count; ++i) {
            SceneSpec spec = base;
            spec.seed = split_rng.split(static_cast<std::uint64_t>(i)).next_u64();
            // alternate motion direction when the config does not pin it; the
            // 2-class label is the sign of the x velocity
            if (spec.force_dx_sign == 0 && spec.sprites > 0)
                spec.force_dx_sign = (i % 2 == 0) ? 1 : -1;
            const SpriteScene scene = gen_moving_sprites(spec, frames, height, width, kt, kh, kw);
            std::ostringstream stem;
            stem << "clip_" << std::setw(4) << std::setfill('0') << i;
            const std::string rvid = dir + "/" + stem.str() + ".rvid";
            save_rvid(rvid, scene.video);
            outputs.push_back(rvid);
            if (write_flow) {
                const std::string rflo = dir + "/" + stem.str() + ".rflo";
                save_rflo(rflo, scene.flow);
                outputs.push_back(rflo);
            }
            const int label = spec.sprites > 0 && spec.force_dx_sign > 0 ? 1 : 0;
            labels << stem.str() << ".rvid," << label << "\n";
        }
        const std::string labels_path = dir + "/labels.csv";
        open_out(labels_path) << labels.str();
        outputs.push_back(labels_path);
    }
    return make_manifest(cfg, "gen-data", std::move(outputs), timer, out_dir(cfg));
}

// ---------------------------------------------------------------------------
// train-tokenizer
// ---------------------------------------------------------------------------

RunManifest run_train_tokenizer(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    const auto items = scan_dataset(require_path(cfg, "data_dir") + "/train", false);
    std::vector<VideoTensor> videos;
    videos.reserve(items.size());
    for (const auto& it : items) videos.push_back(load_rvid(it.rvid));

    RngStream rng(cfg.seed());
    RngStream init_rng = rng.split("tokenizer-init");
    Tokenizer tok = Tokenizer::init(tokenizer_config_of(cfg), init_rng);
    Optimizer opt(adam_of(cfg));
    const LrSchedule sched = schedule_of(cfg);
    const std::int64_t batch = cfg.j.at("batch_size").get<std::int64_t>();

    std::ostringstream csv;
    csv << "step,loss,lr\n";
    for (std::int64_t step = 0; step < sched.total_steps; ++step) {
        std::vector<const VideoTensor*> b;
        for (std::int64_t i = 0; i < batch; ++i)
            b.push_back(&videos[static_cast<std::size_t>((step * batch + i) %
                                                         static_cast<std::int64_t>(videos.size()))]);
        const double lr = lr_at(step, sched);
        const double loss = tokenizer_train_step(b, tok, opt, lr);
        csv << step << ',' << fmt_metric(loss) << ',' << fmt_metric(lr) << '\n';
    }

    const std::string metrics_path = dir + "/metrics.csv";
    open_out(metrics_path) << csv.str();
    std::string ckpt = cfg.j.at("checkpoint_out").get<std::string>();
    if (ckpt.empty()) ckpt = dir + "/tokenizer.lvmt";
    save_checkpoint(ckpt, tok.params);
    return make_manifest(cfg, "train-tokenizer", {metrics_path, ckpt}, timer, dir);
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

namespace {

struct LoadedData {
    std::vector<VideoTensor> videos;
    std::vector<FlowField> flows;       // empty entries when absent
    std::vector<std::int64_t> labels;
};

LoadedData load_split(const std::string& dir, bool require_labels) {
    LoadedData out;
    for (const auto& it : scan_dataset(dir, require_labels)) {
        out.videos.push_back(load_rvid(it.rvid));
        out.flows.push_back(it.rflo.empty() ? FlowField() : load_rflo(it.rflo));
        out.labels.push_back(it.label);
    }
    return out;
}

// decoder-mask builder shared by pretrain / masks / viz. `importance` is the
// scorer saliency when available (tokenizer-grid == MAE-grid at desk scale).
MaskSet build_masks(const ExperimentConfig& cfg, const PatchSpec& patch, const BudgetSpec& budget,
                    const FlowField* flow, const SaliencyMap* importance, RngStream& enc_rng,
                    RngStream& dec_rng) {
    const TokenGrid grid{patch.gt, patch.gh, patch.gw};
    const auto enc = make_tube_mask(grid, budget.rho_e, enc_rng);
    const std::string strategy = cfg.j.at("strategy").get<std::string>();
    if (strategy == "none") return decoder_none(grid, enc);
    if (strategy == "random")
        return decoder_random(grid, enc, (1.0 - budget.rho_d) + budget.rho_r, dec_rng);
    if (strategy == "uniform")
        return decoder_uniform(grid, enc, cfg.j.at("uniform_step").get<std::int64_t>());
    // flow / adaptive need a saliency map
    const std::string sal_kind = cfg.j.at("saliency").get<std::string>();
    const SaliencyMap* sal = nullptr;
    SaliencyMap flow_sal;
    const bool want_scorer = strategy == "adaptive" && sal_kind != "flow" && importance != nullptr;
    if (want_scorer) {
        sal = importance;
    } else {
        if (flow == nullptr || flow->frames == 0)
            config_error("missing_file", "strategy " + strategy + " needs .rflo flow files");
        flow_sal = flow_saliency(*flow, patch);
        sal = &flow_sal;
    }
    if (sal->grid.count() != grid.count())
        runtime_error_code("bad_grid", "saliency grid does not match token grid");
    return decoder_adaptive(grid, enc, *sal, budget.rho_d, budget.rho_r, dec_rng);
}

}  // namespace

RunManifest run_pretrain(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    const PatchSpec patch = geometry_grid(cfg);
    const BudgetSpec budget = budget_of(cfg);
    const LrSchedule sched = schedule_of(cfg);
    const std::int64_t batch = cfg.j.at("batch_size").get<std::int64_t>();
    const std::int64_t start_step = cfg.j.at("start_step").get<std::int64_t>();
    const bool dump_masks = cfg.j.at("dump_masks").get<bool>();
    LoadedData data = load_split(require_path(cfg, "data_dir") + "/train", false);
    const auto n_videos = static_cast<std::int64_t>(data.videos.size());

    RngStream rng(cfg.seed());
    RngStream init_rng = rng.split("mae-init");
    MaeModel model = MaeModel::init(mae_config_of(cfg), init_rng);
    Optimizer opt(adam_of(cfg));

    // frozen tokenizer, needed for FSQ targets and for scorer saliency
    Tokenizer tok = Tokenizer::init(tokenizer_config_of(cfg), init_rng);
    const Tokenizer* tok_ptr = nullptr;
    const std::string tok_ckpt = cfg.j.at("tokenizer_checkpoint").get<std::string>();
    if (!tok_ckpt.empty()) {
        if (!fs::exists(tok_ckpt))
            config_error("missing_checkpoint", "tokenizer checkpoint not found: " + tok_ckpt);
        if (load_matching(tok.params, load_checkpoint(tok_ckpt)) == 0)
            config_error("bad_checkpoint", "tokenizer checkpoint matches no parameters");
        tok_ptr = &tok;
    }
    if (model.cfg.target == MaeConfig::Target::FsqLatent && tok_ptr == nullptr)
        config_error("missing_checkpoint", "targets=fsq requires tokenizer_checkpoint");

    if (start_step > 0) {
        const std::string ckpt_in = require_input_file(cfg, "checkpoint_in");
        if (load_matching(model.params, load_checkpoint(ckpt_in)) == 0)
            config_error("bad_checkpoint", "checkpoint matches no parameters");
        const std::string opt_in = ckpt_in + ".opt";
        if (!fs::exists(opt_in))
            config_error("missing_checkpoint", "optimizer state not found: " + opt_in);
        load_optimizer_state(opt_in, opt);
    }

    // scorer saliency is static per video under a frozen tokenizer: cache it
    std::vector<SaliencyMap> scorer_sal(data.videos.size());
    const std::string strategy = cfg.j.at("strategy").get<std::string>();
    const std::string sal_kind = cfg.j.at("saliency").get<std::string>();
    if (strategy == "adaptive" && tok_ptr != nullptr && sal_kind != "flow") {
        for (std::size_t v = 0; v < data.videos.size(); ++v) {
            const auto t = tokenize_long_video(data.videos[v], tok);
            scorer_sal[v] = normalize_saliency(TokenGrid{t.importance.dt, t.importance.dh,
                                                         t.importance.dw},
                                               t.importance.scores);
        }
    }

    std::vector<std::string> outputs;
    std::ostringstream csv;
    csv << "step,loss,lr\n";
    const std::int64_t ckpt_every = cfg.j.at("checkpoint_every").get<std::int64_t>();
    std::string final_ckpt = cfg.j.at("checkpoint_out").get<std::string>();
    if (final_ckpt.empty()) final_ckpt = dir + "/model.lvmt";

    for (std::int64_t step = start_step; step < sched.total_steps; ++step) {
        std::vector<PretrainItem> items;
        for (std::int64_t i = 0; i < batch; ++i) {
            const auto v = static_cast<std::size_t>((step * batch + i) % n_videos);
            PretrainItem item;
            item.video = &data.videos[v];
            // the encoder-mask stream does not depend on the strategy, so two
            // strategies under one seed share identical encoder masks
            RngStream enc_rng = rng.split("mask-tube").split(static_cast<std::uint64_t>(step))
                                    .split(static_cast<std::uint64_t>(i));
            RngStream dec_rng = rng.split("mask-dec").split(static_cast<std::uint64_t>(step))
                                    .split(static_cast<std::uint64_t>(i));
            const SaliencyMap* imp = scorer_sal[v].s.empty() ? nullptr : &scorer_sal[v];
            item.masks = build_masks(cfg, patch, budget, &data.flows[v], imp, enc_rng, dec_rng);
            if (dump_masks) {
                std::ostringstream name;
                name << dir << "/masks/step_" << std::setw(5) << std::setfill('0') << step
                     << "_item_" << i << ".lvmk";
                fs::create_directories(dir + "/masks");
                save_mask_dump(name.str(), item.masks, budget);
                outputs.push_back(name.str());
            }
            items.push_back(std::move(item));
        }
        const double lr = lr_at(step, sched);
        const double loss = pretrain_step(items, model, opt, lr, tok_ptr);
        csv << step << ',' << fmt_metric(loss) << ',' << fmt_metric(lr) << '\n';
        if (ckpt_every > 0 && (step + 1) % ckpt_every == 0 && step + 1 < sched.total_steps) {
            std::ostringstream name;
            name << dir << "/ckpt_step_" << std::setw(5) << std::setfill('0') << (step + 1)
                 << ".lvmt";
            save_checkpoint(name.str(), model.params);
            save_optimizer_state(name.str() + ".opt", opt);
            outputs.push_back(name.str());
            outputs.push_back(name.str() + ".opt");
        }
    }

    const std::string metrics_path = dir + "/metrics.csv";
    open_out(metrics_path) << csv.str();
    save_checkpoint(final_ckpt, model.params);
    save_optimizer_state(final_ckpt + ".opt", opt);
    outputs.insert(outputs.end(), {metrics_path, final_ckpt, final_ckpt + ".opt"});
    return make_manifest(cfg, "pretrain", std::move(outputs), timer, dir);
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

RunManifest run_finetune(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    const PatchSpec patch = geometry_grid(cfg);
    const LrSchedule sched = schedule_of(cfg);
    const std::int64_t batch = cfg.j.at("batch_size").get<std::int64_t>();
    const std::int64_t frames = cfg.j.at("geometry").at("frames").get<std::int64_t>();
    (void)patch;
    LoadedData data = load_split(require_path(cfg, "data_dir") + "/train", true);
    const auto n_videos = static_cast<std::int64_t>(data.videos.size());

    RngStream rng(cfg.seed());
    RngStream init_rng = rng.split("mae-init");
    MaeModel model = MaeModel::init(mae_config_of(cfg), init_rng);
    const FinetuneConfig fc = finetune_config_of(cfg);
    RngStream head_rng = rng.split("classifier-init");
    init_classifier(model, fc, head_rng);

    const std::string ckpt_in = cfg.j.at("checkpoint_in").get<std::string>();
    if (!ckpt_in.empty()) {
        if (!fs::exists(ckpt_in))
            config_error("missing_checkpoint", "checkpoint not found: " + ckpt_in);
        if (load_matching(model.params, load_checkpoint(ckpt_in)) == 0)
            config_error("bad_checkpoint", "checkpoint matches no parameters");
    }

    Optimizer opt(adam_of(cfg));
    std::ostringstream csv;
    csv << "step,loss,lr\n";
    for (std::int64_t step = 0; step < sched.total_steps; ++step) {
        std::vector<VideoTensor> crops;
        std::vector<LabeledClip> clips;
        crops.reserve(static_cast<std::size_t>(batch));
        RngStream crop_rng = rng.split("crop").split(static_cast<std::uint64_t>(step));
        for (std::int64_t i = 0; i < batch; ++i) {
            const auto v = static_cast<std::size_t>((step * batch + i) % n_videos);
            const VideoTensor& full = data.videos[v];
            if (full.frames < frames)
                config_error("bad_geometry", "video shorter than geometry.frames");
            const std::int64_t max_start = full.frames - frames;
            const std::int64_t start =
                max_start == 0
                    ? 0
                    : static_cast<std::int64_t>(crop_rng.below(
                          static_cast<std::uint64_t>(max_start + 1)));
            crops.push_back(full.frames == frames ? full : temporal_crop(full, start, frames));
        }
        for (std::int64_t i = 0; i < batch; ++i) {
            const auto v = static_cast<std::size_t>((step * batch + i) % n_videos);
            clips.push_back(LabeledClip{&crops[static_cast<std::size_t>(i)], data.labels[v]});
        }
        RngStream drop_rng = rng.split("drop").split(static_cast<std::uint64_t>(step));
        const double lr = lr_at(step, sched);
        const double loss = finetune_step(clips, model, fc, opt, lr, drop_rng);
        csv << step << ',' << fmt_metric(loss) << ',' << fmt_metric(lr) << '\n';
    }

    const std::string metrics_path = dir + "/metrics.csv";
    open_out(metrics_path) << csv.str();
    std::string ckpt = cfg.j.at("checkpoint_out").get<std::string>();
    if (ckpt.empty()) ckpt = dir + "/finetuned.lvmt";
    save_checkpoint(ckpt, model.params);
    return make_manifest(cfg, "finetune", {metrics_path, ckpt}, timer, dir);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

RunManifest run_eval(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    LoadedData data = load_split(require_path(cfg, "data_dir") + "/val", true);

    RngStream rng(cfg.seed());
    RngStream init_rng = rng.split("mae-init");
    MaeModel model = MaeModel::init(mae_config_of(cfg), init_rng);
    const FinetuneConfig fc = finetune_config_of(cfg);
    RngStream head_rng = rng.split("classifier-init");
    init_classifier(model, fc, head_rng);
    const std::string ckpt_in = require_input_file(cfg, "checkpoint_in");
    if (load_matching(model.params, load_checkpoint(ckpt_in)) == 0)
        config_error("bad_checkpoint", "checkpoint matches no parameters");

    const std::int64_t crop_len = cfg.j.at("eval").at("crop_len").get<std::int64_t>();
    const std::int64_t n_crops = cfg.j.at("eval").at("n_crops").get<std::int64_t>();
    std::int64_t correct = 0;
    for (std::size_t v = 0; v < data.videos.size(); ++v) {
        const auto logits = multi_crop_eval(data.videos[v], model, fc, crop_len, n_crops);
        const auto pred = static_cast<std::int64_t>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (pred == data.labels[v]) ++correct;
    }
    const double top1 = static_cast<double>(correct) / static_cast<double>(data.videos.size());

    const std::string summary_path = dir + "/eval.json";
    Json summary{{"top1", top1},
                 {"n_videos", data.videos.size()},
                 {"crop_len", crop_len},
                 {"n_crops", n_crops},
                 {"checkpoint", ckpt_in}};
    open_out(summary_path) << summary.dump(2) << "\n";
    return make_manifest(cfg, "eval", {summary_path}, timer, dir);
}

// ---------------------------------------------------------------------------
// masks / cost / viz
// ---------------------------------------------------------------------------

namespace {

// first training item's flow and scorer saliency, for strategies that need one
struct VizInputs {
    VideoTensor video;
    FlowField flow;
    SaliencyMap scorer;
};

VizInputs load_first_item(const ExperimentConfig& cfg) {
    const auto items = scan_dataset(require_path(cfg, "data_dir") + "/train", false);
    VizInputs in;
    in.video = load_rvid(items[0].rvid);
    if (!items[0].rflo.empty()) in.flow = load_rflo(items[0].rflo);
    const std::string tok_ckpt = cfg.j.at("tokenizer_checkpoint").get<std::string>();
    if (!tok_ckpt.empty()) {
        if (!fs::exists(tok_ckpt))
            config_error("missing_checkpoint", "tokenizer checkpoint not found: " + tok_ckpt);
        RngStream rng(cfg.seed());
        RngStream init_rng = rng.split("tokenizer-init");
        Tokenizer tok = Tokenizer::init(tokenizer_config_of(cfg), init_rng);
        if (load_matching(tok.params, load_checkpoint(tok_ckpt)) == 0)
            config_error("bad_checkpoint", "tokenizer checkpoint matches no parameters");
        const auto t = tokenize_long_video(in.video, tok);
        in.scorer = normalize_saliency(TokenGrid{t.importance.dt, t.importance.dh, t.importance.dw},
                                       t.importance.scores);
    }
    return in;
}

MaskSet masks_for_first_item(const ExperimentConfig& cfg, const PatchSpec& patch,
                             const BudgetSpec& budget, VizInputs& in) {
    RngStream rng(cfg.seed());
    RngStream enc_rng = rng.split("mask-tube").split(std::uint64_t{0}).split(std::uint64_t{0});
    RngStream dec_rng = rng.split("mask-dec").split(std::uint64_t{0}).split(std::uint64_t{0});
    const SaliencyMap* imp = in.scorer.s.empty() ? nullptr : &in.scorer;
    return build_masks(cfg, patch, budget, &in.flow, imp, enc_rng, dec_rng);
}

}  // namespace

RunManifest run_masks(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    const PatchSpec patch = geometry_grid(cfg);
    const BudgetSpec budget = budget_of(cfg);
    VizInputs in = load_first_item(cfg);
    if (in.video.frames != cfg.j.at("geometry").at("frames").get<std::int64_t>() ||
        in.video.height != cfg.j.at("geometry").at("height").get<std::int64_t>() ||
        in.video.width != cfg.j.at("geometry").at("width").get<std::int64_t>())
        config_error("bad_geometry", "dataset video does not match configured geometry");
    const MaskSet masks = masks_for_first_item(cfg, patch, budget, in);

    const std::string dump_path = dir + "/masks.lvmk";
    save_mask_dump(dump_path, masks, budget);
    const MaskReport report = validate(masks);
    const std::string report_path = dir + "/mask_report.json";
    Json rj{{"ok", report.ok},
            {"violations", report.violations},
            {"n_tokens", masks.n()},
            {"n_visible", masks.n_visible()},
            {"n_selected", masks.n_selected()},
            {"strategy", cfg.j.at("strategy").get<std::string>()}};
    open_out(report_path) << rj.dump(2) << "\n";
    return make_manifest(cfg, "masks", {dump_path, report_path}, timer, dir);
}

RunManifest run_cost(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    const auto& g = cfg.j.at("geometry");
    const BudgetSpec budget = budget_of(cfg);
    CostGeometry base;
    base.frames = g.at("frames").get<std::int64_t>();
    base.height = g.at("height").get<std::int64_t>();
    base.width = g.at("width").get<std::int64_t>();
    base.kt = g.at("kt").get<std::int64_t>();
    base.kh = g.at("kh").get<std::int64_t>();
    base.kw = g.at("kw").get<std::int64_t>();
    base.rho_e = budget.rho_e;
    base.rho_d = budget.rho_d;
    base.rho_r = budget.rho_r;
    const auto& a = cfg.j.at("cost").at("arch");
    ArchDims dims;
    dims.enc_layers = a.at("enc_layers").get<std::int64_t>();
    dims.enc_dim = a.at("enc_dim").get<std::int64_t>();
    dims.enc_heads = a.at("enc_heads").get<std::int64_t>();
    dims.enc_mlp = a.at("enc_mlp").get<std::int64_t>();
    dims.dec_layers = a.at("dec_layers").get<std::int64_t>();
    dims.dec_dim = a.at("dec_dim").get<std::int64_t>();
    dims.dec_heads = a.at("dec_heads").get<std::int64_t>();
    dims.dec_mlp = a.at("dec_mlp").get<std::int64_t>();
    dims.bytes_per_activation = a.at("bytes_per_activation").get<std::int64_t>();
    dims.batch = a.at("batch").get<std::int64_t>();

    std::vector<std::int64_t> frames;
    for (const auto& f : cfg.j.at("cost").at("frames")) frames.push_back(f.get<std::int64_t>());
    std::vector<double> rho_d;
    for (const auto& r : cfg.j.at("cost").at("rho_d")) rho_d.push_back(r.get<double>());
    std::string csv;
    try {
        csv = sweep_report(frames, rho_d, base, dims);
    } catch (const std::exception& e) {
        config_error("bad_geometry", e.what());
    }
    const std::string csv_path = dir + "/cost.csv";
    open_out(csv_path) << csv;
    return make_manifest(cfg, "cost", {csv_path}, timer, dir);
}

RunManifest run_viz(const ExperimentConfig& cfg) {
    Timer timer;
    const std::string dir = out_dir(cfg);
    const PatchSpec patch = geometry_grid(cfg);
    const BudgetSpec budget = budget_of(cfg);
    VizInputs in = load_first_item(cfg);
    const MaskSet masks = masks_for_first_item(cfg, patch, budget, in);

    const std::string frames_dir = dir + "/frames";
    fs::create_directories(frames_dir);
    export_ppm(in.video, frames_dir, "frame");
    export_ppm_overlay(in.video, patch, masks.decoder_selected, frames_dir, "selected");
    std::vector<std::string> outputs;
    for (const auto& entry : fs::directory_iterator(frames_dir))
        outputs.push_back(entry.path().string());
    return make_manifest(cfg, "viz", std::move(outputs), timer, dir);
}

RunManifest run_stage(const ExperimentConfig& cfg) {
    const std::string stage = cfg.j.at("stage").get<std::string>();
    if (stage == "gen-data") return run_gen_data(cfg);
    if (stage == "train-tokenizer") return run_train_tokenizer(cfg);
    if (stage == "pretrain") return run_pretrain(cfg);
    if (stage == "finetune") return run_finetune(cfg);
    if (stage == "eval") return run_eval(cfg);
    if (stage == "masks") return run_masks(cfg);
    if (stage == "cost") return run_cost(cfg);
    if (stage == "viz") return run_viz(cfg);
    config_error("bad_stage", "unknown stage: " + stage);
}

}  // namespace lvmae
