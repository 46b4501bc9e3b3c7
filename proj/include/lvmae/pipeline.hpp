#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvmae/optim.hpp"

namespace lvmae {

using Json = nlohmann::json;

// code is machine-parsable (stderr prefix `error_code=`); exit_code is 2 for
// configuration errors and 1 for runtime failures.
struct PipelineError : std::runtime_error {
    std::string code;
    int exit_code;

    PipelineError(std::string c, const std::string& msg, int ec)
        : std::runtime_error(msg), code(std::move(c)), exit_code(ec) {}
};

[[noreturn]] inline void config_error(const std::string& code, const std::string& msg) {
    throw PipelineError(code, msg, 2);
}
[[noreturn]] inline void runtime_error_code(const std::string& code, const std::string& msg) {
    throw PipelineError(code, msg, 1);
}

// JSON experiment configuration. User files are deep-merged over the desk
// defaults; unknown keys are rejected so typos fail fast.
struct ExperimentConfig {
    Json j;

    static Json defaults();
    static ExperimentConfig from_json(const Json& user);
    static ExperimentConfig load(const std::string& path);

    // dotted-path override, e.g. "schedule.steps=500"; the value is parsed as
    // JSON when possible and treated as a string otherwise
    void set_override(const std::string& key_eq_value);

    // canonical serialization (sorted keys, fixed indentation); re-parsing it
    // is a fixed point
    std::string canonical() const;
    std::string config_hash() const;  // FNV-1a 64 of canonical(), hex

    void validate() const;
    std::uint64_t seed() const;  // config seed, overridden by LVMAE_SEED
};

struct RunManifest {
    std::string stage;
    std::string config_hash;
    std::string git_describe;
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
    double wall_clock_ms = 0.0;

    // written exactly once per run, to <output_dir>/manifest.json
    void write(const std::string& path) const;
};

struct DatasetItem {
    std::string rvid;
    std::string rflo;        // empty if absent
    std::int64_t label = -1; // -1 if the split has no labels.csv
};

// Sorted .rvid files in dir, paired with same-stem .rflo and labels.csv rows.
std::vector<DatasetItem> scan_dataset(const std::string& dir, bool require_labels);

// Copies src entries into dst where the name exists and the shape matches;
// returns the number of tensors copied.
std::int64_t load_matching(ParamStore& dst, const ParamStore& src);

// stage runners; each writes its outputs plus a manifest under output_dir
RunManifest run_gen_data(const ExperimentConfig& cfg);
RunManifest run_train_tokenizer(const ExperimentConfig& cfg);
RunManifest run_pretrain(const ExperimentConfig& cfg);
RunManifest run_finetune(const ExperimentConfig& cfg);
RunManifest run_eval(const ExperimentConfig& cfg);
RunManifest run_masks(const ExperimentConfig& cfg);
RunManifest run_cost(const ExperimentConfig& cfg);
RunManifest run_viz(const ExperimentConfig& cfg);

// dispatch on cfg.j["stage"]
RunManifest run_stage(const ExperimentConfig& cfg);

// full CLI: subcommands train-tokenizer, pretrain, finetune, eval, masks,
// cost, viz, gen-data; flags --config PATH and repeatable --set key=value.
// Returns 0 on success, 2 on config errors, 1 on runtime failure; errors go
// to stderr with an `error_code=` prefix.
int cli_main(int argc, const char* const* argv);

}  // namespace lvmae
