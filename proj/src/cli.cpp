#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lvmae/pipeline.hpp"

namespace lvmae {

namespace {

struct StageArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

int run(const std::string& stage, const StageArgs& args) {
    ExperimentConfig cfg =
        args.config_path.empty() ? ExperimentConfig::from_json(Json::object())
                                 : ExperimentConfig::load(args.config_path);
    cfg.j["stage"] = stage;  // the subcommand wins over the config file
    for (const auto& kv : args.overrides) cfg.set_override(kv);
    cfg.validate();
    const RunManifest m = run_stage(cfg);
    std::cout << "stage=" << m.stage << " config_hash=" << m.config_hash
              << " outputs=" << m.outputs.size() << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"long-video MAE pre-training with adaptive decoder masking"};
    app.require_subcommand(1);

    const std::vector<std::string> stages = {"train-tokenizer", "pretrain", "finetune", "eval",
                                             "masks", "cost", "viz", "gen-data"};
    std::map<std::string, StageArgs> args;
    for (const auto& s : stages) {
        auto* sub = app.add_subcommand(s);
        sub->add_option("--config", args[s].config_path, "JSON config file");
        sub->add_option("--set", args[s].overrides, "dotted key=value overrides")
            ->take_all();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error_code=bad_arguments " << e.what() << "\n";
        return 2;
    }

    try {
        const std::string stage = app.get_subcommands().front()->get_name();
        return run(stage, args.at(stage));
    } catch (const PipelineError& e) {
        std::cerr << "error_code=" << e.code << " " << e.what() << "\n";
        return e.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error_code=runtime_error " << e.what() << "\n";
        return 1;
    }
}

}  // namespace lvmae
