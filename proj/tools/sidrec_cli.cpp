#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sidrec/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Semantic-ID generative recommendation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // allow global options after the subcommand

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::optional<std::string> run_dir;

    uint64_t seed_value = 0;
    std::string run_dir_value;
    app.add_option("--config", config_path, "path to the run configuration JSON")->required();
    auto* seed_opt = app.add_option("--seed", seed_value, "override the global seed");
    auto* dir_opt = app.add_option("--run-dir", run_dir_value, "override the run directory");
    app.add_option("--set", overrides, "override a config key, e.g. --set rl.max_steps=10")
        ->take_all();

    const char* subs[] = {"synth",    "quantize", "build-corpus", "align",  "activate",
                          "rl-train", "evaluate", "bestofn",      "report", "all"};
    const char* descs[] = {"generate or ingest the dataset and write the splits",
                           "train the residual quantizer and assign Semantic IDs",
                           "render the multi-task alignment corpus",
                           "supervised alignment training",
                           "cold-start reasoning activation",
                           "GRPO reinforcement learning",
                           "full-item-ranking evaluation of all checkpoints",
                           "best-of-N reasoning evaluation",
                           "consolidated report and plot-ready CSVs",
                           "run every stage in order"};
    for (size_t i = 0; i < 10; ++i) app.add_subcommand(subs[i], descs[i]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (seed_opt->count() > 0) seed = seed_value;
    if (dir_opt->count() > 0) run_dir = run_dir_value;

    std::string sub = app.get_subcommands().front()->get_name();
    return sidrec::cli::run_command(sub, config_path, overrides, seed, run_dir);
}
