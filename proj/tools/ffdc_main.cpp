// Command-line driver: demonstration generation, model training, verification
// dataset construction, verifier training, benchmarking, and reporting.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "ffdc/pipeline.hpp"

using namespace ffdc;

int main(int argc, char** argv) {
    CLI::App app{"ffdc: execution-time verification for chunked world-action policies"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed_override = 0;
    bool seed_set = false;
    std::string out_override;
    bool force = false;
    std::string ablation_str = "full";
    int parallel_episodes = 0;

    app.add_option("--config", config_path, "Path to a JSON run configuration");
    app.add_option("--seed", seed_override, "Override the configured seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_override, "Override the configured output directory");
    app.add_flag("--force", force, "Overwrite existing stage outputs");
    app.add_option("--ablation", ablation_str, "Verifier input ablation")
        ->check(CLI::IsMember({"full", "no_und", "no_pred", "no_real", "no_action"}));
    app.add_option("--parallel-episodes", parallel_episodes, "Concurrent benchmark episodes");

    auto* cmd_gen = app.add_subcommand("gen-demos", "Run the scripted expert and write the demo archive");
    auto* cmd_wam = app.add_subcommand("train-wam", "Train the world-action model on the demos");
    auto* cmd_verdata = app.add_subcommand("build-verdata", "Construct the binary verification dataset");
    auto* cmd_verifier = app.add_subcommand("train-verifier", "Train the execution verifier");
    auto* cmd_bench = app.add_subcommand("benchmark", "Run the execution-policy benchmark");
    auto* cmd_report = app.add_subcommand("report", "Regenerate the summary table and scatter plot");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load_file(config_path);
        cfg.apply_env_overrides();
        if (seed_set) cfg.seed = seed_override;
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (parallel_episodes > 0) cfg.threads = parallel_episodes;
        cfg.validate();
        const Ablation ablation = parse_ablation(ablation_str);

        if (cmd_gen->parsed()) {
            const auto stats = pipeline::gen_demos(cfg, force);
            std::cout << "wrote " << stats.episodes << " episodes to " << pipeline::demos_path(cfg)
                      << " (easy SR " << stats.easy_sr * 100.0 << "%, hard SR " << stats.hard_sr * 100.0
                      << "%, easy mean length " << stats.easy_mean_len << ")\n";
        } else if (cmd_wam->parsed()) {
            const auto stats = pipeline::train_wam(cfg, force);
            std::cout << "wrote " << pipeline::wam_path(cfg) << " (loss_act " << stats.loss_act << ", loss_vid "
                      << stats.loss_vid << ")\n";
        } else if (cmd_verdata->parsed()) {
            const auto manifest = pipeline::build_verdata(cfg, force);
            std::cout << "wrote " << pipeline::verdata_path(cfg) << " (" << manifest.n_pos << " positive / "
                      << manifest.n_neg << " negative)\n";
        } else if (cmd_verifier->parsed()) {
            const auto stats = pipeline::train_verifier(cfg, ablation, force);
            std::cout << "wrote " << pipeline::verifier_path(cfg, ablation) << " (holdout accuracy "
                      << stats.holdout.accuracy << ", mean_pos " << stats.holdout.mean_pos << ", mean_neg "
                      << stats.holdout.mean_neg << ")\n";
        } else if (cmd_bench->parsed()) {
            const auto result = pipeline::benchmark(cfg, ablation, force);
            std::cout << render_table(result.cells);
            std::cout << "wrote " << pipeline::bench_dir(cfg) << "/{episodes.jsonl, summary.csv, frontier.svg}\n";
        } else if (cmd_report->parsed()) {
            std::cout << pipeline::report(cfg);
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
