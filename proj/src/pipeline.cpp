#include "ffdc/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace ffdc {
namespace pipeline {

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed for " + path);
}

void write_snapshot(const RunConfig& cfg, const std::string& dir) {
    write_text(dir + "/config.snapshot.json", cfg.to_json().dump(2) + "\n");
}

void write_manifest(const RunConfig& cfg, const std::string& dir, const std::string& stage,
                    const nlohmann::json& stats) {
    nlohmann::json m;
    m["stage"] = stage;
    m["config_hash"] = cfg.hash();
    m["stats"] = stats;
    write_text(dir + "/manifest.json", m.dump(2) + "\n");
}

void require_upstream(const RunConfig& cfg, const std::string& dir, const std::string& stage) {
    const std::string path = dir + "/manifest.json";
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("stage '" + stage + "' has not produced " + path +
                                 "; run the earlier pipeline stages first");
    nlohmann::json m;
    is >> m;
    const std::string got = m.value("config_hash", "");
    if (got != cfg.hash())
        throw std::runtime_error("config-hash mismatch: " + path + " was produced under config " + got +
                                 " but the current config hashes to " + cfg.hash() +
                                 "; regenerate the upstream artifacts or restore the original config");
}

void prepare_dir(const std::string& dir, const std::string& primary_output, bool force) {
    if (fs::exists(primary_output) && !force)
        throw std::runtime_error(primary_output + " already exists; pass --force to overwrite");
    fs::create_directories(dir);
}

}  // namespace

std::string demos_dir(const RunConfig& cfg) { return cfg.out_dir + "/demos"; }
std::string demos_path(const RunConfig& cfg) { return demos_dir(cfg) + "/demos.jsonl"; }
std::string wam_dir(const RunConfig& cfg) { return cfg.out_dir + "/wam"; }
std::string wam_path(const RunConfig& cfg) { return wam_dir(cfg) + "/wam.ckpt"; }
std::string verdata_dir(const RunConfig& cfg) { return cfg.out_dir + "/verdata"; }
std::string verdata_path(const RunConfig& cfg) { return verdata_dir(cfg) + "/dver.jsonl"; }
std::string verifier_dir(const RunConfig& cfg) { return cfg.out_dir + "/verifier"; }
std::string verifier_path(const RunConfig& cfg, Ablation ablation) {
    return verifier_dir(cfg) + "/verifier_" + ablation_name(ablation) + ".ckpt";
}
std::string verifier_metrics_path(const RunConfig& cfg, Ablation ablation) {
    return verifier_dir(cfg) + "/metrics_" + ablation_name(ablation) + ".json";
}
std::string bench_dir(const RunConfig& cfg) { return cfg.out_dir + "/bench"; }

DemoStats gen_demos(const RunConfig& cfg, bool force) {
    const std::string dir = demos_dir(cfg);
    prepare_dir(dir, demos_path(cfg), force);

    LatentEncoder enc(cfg.model.latent_dim);
    std::vector<Episode> episodes;
    DemoStats stats;
    double easy_len_sum = 0.0;
    int easy_n = 0, hard_n = 0;
    for (int t = 0; t < 2; ++t) {
        const TaskId task = t == 0 ? TaskId::transport_easy : TaskId::insert_hard;
        for (int e = 0; e < cfg.demos_per_task; ++e) {
            const uint64_t ep_seed = Rng::stream(cfg.seed, "demo-seed", t * 1000003ULL + e).next_u64();
            Episode ep = run_jittered_expert_episode(cfg.task_spec(task, ep_seed), cfg.env, cfg.expert, DemoJitter{}, enc);
            if (task == TaskId::transport_easy) {
                stats.easy_sr += ep.success ? 1.0 : 0.0;
                easy_len_sum += ep.length();
                ++easy_n;
            } else {
                stats.hard_sr += ep.success ? 1.0 : 0.0;
                ++hard_n;
            }
            episodes.push_back(std::move(ep));
        }
    }
    stats.episodes = static_cast<int>(episodes.size());
    if (easy_n) {
        stats.easy_sr /= easy_n;
        stats.easy_mean_len = easy_len_sum / easy_n;
    }
    if (hard_n) stats.hard_sr /= hard_n;

    save_episodes_jsonl(demos_path(cfg), episodes);
    write_snapshot(cfg, dir);
    write_manifest(cfg, dir, "gen-demos",
                   {{"episodes", stats.episodes},
                    {"easy_sr", stats.easy_sr},
                    {"hard_sr", stats.hard_sr},
                    {"easy_mean_len", stats.easy_mean_len}});
    return stats;
}

WamStats train_wam(const RunConfig& cfg, bool force) {
    require_upstream(cfg, demos_dir(cfg), "train-wam");
    const std::string dir = wam_dir(cfg);
    prepare_dir(dir, wam_path(cfg), force);

    std::vector<Episode> demos = load_episodes_jsonl(demos_path(cfg));
    std::vector<const Episode*> train;
    for (const auto& ep : demos)
        if (ep.success) train.push_back(&ep);
    if (train.empty()) throw std::runtime_error("train-wam: no successful demonstrations in the archive");

    Wam wam(cfg.model, Rng::stream(cfg.seed, "wam-init").next_u64());
    Rng rng = Rng::stream(cfg.seed, "wam-train");
    WamStats stats;
    for (int step = 0; step < cfg.wam_steps; ++step) {
        std::vector<TrainWindow> batch;
        batch.reserve(cfg.wam_batch);
        for (int b = 0; b < cfg.wam_batch; ++b) {
            const Episode& ep = *train[rng.uniform_int(0, static_cast<int>(train.size()) - 1)];
            batch.push_back(sample_training_window(ep, cfg.model.horizon, cfg.model.ratio, rng));
        }
        const auto [la, lv] = wam.train_step(batch, cfg.wam_adam);
        stats.loss_act = la;
        stats.loss_vid = lv;
        if ((step + 1) % 500 == 0)
            std::cout << "train-wam step " << step + 1 << "/" << cfg.wam_steps << " loss_act=" << la
                      << " loss_vid=" << lv << "\n";
    }
    wam.save(wam_path(cfg));
    write_snapshot(cfg, dir);
    write_manifest(cfg, dir, "train-wam", {{"loss_act", stats.loss_act}, {"loss_vid", stats.loss_vid}});
    return stats;
}

DatasetManifest build_verdata(const RunConfig& cfg, bool force) {
    require_upstream(cfg, demos_dir(cfg), "build-verdata");
    require_upstream(cfg, wam_dir(cfg), "build-verdata");
    const std::string dir = verdata_dir(cfg);
    prepare_dir(dir, verdata_path(cfg), force);

    std::vector<Episode> demos = load_episodes_jsonl(demos_path(cfg));
    Wam wam = Wam::load(wam_path(cfg));
    VerifierDataset ds = build_dataset(demos, wam, cfg.env, cfg.verdata,
                                       Rng::stream(cfg.seed, "verdata").next_u64(), cfg.hash());
    save_dataset_jsonl(verdata_path(cfg), ds);
    write_snapshot(cfg, dir);
    nlohmann::json stats;
    stats["n_pos"] = ds.manifest.n_pos;
    stats["n_neg"] = ds.manifest.n_neg;
    stats["positive_fraction"] = ds.manifest.positive_fraction;
    stats["provenance_counts"] = ds.manifest.provenance_counts;
    stats["warnings"] = ds.manifest.warnings;
    write_manifest(cfg, dir, "build-verdata", stats);
    for (const auto& w : ds.manifest.warnings) std::cerr << "build-verdata warning: " << w << "\n";
    return ds.manifest;
}

VerifierStats train_verifier(const RunConfig& cfg, Ablation ablation, bool force) {
    require_upstream(cfg, verdata_dir(cfg), "train-verifier");
    const std::string dir = verifier_dir(cfg);
    prepare_dir(dir, verifier_path(cfg, ablation), force);

    VerifierDataset ds = load_dataset_jsonl(verdata_path(cfg));
    if (ds.manifest.config_hash != cfg.hash())
        throw std::runtime_error("train-verifier: dataset was built under config " + ds.manifest.config_hash +
                                 ", current config is " + cfg.hash());
    std::vector<VerifierSample> train, holdout;
    split_dataset(ds, cfg.holdout_fraction, train, holdout);
    const std::vector<LabeledBundle> train_b = to_labeled_bundles(train);
    const std::vector<LabeledBundle> holdout_b = to_labeled_bundles(holdout);
    if (train_b.empty() || holdout_b.empty())
        throw std::runtime_error("train-verifier: dataset split left an empty side");

    FfdcVerifier verifier(cfg.verifier_config(ablation), Rng::stream(cfg.seed, "verifier-init").next_u64());
    Rng rng = Rng::stream(cfg.seed, "verifier-train");
    VerifierStats stats;
    stats.n_train = static_cast<int>(train_b.size());
    stats.n_holdout = static_cast<int>(holdout_b.size());
    for (int step = 0; step < cfg.ver_steps; ++step) {
        std::vector<LabeledBundle> batch;
        batch.reserve(cfg.ver_batch);
        for (int b = 0; b < cfg.ver_batch; ++b)
            batch.push_back(train_b[rng.uniform_int(0, static_cast<int>(train_b.size()) - 1)]);
        stats.final_loss = verifier.train_step(batch, cfg.ver_adam);
        if ((step + 1) % 200 == 0)
            std::cout << "train-verifier[" << ablation_name(ablation) << "] step " << step + 1 << "/"
                      << cfg.ver_steps << " loss=" << stats.final_loss << "\n";
    }
    stats.holdout = verifier.evaluate(holdout_b);
    verifier.save(verifier_path(cfg, ablation));

    nlohmann::json metrics;
    metrics["ablation"] = ablation_name(ablation);
    metrics["holdout_accuracy"] = stats.holdout.accuracy;
    metrics["mean_pos"] = stats.holdout.mean_pos;
    metrics["mean_neg"] = stats.holdout.mean_neg;
    metrics["n_train"] = stats.n_train;
    metrics["n_holdout"] = stats.n_holdout;
    metrics["final_loss"] = stats.final_loss;
    write_text(verifier_metrics_path(cfg, ablation), metrics.dump(2) + "\n");
    write_snapshot(cfg, dir);
    write_manifest(cfg, dir, "train-verifier", metrics);
    return stats;
}

BenchmarkResult benchmark(const RunConfig& cfg, Ablation ablation, bool force) {
    require_upstream(cfg, wam_dir(cfg), "benchmark");
    const std::string dir = bench_dir(cfg);
    prepare_dir(dir, dir + "/episodes.jsonl", force);

    Wam wam = Wam::load(wam_path(cfg));
    BenchmarkConfig bc;
    bc.tasks = {TaskId::transport_easy, TaskId::insert_hard};
    bc.episodes_per_task = cfg.bench_episodes;
    bc.seed = cfg.seed;
    bc.threads = cfg.threads;
    bc.env = cfg.env;
    bc.hard_noise_sigma = cfg.noise_sigma;
    bc.success_radius = cfg.success_radius;
    bool needs_verifier = false;
    for (const auto& p : cfg.policies) {
        bc.policies.push_back(ExecPolicy::parse(p, cfg.tau, cfg.ver_k, cfg.check_interval));
        needs_verifier = needs_verifier || bc.policies.back().kind == ExecPolicy::Kind::adaptive;
    }

    std::unique_ptr<FfdcVerifier> verifier;
    if (needs_verifier) {
        require_upstream(cfg, verifier_dir(cfg), "benchmark");
        verifier = std::make_unique<FfdcVerifier>(FfdcVerifier::load(verifier_path(cfg, ablation)));
    }

    BenchmarkResult result = run_benchmark(bc, wam, verifier.get());
    write_episodes_jsonl(dir + "/episodes.jsonl", result.traces);
    write_summary_csv(dir + "/summary.csv", result.cells);
    write_text(dir + "/frontier.svg", render_frontier_svg(result.cells));
    write_snapshot(cfg, dir);
    nlohmann::json stats;
    for (const auto& c : result.cells)
        stats[c.policy + "/" + task_name(c.task)] = {{"sr", c.sr}, {"steps", c.mean_steps}, {"calls", c.mean_calls}};
    write_manifest(cfg, dir, "benchmark", stats);
    return result;
}

std::string report(const RunConfig& cfg) {
    const std::string dir = bench_dir(cfg);
    const std::string episodes = dir + "/episodes.jsonl";
    if (!fs::exists(episodes))
        throw std::runtime_error("report: " + episodes + " is missing; run the benchmark stage first");
    require_upstream(cfg, dir, "report");
    const std::vector<ExecutionTrace> traces = load_episodes_traces(episodes);
    const std::vector<CellMetrics> cells = aggregate_cells(traces);
    write_summary_csv(dir + "/summary.csv", cells);
    write_text(dir + "/frontier.svg", render_frontier_svg(cells));
    return render_table(cells);
}

}  // namespace pipeline
}  // namespace ffdc
