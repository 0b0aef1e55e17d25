#pragma once

#include <string>

#include "ffdc/config.hpp"
#include "ffdc/exec.hpp"

namespace ffdc {
namespace pipeline {

// Stage output layout under cfg.out_dir:
//   demos/demos.jsonl        wam/wam.ckpt         verdata/dver.jsonl
//   verifier/verifier_<ablation>.ckpt + metrics.json
//   bench/{episodes.jsonl, summary.csv, frontier.svg, config.snapshot.json}
// Every stage directory carries config.snapshot.json and manifest.json; stages
// refuse to consume upstream artifacts produced under a different config hash.

std::string demos_dir(const RunConfig& cfg);
std::string demos_path(const RunConfig& cfg);
std::string wam_dir(const RunConfig& cfg);
std::string wam_path(const RunConfig& cfg);
std::string verdata_dir(const RunConfig& cfg);
std::string verdata_path(const RunConfig& cfg);
std::string verifier_dir(const RunConfig& cfg);
std::string verifier_path(const RunConfig& cfg, Ablation ablation);
std::string verifier_metrics_path(const RunConfig& cfg, Ablation ablation);
std::string bench_dir(const RunConfig& cfg);

struct DemoStats {
    int episodes = 0;
    double easy_sr = 0.0;
    double hard_sr = 0.0;
    double easy_mean_len = 0.0;
};
DemoStats gen_demos(const RunConfig& cfg, bool force);

struct WamStats {
    double loss_act = 0.0;
    double loss_vid = 0.0;
};
WamStats train_wam(const RunConfig& cfg, bool force);

DatasetManifest build_verdata(const RunConfig& cfg, bool force);

struct VerifierStats {
    EvalStats holdout;
    double final_loss = 0.0;
    int n_train = 0;
    int n_holdout = 0;
};
VerifierStats train_verifier(const RunConfig& cfg, Ablation ablation, bool force);

BenchmarkResult benchmark(const RunConfig& cfg, Ablation ablation, bool force);

// Regenerates summary.csv, frontier.svg and the stdout table from
// episodes.jsonl alone.
std::string report(const RunConfig& cfg);

}  // namespace pipeline
}  // namespace ffdc
