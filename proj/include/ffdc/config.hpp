#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "ffdc/env.hpp"
#include "ffdc/params.hpp"
#include "ffdc/verdata.hpp"
#include "ffdc/verifier.hpp"
#include "ffdc/wam.hpp"

namespace ffdc {

// Fully resolved run configuration. JSON with a versioned schema; unknown keys
// are rejected. Only the output directory and thread count may be overridden
// by environment variables (FFDC_OUT_DIR, FFDC_THREADS).
struct RunConfig {
    int config_version = 1;
    uint64_t seed = 1;
    std::string out_dir = "out";
    int threads = 1;

    EnvParams env;
    double noise_sigma = 0.025;  // insert-hard contact noise
    double success_radius = 0.04;
    ExpertParams expert;

    WamConfig model;

    int ver_layers = 2;
    int ver_heads = 4;
    int ver_width = 64;
    int ver_k = 8;
    int ver_window = 8;
    MaskMode ver_mode = MaskMode::cache_compatible;

    AdamConfig wam_adam{3e-3, 0.9, 0.999, 1e-8};
    int wam_batch = 64;
    int wam_steps = 2500;

    AdamConfig ver_adam{1e-3, 0.9, 0.999, 1e-8};
    int ver_batch = 32;
    int ver_steps = 1200;
    double holdout_fraction = 0.2;

    int demos_per_task = 250;

    VerdataConfig verdata;

    double tau = 0.5;
    int check_interval = 4;
    std::vector<std::string> policies{"fixed16", "fixed32", "adaptive"};
    int bench_episodes = 100;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load_file(const std::string& path);
    nlohmann::json to_json() const;

    // Content hash over the resolved config minus out_dir/threads; stages are
    // coupled by this value.
    std::string hash() const;

    void apply_env_overrides();
    void validate() const;

    VerifierConfig verifier_config(Ablation ablation) const;
    TaskSpec task_spec(TaskId id, uint64_t episode_seed) const;
};

}  // namespace ffdc
