#include "ffdc/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

#include "ffdc/exec.hpp"

namespace ffdc {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    reject_unknown(j, {"config_version", "seed", "out_dir", "threads", "env", "expert", "model", "verifier",
                       "train_wam", "train_verifier", "demos", "verdata", "exec"},
                   "top level");
    read(j, "config_version", c.config_version);
    if (c.config_version != 1)
        throw std::invalid_argument("config: unsupported config_version " + std::to_string(c.config_version));
    read(j, "seed", c.seed);
    read(j, "out_dir", c.out_dir);
    read(j, "threads", c.threads);

    if (j.contains("env")) {
        const auto& e = j.at("env");
        reject_unknown(e, {"t_max", "max_delta", "grasp_radius", "contact_radius", "noise_sigma", "success_radius"},
                       "env");
        read(e, "t_max", c.env.t_max);
        read(e, "max_delta", c.env.max_delta);
        read(e, "grasp_radius", c.env.grasp_radius);
        read(e, "contact_radius", c.env.contact_radius);
        read(e, "noise_sigma", c.noise_sigma);
        read(e, "success_radius", c.success_radius);
    }
    if (j.contains("expert")) {
        const auto& e = j.at("expert");
        reject_unknown(e, {"gain", "speed_cap", "close_dist", "release_dist"}, "expert");
        read(e, "gain", c.expert.gain);
        read(e, "speed_cap", c.expert.speed_cap);
        read(e, "close_dist", c.expert.close_dist);
        read(e, "release_dist", c.expert.release_dist);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, {"horizon", "ratio", "latent_dim", "action_dim", "n_sem", "sem_dim", "width",
                           "vid_loss_weight"},
                       "model");
        read(m, "horizon", c.model.horizon);
        read(m, "ratio", c.model.ratio);
        read(m, "latent_dim", c.model.latent_dim);
        read(m, "action_dim", c.model.action_dim);
        read(m, "n_sem", c.model.n_sem);
        read(m, "sem_dim", c.model.sem_dim);
        read(m, "width", c.model.width);
        read(m, "vid_loss_weight", c.model.vid_loss_weight);
    }
    if (j.contains("verifier")) {
        const auto& v = j.at("verifier");
        reject_unknown(v, {"layers", "heads", "width", "k", "window", "mask_mode"}, "verifier");
        read(v, "layers", c.ver_layers);
        read(v, "heads", c.ver_heads);
        read(v, "width", c.ver_width);
        read(v, "k", c.ver_k);
        read(v, "window", c.ver_window);
        if (v.contains("mask_mode")) {
            const std::string m = v.at("mask_mode");
            if (m == "cache_compatible") c.ver_mode = MaskMode::cache_compatible;
            else if (m == "full_fidelity") c.ver_mode = MaskMode::full_fidelity;
            else throw std::invalid_argument("config: unknown mask_mode '" + m + "'");
        }
    }
    if (j.contains("train_wam")) {
        const auto& t = j.at("train_wam");
        reject_unknown(t, {"lr", "beta1", "beta2", "eps", "batch", "steps"}, "train_wam");
        read(t, "lr", c.wam_adam.lr);
        read(t, "beta1", c.wam_adam.beta1);
        read(t, "beta2", c.wam_adam.beta2);
        read(t, "eps", c.wam_adam.eps);
        read(t, "batch", c.wam_batch);
        read(t, "steps", c.wam_steps);
    }
    if (j.contains("train_verifier")) {
        const auto& t = j.at("train_verifier");
        reject_unknown(t, {"lr", "beta1", "beta2", "eps", "batch", "steps", "holdout_fraction"}, "train_verifier");
        read(t, "lr", c.ver_adam.lr);
        read(t, "beta1", c.ver_adam.beta1);
        read(t, "beta2", c.ver_adam.beta2);
        read(t, "eps", c.ver_adam.eps);
        read(t, "batch", c.ver_batch);
        read(t, "steps", c.ver_steps);
        read(t, "holdout_fraction", c.holdout_fraction);
    }
    if (j.contains("demos")) {
        const auto& d = j.at("demos");
        reject_unknown(d, {"episodes_per_task"}, "demos");
        read(d, "episodes_per_task", c.demos_per_task);
    }
    if (j.contains("verdata")) {
        const auto& v = j.at("verdata");
        reject_unknown(v,
                       {"target_size", "demo_rollout_pos_ratio", "rollout_neg_corrupt_ratio",
                        "rollout_episodes_per_task", "rollout_chunk", "late_noise_sigma", "tail_scale_min",
                        "tail_scale_max", "track_tol", "latent_track_tol"},
                       "verdata");
        read(v, "target_size", c.verdata.target_size);
        read(v, "demo_rollout_pos_ratio", c.verdata.demo_rollout_pos_ratio);
        read(v, "rollout_neg_corrupt_ratio", c.verdata.rollout_neg_corrupt_ratio);
        read(v, "rollout_episodes_per_task", c.verdata.rollout_episodes_per_task);
        read(v, "rollout_chunk", c.verdata.rollout_chunk);
        read(v, "late_noise_sigma", c.verdata.late_noise_sigma);
        read(v, "tail_scale_min", c.verdata.tail_scale_min);
        read(v, "tail_scale_max", c.verdata.tail_scale_max);
        read(v, "track_tol", c.verdata.track_tol);
        read(v, "latent_track_tol", c.verdata.latent_track_tol);
    }
    if (j.contains("exec")) {
        const auto& e = j.at("exec");
        reject_unknown(e, {"tau", "check_interval", "policies", "episodes_per_task"}, "exec");
        read(e, "tau", c.tau);
        read(e, "check_interval", c.check_interval);
        read(e, "policies", c.policies);
        read(e, "episodes_per_task", c.bench_episodes);
    }

    c.verdata.k = c.ver_k;
    c.verdata.gripper_dim = c.model.action_dim - 1;
    c.verdata.hard_noise_sigma = c.noise_sigma;
    c.verdata.success_radius = c.success_radius;
    c.validate();
    return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& ex) {
        throw std::runtime_error("config " + path + " is not valid JSON: " + ex.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["config_version"] = config_version;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["threads"] = threads;
    j["env"] = {{"t_max", env.t_max},
                {"max_delta", env.max_delta},
                {"grasp_radius", env.grasp_radius},
                {"contact_radius", env.contact_radius},
                {"noise_sigma", noise_sigma},
                {"success_radius", success_radius}};
    j["expert"] = {{"gain", expert.gain},
                   {"speed_cap", expert.speed_cap},
                   {"close_dist", expert.close_dist},
                   {"release_dist", expert.release_dist}};
    j["model"] = {{"horizon", model.horizon},   {"ratio", model.ratio},
                  {"latent_dim", model.latent_dim}, {"action_dim", model.action_dim},
                  {"n_sem", model.n_sem},       {"sem_dim", model.sem_dim},
                  {"width", model.width},       {"vid_loss_weight", model.vid_loss_weight}};
    j["verifier"] = {{"layers", ver_layers}, {"heads", ver_heads},   {"width", ver_width},
                     {"k", ver_k},           {"window", ver_window}, {"mask_mode", mask_mode_name(ver_mode)}};
    j["train_wam"] = {{"lr", wam_adam.lr},       {"beta1", wam_adam.beta1}, {"beta2", wam_adam.beta2},
                      {"eps", wam_adam.eps},     {"batch", wam_batch},      {"steps", wam_steps}};
    j["train_verifier"] = {{"lr", ver_adam.lr},   {"beta1", ver_adam.beta1},
                           {"beta2", ver_adam.beta2}, {"eps", ver_adam.eps},
                           {"batch", ver_batch},  {"steps", ver_steps},
                           {"holdout_fraction", holdout_fraction}};
    j["demos"] = {{"episodes_per_task", demos_per_task}};
    j["verdata"] = {{"target_size", verdata.target_size},
                    {"demo_rollout_pos_ratio", verdata.demo_rollout_pos_ratio},
                    {"rollout_neg_corrupt_ratio", verdata.rollout_neg_corrupt_ratio},
                    {"rollout_episodes_per_task", verdata.rollout_episodes_per_task},
                    {"rollout_chunk", verdata.rollout_chunk},
                    {"late_noise_sigma", verdata.late_noise_sigma},
                    {"tail_scale_min", verdata.tail_scale_min},
                    {"tail_scale_max", verdata.tail_scale_max},
                    {"track_tol", verdata.track_tol},
                    {"latent_track_tol", verdata.latent_track_tol}};
    j["exec"] = {{"tau", tau},
                 {"check_interval", check_interval},
                 {"policies", policies},
                 {"episodes_per_task", bench_episodes}};
    return j;
}

std::string RunConfig::hash() const {
    nlohmann::json j = to_json();
    j.erase("out_dir");
    j.erase("threads");
    const std::string dump = j.dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void RunConfig::apply_env_overrides() {
    if (const char* dir = std::getenv("FFDC_OUT_DIR")) out_dir = dir;
    if (const char* th = std::getenv("FFDC_THREADS")) threads = std::max(1, std::atoi(th));
}

void RunConfig::validate() const {
    model.validate();
    verifier_config(Ablation::full).validate();
    if (noise_sigma <= 0.0) throw std::invalid_argument("config: insert-hard noise_sigma must be > 0");
    if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("config: tau must be in (0,1)");
    if (check_interval < 1 || check_interval % model.ratio != 0)
        throw std::invalid_argument("config: check_interval must be a positive multiple of the model ratio");
    if (ver_k > model.horizon) throw std::invalid_argument("config: verifier k exceeds the model horizon");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (wam_batch < 1 || wam_steps < 1 || ver_batch < 1 || ver_steps < 1)
        throw std::invalid_argument("config: training batch/steps must be >= 1");
    if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0)
        throw std::invalid_argument("config: holdout_fraction must be in (0,1)");
    if (verdata.rollout_chunk < 1 || verdata.rollout_chunk > model.horizon)
        throw std::invalid_argument("config: verdata rollout_chunk must be in [1, horizon]");
    for (const auto& p : policies) {
        const ExecPolicy pol = ExecPolicy::parse(p, tau, ver_k, check_interval);
        if (pol.kind == ExecPolicy::Kind::fixed && pol.n > model.horizon)
            throw std::invalid_argument("config: fixed policy n exceeds the model horizon");
    }
}

VerifierConfig RunConfig::verifier_config(Ablation ablation) const {
    VerifierConfig v;
    v.layers = ver_layers;
    v.heads = ver_heads;
    v.width = ver_width;
    v.k = ver_k;
    v.window = ver_window;
    v.ratio = model.ratio;
    v.mode = ver_mode;
    v.ablation = ablation;
    v.latent_dim = model.latent_dim;
    v.sem_dim = model.sem_dim;
    v.action_dim = model.action_dim;
    v.n_sem = model.n_sem;
    return v;
}

TaskSpec RunConfig::task_spec(TaskId id, uint64_t episode_seed) const {
    return TaskSpec::make(id, episode_seed, noise_sigma, success_radius);
}

}  // namespace ffdc
