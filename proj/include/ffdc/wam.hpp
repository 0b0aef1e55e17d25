#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "ffdc/episode.hpp"
#include "ffdc/params.hpp"

namespace ffdc {

class KvCache;

struct WamConfig {
    int horizon = 32;      // H, actions per inference
    int ratio = 4;         // r, action steps per predicted latent
    int latent_dim = 16;
    int action_dim = 3;
    int n_sem = 2;         // semantic tokens per task
    int sem_dim = 8;
    int width = 64;
    int depth = 2;  // hidden tanh layers in the trunk
    double vid_loss_weight = 1.0;

    int latent_slots() const { return horizon / ratio; }
    void validate() const;
};

// Chunk-relative timestep conventions: action slot i (0-based) is applied at
// origin+i and arrives at origin+i+1; latent slot j (0-based) encodes the
// state at origin + (j+1)*r.
inline int latent_slot_timestep(int slot, int r) { return (slot + 1) * r; }
int timestep_to_latent_slot(int timestep, int r);  // throws unless timestep is a positive multiple of r

// One inference result: H actions, H/r future latents, semantic tokens, the
// conditioning observation, and (once the verifier has seen it) a KV cache.
struct PredictedRollout {
    TaskId task = TaskId::transport_easy;
    int origin_step = 0;
    std::vector<Action> actions;
    std::vector<Latent> latents;
    Tensor semantic;  // n_sem x sem_dim
    Latent cond_latent;
    std::shared_ptr<KvCache> kv;
};

// Mixture-of-horizon training window. Index lists follow the clamped-index
// formulas; padded tail entries repeat the final valid action/frame.
struct TrainWindow {
    uint64_t episode_seed = 0;
    TaskId task = TaskId::transport_easy;
    int s = 0;  // conditioning step, states[s]
    std::vector<int> action_indices;  // min(s+i, T), i = 0..H-1
    std::vector<int> latent_indices;  // min(s+(j+1)r, T), j = 0..H/r-1
    Latent conditioning;
    Tensor action_targets;  // H x action_dim
    Tensor latent_targets;  // H/r x latent_dim
};

std::pair<std::vector<int>, std::vector<int>> window_indices(int episode_len, int s, int horizon, int ratio);
TrainWindow make_training_window(const Episode& ep, int s, int horizon, int ratio);
TrainWindow sample_training_window(const Episode& ep, int horizon, int ratio, Rng& rng);

// Toy world-action model: a tanh MLP over (observation latent, task embedding)
// with separate regression heads for the action chunk and the future latents.
class Wam {
public:
    Wam(const WamConfig& cfg, uint64_t seed);

    PredictedRollout predict(const Latent& obs, TaskId task, int origin_step = 0) const;
    Tensor semantic_tokens(TaskId task) const;  // rows of the task-embedding table

    // Composite regression step; returns (action loss, latent loss) means.
    std::pair<double, double> train_step(const std::vector<TrainWindow>& batch, const AdamConfig& adam);

    void save(const std::string& path) const;
    static Wam load(const std::string& path);

    const WamConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    // Analytic multiply-accumulate count of one predict() pass; logged as the
    // hardware-independent inference cost proxy.
    uint64_t forward_flops() const;

private:
    explicit Wam(const WamConfig& cfg, ParamStore store) : cfg_(cfg), store_(std::move(store)) {}
    Tensor trunk_input(const Latent& obs, TaskId task) const;

    WamConfig cfg_;
    ParamStore store_;
};

}  // namespace ffdc
