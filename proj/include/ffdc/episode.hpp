#pragma once

#include <string>
#include <vector>

#include "ffdc/env.hpp"

namespace ffdc {

// One recorded episode. states[t] is the state before actions[t] is applied;
// states.size() == actions.size() + 1 and latents align with states.
struct Episode {
    TaskId task = TaskId::transport_easy;
    uint64_t seed = 0;
    std::vector<EnvState> states;
    std::vector<Action> actions;
    std::vector<Latent> latents;
    bool success = false;

    int length() const { return static_cast<int>(actions.size()); }
};

// Runs the scripted expert closed-loop until done.
Episode run_expert_episode(const TaskSpec& spec, const EnvParams& params, const ExpertParams& expert,
                           const LatentEncoder& enc);

// Per-episode expert jitter for demonstration collection: small motion noise
// and a varied close distance widen the visited-state coverage without making
// the action distribution multimodal. The expert stays closed-loop, so
// episodes still succeed.
struct DemoJitter {
    double motion_noise = 0.003;   // per-axis Gaussian on the expert motion
    double gripper_noise = 0.10;   // Gaussian on the gripper command; makes some close
                                   // attempts miss, demonstrating the reopen recovery
    double close_lo = 0.016;       // per-episode close-distance range
    double close_hi = 0.024;
};
Episode run_jittered_expert_episode(const TaskSpec& spec, const EnvParams& params, const ExpertParams& expert,
                                    const DemoJitter& jitter, const LatentEncoder& enc);

// Demonstration archive: JSONL, one episode per line with fields
// {task_id, seed, states, actions, latents, success}.
void save_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> load_episodes_jsonl(const std::string& path);

}  // namespace ffdc
