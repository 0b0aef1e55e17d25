#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "ffdc/rng.hpp"
#include "ffdc/tensor.hpp"

namespace ffdc {

using Action = std::array<double, 3>;  // (dx, dy, gripper command)
using Latent = std::vector<double>;

enum class TaskId { transport_easy, insert_hard };
enum class Phase { transport, contact };

std::string task_name(TaskId id);
TaskId parse_task(const std::string& name);  // throws on unknown task

struct TaskSpec {
    TaskId id = TaskId::transport_easy;
    uint64_t seed = 0;
    double noise_sigma = 0.0;    // contact-phase positional noise, arena units
    double success_radius = 0.04;

    static TaskSpec make(TaskId id, uint64_t seed, double hard_noise_sigma = 0.025,
                         double success_radius = 0.04);
};

struct EnvParams {
    int t_max = 120;
    double max_delta = 0.05;       // per-axis action clip
    double grasp_radius = 0.03;    // gripper toggle must happen this close to the object
    double contact_radius = 0.15;  // contact phase: holding and this close to the goal
};

struct EnvState {
    double agent_x = 0.0, agent_y = 0.0;
    double object_x = 0.0, object_y = 0.0;
    double goal_x = 0.0, goal_y = 0.0;
    double gripper = -1.0;  // -1 open .. +1 closed
    bool holding = false;
    Phase phase = Phase::transport;
    int step_index = 0;
};

struct StepResult {
    bool done = false;
    bool success = false;
};

// Raw feature vector fed to the latent encoder:
// [agent_x, agent_y, object_x, object_y, goal_x, goal_y, holding, dist(agent, object), dist(agent, goal)]
// The commanded gripper tension is deliberately not observable; a camera would
// not see it either, and policies must key on geometry instead of echoes of
// their own previous commands.
constexpr int kRawFeatureDim = 9;
std::array<double, kRawFeatureDim> raw_features(const EnvState& s, int t_max);

// Fixed random projection into latent space: latent = tanh(P * raw). P is drawn
// once from a build-constant seed and row-normalized, so every run of every
// binary sees the same encoding. Full column rank is verified at construction.
class LatentEncoder {
public:
    explicit LatentEncoder(int latent_dim = 16);
    Latent encode(const EnvState& s, int t_max) const;
    int dim() const { return dim_; }
    const Tensor& projection() const { return p_; }

private:
    int dim_;
    Tensor p_;  // dim x kRawFeatureDim
};

// Seedable 2D arena in [0,1]^2: free transport plus a stochastic contact phase
// near the goal. One instance per episode; the RNG stream is owned by the
// instance so episode outcomes never depend on each other.
class Env {
public:
    Env(const TaskSpec& spec, const EnvParams& params);

    const EnvState& reset();
    StepResult step(const Action& a);

    const EnvState& state() const { return state_; }
    const TaskSpec& spec() const { return spec_; }
    const EnvParams& params() const { return params_; }

private:
    TaskSpec spec_;
    EnvParams params_;
    EnvState state_;
    Rng rng_;
};

struct ExpertParams {
    double gain = 0.5;
    double speed_cap = 0.025;
    double close_dist = 0.02;        // gripper command crosses zero at this object distance
    double release_dist = 0.015;     // and, while holding, at this goal distance
    double gripper_sharpness = 20;   // slope of the tanh gripper profile
};

// Scripted proportional controller: approach, grasp, carry, release. The
// gripper command is a smooth tanh of distance, so its zero crossing is tied
// to geometry rather than to step timing. Retries after a failed release
// because the dropped object becomes the new approach target.
Action expert_action(const EnvState& s, const ExpertParams& p = {});

}  // namespace ffdc
