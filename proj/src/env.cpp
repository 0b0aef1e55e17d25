#include "ffdc/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ffdc {

namespace {

constexpr uint64_t kProjectionSeed = 0x9e3779b97f4a7c15ULL;

double clampd(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

double dist(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

}  // namespace

std::string task_name(TaskId id) {
    return id == TaskId::transport_easy ? "transport-easy" : "insert-hard";
}

TaskId parse_task(const std::string& name) {
    if (name == "transport-easy") return TaskId::transport_easy;
    if (name == "insert-hard") return TaskId::insert_hard;
    throw std::invalid_argument("unknown task id '" + name + "' (expected transport-easy or insert-hard)");
}

TaskSpec TaskSpec::make(TaskId id, uint64_t seed, double hard_noise_sigma, double success_radius) {
    TaskSpec spec;
    spec.id = id;
    spec.seed = seed;
    spec.noise_sigma = id == TaskId::transport_easy ? 0.0 : hard_noise_sigma;
    spec.success_radius = success_radius;
    if (id == TaskId::insert_hard && spec.noise_sigma <= 0.0)
        throw std::invalid_argument("insert-hard requires noise_sigma > 0");
    return spec;
}

std::array<double, kRawFeatureDim> raw_features(const EnvState& s, int t_max) {
    (void)t_max;
    return {s.agent_x,
            s.agent_y,
            s.object_x,
            s.object_y,
            s.goal_x,
            s.goal_y,
            s.holding ? 1.0 : 0.0,
            std::hypot(s.agent_x - s.object_x, s.agent_y - s.object_y),
            std::hypot(s.agent_x - s.goal_x, s.agent_y - s.goal_y)};
}

LatentEncoder::LatentEncoder(int latent_dim) : dim_(latent_dim), p_(latent_dim, kRawFeatureDim) {
    Rng rng = Rng::stream(kProjectionSeed, "latent-projection", static_cast<uint64_t>(latent_dim));
    for (int i = 0; i < dim_; ++i) {
        double norm2 = 0.0;
        for (int j = 0; j < kRawFeatureDim; ++j) {
            const double g = rng.normal();
            p_.at(i, j) = g;
            norm2 += g * g;
        }
        const double scale = 0.7 / std::sqrt(norm2);
        for (int j = 0; j < kRawFeatureDim; ++j) p_.at(i, j) *= scale;
    }
    // Column-rank check via Gaussian elimination on a copy; any state change
    // must be able to move the latent.
    Tensor m = p_;
    int rank = 0;
    for (int col = 0; col < kRawFeatureDim && rank < dim_; ++col) {
        int pivot = -1;
        double best = 1e-9;
        for (int r = rank; r < dim_; ++r)
            if (std::abs(m.at(r, col)) > best) {
                best = std::abs(m.at(r, col));
                pivot = r;
            }
        if (pivot < 0) continue;
        for (int j = 0; j < kRawFeatureDim; ++j) std::swap(m.at(rank, j), m.at(pivot, j));
        for (int r = 0; r < dim_; ++r) {
            if (r == rank) continue;
            const double f = m.at(r, col) / m.at(rank, col);
            for (int j = 0; j < kRawFeatureDim; ++j) m.at(r, j) -= f * m.at(rank, j);
        }
        ++rank;
    }
    if (rank < std::min(dim_, kRawFeatureDim))
        throw std::runtime_error("LatentEncoder: projection is rank-deficient");
}

Latent LatentEncoder::encode(const EnvState& s, int t_max) const {
    const auto raw = raw_features(s, t_max);
    Latent out(dim_, 0.0);
    for (int i = 0; i < dim_; ++i) {
        double acc = 0.0;
        for (int j = 0; j < kRawFeatureDim; ++j) acc += p_.at(i, j) * raw[j];
        out[i] = std::tanh(acc);
    }
    return out;
}

Env::Env(const TaskSpec& spec, const EnvParams& params)
    : spec_(spec), params_(params), rng_(Rng::stream(spec.seed, "episode")) {
    if (spec_.id == TaskId::transport_easy && spec_.noise_sigma != 0.0)
        throw std::invalid_argument("transport-easy requires noise_sigma == 0");
    reset();
}

const EnvState& Env::reset() {
    rng_ = Rng::stream(spec_.seed, "episode");
    state_ = EnvState{};
    // Spawn sub-regions: agent lower-left, object mid-field, goal upper-right.
    state_.agent_x = rng_.uniform(0.05, 0.15);
    state_.agent_y = rng_.uniform(0.05, 0.15);
    state_.object_x = rng_.uniform(0.45, 0.55);
    state_.object_y = rng_.uniform(0.25, 0.35);
    state_.goal_x = rng_.uniform(0.75, 0.90);
    state_.goal_y = rng_.uniform(0.75, 0.90);
    state_.gripper = -1.0;
    state_.holding = false;
    state_.phase = Phase::transport;
    state_.step_index = 0;
    return state_;
}

StepResult Env::step(const Action& a) {
    for (double x : a)
        if (!std::isfinite(x)) throw std::invalid_argument("env step: non-finite action entry");
    if (state_.step_index >= params_.t_max)
        throw std::logic_error("env step: episode already finished");

    double dx = clampd(a[0], -params_.max_delta, params_.max_delta);
    double dy = clampd(a[1], -params_.max_delta, params_.max_delta);
    const double g_new = clampd(a[2], -1.0, 1.0);

    // Contact-phase noise perturbs the effected motion, judged on entry state.
    const bool contact = state_.holding &&
                         dist(state_.agent_x, state_.agent_y, state_.goal_x, state_.goal_y) <= params_.contact_radius;
    if (contact && spec_.noise_sigma > 0.0) {
        dx += rng_.normal(0.0, spec_.noise_sigma);
        dy += rng_.normal(0.0, spec_.noise_sigma);
    }

    state_.agent_x = clampd(state_.agent_x + dx, 0.0, 1.0);
    state_.agent_y = clampd(state_.agent_y + dy, 0.0, 1.0);
    if (state_.holding) {
        state_.object_x = state_.agent_x;
        state_.object_y = state_.agent_y;
    }

    bool released = false;
    if (!state_.holding && state_.gripper <= 0.0 && g_new > 0.0) {
        if (dist(state_.agent_x, state_.agent_y, state_.object_x, state_.object_y) <= params_.grasp_radius) {
            state_.holding = true;
            state_.object_x = state_.agent_x;
            state_.object_y = state_.agent_y;
        }
    } else if (state_.holding && g_new <= 0.0) {
        state_.holding = false;
        released = true;
    }
    state_.gripper = g_new;

    StepResult res;
    res.success = released &&
                  dist(state_.object_x, state_.object_y, state_.goal_x, state_.goal_y) <= spec_.success_radius;
    state_.step_index += 1;
    state_.phase = (state_.holding &&
                    dist(state_.agent_x, state_.agent_y, state_.goal_x, state_.goal_y) <= params_.contact_radius)
                       ? Phase::contact
                       : Phase::transport;
    res.done = res.success || state_.step_index >= params_.t_max;
    return res;
}

Action expert_action(const EnvState& s, const ExpertParams& p) {
    // Decelerate into a parking orbit just short of the target, so gripper
    // transitions happen while nearly stationary and mistimed clones of this
    // controller still toggle within range.
    const auto approach = [&](double tx, double ty, double park) -> std::array<double, 2> {
        const double dx = tx - s.agent_x;
        const double dy = ty - s.agent_y;
        const double d = std::hypot(dx, dy);
        if (d < 1e-9) return {0.0, 0.0};
        const double speed = std::min(p.speed_cap, p.gain * std::max(0.0, d - park));
        return {dx / d * speed, dy / d * speed};
    };

    if (!s.holding) {
        const double d = dist(s.agent_x, s.agent_y, s.object_x, s.object_y);
        // A positive gripper without a held object means the close attempt
        // missed; reopen while staying parked, then close again.
        if (s.gripper > 0.02) {
            const auto v = approach(s.object_x, s.object_y, 0.012);
            return {v[0], v[1], -0.6};
        }
        const double cmd = std::tanh(p.gripper_sharpness * (p.close_dist - d));
        const auto v = approach(s.object_x, s.object_y, 0.012);
        return {v[0], v[1], cmd};
    }
    const double d = dist(s.agent_x, s.agent_y, s.goal_x, s.goal_y);
    const double cmd = std::tanh(p.gripper_sharpness * (d - p.release_dist));
    const auto v = approach(s.goal_x, s.goal_y, 0.008);
    return {v[0], v[1], cmd};
}

}  // namespace ffdc
