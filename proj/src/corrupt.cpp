#include "ffdc/corrupt.hpp"

#include <algorithm>
#include <stdexcept>

namespace ffdc {

SwapPairs draw_swap_pairs(int len, Rng& rng) {
    if (len < 4) throw std::invalid_argument("temporal_swap: sequence must have at least 4 actions");
    // Four distinct indices drawn without replacement, grouped into two pairs.
    std::vector<int> picked;
    while (picked.size() < 4) {
        const int c = static_cast<int>(rng.uniform_int(0, len - 1));
        if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
    }
    return SwapPairs{picked[0], picked[1], picked[2], picked[3]};
}

std::vector<Action> temporal_swap(const std::vector<Action>& actions, const SwapPairs& p) {
    std::vector<Action> out = actions;
    std::swap(out[p.a0], out[p.a1]);
    std::swap(out[p.b0], out[p.b1]);
    return out;
}

std::vector<Action> temporal_swap(const std::vector<Action>& actions, Rng& rng) {
    return temporal_swap(actions, draw_swap_pairs(static_cast<int>(actions.size()), rng));
}

std::vector<Action> gripper_flip(const std::vector<Action>& actions, const std::vector<int>& gripper_dims) {
    for (int d : gripper_dims)
        if (d < 0 || d >= static_cast<int>(actions.empty() ? 0 : actions[0].size()))
            throw std::invalid_argument("gripper_flip: invalid dimension index " + std::to_string(d));
    std::vector<Action> out = actions;
    for (auto& a : out)
        for (int d : gripper_dims) a[d] = -a[d];
    return out;
}

std::vector<Action> late_noise(const std::vector<Action>& actions, double sigma, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("late_noise: sigma must be >= 0");
    std::vector<Action> out = actions;
    const int len = static_cast<int>(out.size());
    const int first = (len + 1) / 2;  // ceil(len/2)
    for (int i = first; i < len; ++i)
        for (double& c : out[i]) c += rng.normal(0.0, sigma);
    return out;
}

TailScaleDraw draw_tail_scale(int len, double scale_min, double scale_max, Rng& rng) {
    if (len < 2) throw std::invalid_argument("tail_scale: sequence must have at least 2 actions");
    TailScaleDraw d;
    d.suffix_start = static_cast<int>(rng.uniform_int(1, len - 1));
    d.scale = rng.uniform(scale_min, scale_max);
    return d;
}

std::vector<Action> tail_scale(const std::vector<Action>& actions, const TailScaleDraw& draw, int gripper_dim) {
    std::vector<Action> out = actions;
    for (int i = draw.suffix_start; i < static_cast<int>(out.size()); ++i)
        for (int d = 0; d < static_cast<int>(out[i].size()); ++d)
            if (d != gripper_dim) out[i][d] *= draw.scale;
    return out;
}

std::vector<Action> tail_scale(const std::vector<Action>& actions, double scale_min, double scale_max,
                               int gripper_dim, Rng& rng) {
    return tail_scale(actions, draw_tail_scale(static_cast<int>(actions.size()), scale_min, scale_max, rng),
                      gripper_dim);
}

}  // namespace ffdc
