#pragma once

#include <vector>

#include "ffdc/env.hpp"
#include "ffdc/rng.hpp"

namespace ffdc {

// Synthetic action-segment corruptions. Every operator preserves sequence
// length and action dimensionality.

// Exchanges the actions at two disjoint index pairs. Pairs are drawn without
// replacement; applying the same pairs twice restores the input.
struct SwapPairs {
    int a0 = 0, a1 = 0, b0 = 0, b1 = 0;
};
SwapPairs draw_swap_pairs(int len, Rng& rng);  // requires len >= 4
std::vector<Action> temporal_swap(const std::vector<Action>& actions, const SwapPairs& pairs);
std::vector<Action> temporal_swap(const std::vector<Action>& actions, Rng& rng);

// Negates the listed coordinates in every action.
std::vector<Action> gripper_flip(const std::vector<Action>& actions, const std::vector<int>& gripper_dims);

// Adds iid Gaussian(0, sigma^2) per coordinate to indices >= ceil(len/2);
// the first half stays bit-identical.
std::vector<Action> late_noise(const std::vector<Action>& actions, double sigma, Rng& rng);

// Scales the motion coordinates (all but the gripper coordinate) of a random
// suffix by a factor drawn uniformly from [scale_min, scale_max]. Suffix start
// is uniform over {1 .. len-1}.
struct TailScaleDraw {
    int suffix_start = 0;
    double scale = 1.0;
};
TailScaleDraw draw_tail_scale(int len, double scale_min, double scale_max, Rng& rng);  // requires len >= 2
std::vector<Action> tail_scale(const std::vector<Action>& actions, const TailScaleDraw& draw, int gripper_dim);
std::vector<Action> tail_scale(const std::vector<Action>& actions, double scale_min, double scale_max,
                               int gripper_dim, Rng& rng);

}  // namespace ffdc
