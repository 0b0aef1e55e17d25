#pragma once

#include <map>
#include <string>
#include <vector>

#include "ffdc/corrupt.hpp"
#include "ffdc/episode.hpp"
#include "ffdc/verifier.hpp"
#include "ffdc/wam.hpp"

namespace ffdc {

enum class Provenance {
    demo_pos,
    rollout_pos,
    rollout_neg,
    corrupt_swap,
    corrupt_flip,
    corrupt_noise,
    corrupt_tail,
};

std::string provenance_name(Provenance p);
Provenance parse_provenance(const std::string& name);
bool provenance_is_positive(Provenance p);

struct VerifierSample {
    TokenBundle bundle;  // full (unablated) token window
    int label = 0;       // 1 iff provenance is demo_pos or rollout_pos
    Provenance prov = Provenance::demo_pos;
    TaskId task = TaskId::transport_easy;
    uint64_t episode_seed = 0;
    int s = 0;       // chunk origin step in the source episode
    int offset = 0;  // check offset within the chunk
    int k = 0;
};

struct VerdataConfig {
    int k = 8;
    int target_size = 6000;
    double demo_rollout_pos_ratio = 0.7;     // demo_pos share of positives
    double rollout_neg_corrupt_ratio = 0.2;  // rollout_neg share of negatives
    int rollout_episodes_per_task = 150;
    int rollout_chunk = 32;  // fixed-chunk execution used for rollout collection

    double late_noise_sigma = 0.03;
    double tail_scale_min = 0.1;
    double tail_scale_max = 0.6;
    int gripper_dim = 2;

    // Corrupted demo windows replay from an exact state snapshot with the
    // episode's own noise stream; a sample only stays negative when the replay
    // leaves this envelope (position deviation or holding mismatch).
    double track_tol = 0.02;
    // Rollout windows compare realized latents against the predicted ones.
    double latent_track_tol = 0.12;

    // Task parameters the source episodes were generated with; replay must
    // reconstruct the identical environment.
    double hard_noise_sigma = 0.025;
    double success_radius = 0.04;
};

struct DatasetManifest {
    std::map<std::string, int> provenance_counts;
    int n_pos = 0;
    int n_neg = 0;
    double positive_fraction = 0.0;
    std::string config_hash;
    std::vector<std::string> warnings;
};

struct VerifierDataset {
    std::vector<VerifierSample> samples;
    DatasetManifest manifest;
};

// Ground-truth pseudo-chunk: demo latents/actions sliced and tail-padded the
// same way training windows are, standing in for a perfect model.
PredictedRollout make_pseudo_rollout(const Episode& ep, int s, int horizon, int ratio, const Tensor& semantic);

// Replays an action segment open-loop from the exact state snapshot at episode
// step `start` and reports the worst deviation from the recorded trajectory.
// The spec must match the one the episode was generated with (same seed gives
// the same noise stream, so uncorrupted segments replay bit-exactly).
struct ReplayResult {
    double max_position_dev = 0.0;
    bool holding_mismatch = false;
    bool fails(double track_tol) const { return holding_mismatch || max_position_dev > track_tol; }
};
ReplayResult replay_segment(const Episode& ep, const TaskSpec& spec, const EnvParams& params, int start,
                            const std::vector<Action>& segment);

// D_ver builder: demo and successful-rollout windows become positives, failed
// rollouts and oracle-validated corruptions become negatives, balanced 50/50.
VerifierDataset build_dataset(const std::vector<Episode>& demos, const Wam& wam, const EnvParams& env_params,
                              const VerdataConfig& cfg, uint64_t seed, const std::string& config_hash);

// Fraction of corrupted grasp-covering windows that fail the replay oracle.
struct CorruptionAudit {
    int tried = 0;
    int failed = 0;
    double fail_rate() const { return tried ? static_cast<double>(failed) / tried : 0.0; }
};
CorruptionAudit audit_grasp_corruptions(const std::vector<Episode>& demos, const Wam& wam,
                                        const EnvParams& env_params, const VerdataConfig& cfg, uint64_t seed,
                                        int trials);

// Archive: one manifest line (counts, balance, config hash) followed by one
// sample per line.
void save_dataset_jsonl(const std::string& path, const VerifierDataset& ds);
VerifierDataset load_dataset_jsonl(const std::string& path);

std::vector<LabeledBundle> to_labeled_bundles(const std::vector<VerifierSample>& samples);

// Episode-keyed deterministic split; samples from one episode never straddle
// the boundary.
void split_dataset(const VerifierDataset& ds, double holdout_fraction, std::vector<VerifierSample>& train,
                   std::vector<VerifierSample>& holdout);

}  // namespace ffdc
