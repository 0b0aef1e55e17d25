#include "ffdc/verdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace ffdc {

namespace {

Tensor tensor_from_json(const nlohmann::json& j) {
    const int rows = j["rows"];
    const int cols = j["cols"];
    std::vector<double> data = j["data"].get<std::vector<double>>();
    return Tensor(rows, cols, std::move(data));
}

nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"rows", t.rows}, {"cols", t.cols}, {"data", t.v}};
}

double latent_linf(const Latent& a, const Latent& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

int grasp_arrival_step(const Episode& ep) {
    for (size_t t = 1; t < ep.states.size(); ++t)
        if (ep.states[t].holding && !ep.states[t - 1].holding) return static_cast<int>(t);
    return -1;
}

struct RolloutChunk {
    PredictedRollout roll;
    std::vector<Latent> realized;  // realized[t] after executing t actions; realized[0] = conditioning
    int executed = 0;
};

struct RolloutRun {
    TaskId task;
    uint64_t seed = 0;
    std::vector<RolloutChunk> chunks;
    bool success = false;
};

RolloutRun collect_rollout(const Wam& wam, const TaskSpec& spec, const EnvParams& params,
                           const LatentEncoder& enc, int chunk_len) {
    RolloutRun run;
    run.task = spec.id;
    run.seed = spec.seed;
    Env env(spec, params);
    Latent obs = enc.encode(env.state(), params.t_max);
    bool done = false;
    while (!done) {
        RolloutChunk chunk;
        chunk.roll = wam.predict(obs, spec.id, env.state().step_index);
        chunk.realized.push_back(obs);
        const int n = std::min<int>(chunk_len, static_cast<int>(chunk.roll.actions.size()));
        for (int i = 0; i < n && !done; ++i) {
            const StepResult res = env.step(chunk.roll.actions[i]);
            obs = enc.encode(env.state(), params.t_max);
            chunk.realized.push_back(obs);
            chunk.executed += 1;
            if (res.success) run.success = true;
            done = res.done;
        }
        run.chunks.push_back(std::move(chunk));
    }
    return run;
}

}  // namespace

std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::demo_pos: return "demo_pos";
        case Provenance::rollout_pos: return "rollout_pos";
        case Provenance::rollout_neg: return "rollout_neg";
        case Provenance::corrupt_swap: return "corrupt_swap";
        case Provenance::corrupt_flip: return "corrupt_flip";
        case Provenance::corrupt_noise: return "corrupt_noise";
        case Provenance::corrupt_tail: return "corrupt_tail";
    }
    return "demo_pos";
}

Provenance parse_provenance(const std::string& name) {
    for (Provenance p : {Provenance::demo_pos, Provenance::rollout_pos, Provenance::rollout_neg,
                         Provenance::corrupt_swap, Provenance::corrupt_flip, Provenance::corrupt_noise,
                         Provenance::corrupt_tail})
        if (provenance_name(p) == name) return p;
    throw std::invalid_argument("unknown provenance '" + name + "'");
}

bool provenance_is_positive(Provenance p) {
    return p == Provenance::demo_pos || p == Provenance::rollout_pos;
}

PredictedRollout make_pseudo_rollout(const Episode& ep, int s, int horizon, int ratio, const Tensor& semantic) {
    const int T = ep.length();
    auto [action_idx, latent_idx] = window_indices(T, s, horizon, ratio);
    PredictedRollout roll;
    roll.task = ep.task;
    roll.origin_step = s;
    roll.actions.resize(horizon);
    for (int i = 0; i < horizon; ++i) roll.actions[i] = ep.actions[std::min(action_idx[i], T - 1)];
    roll.latents.resize(horizon / ratio);
    for (int j = 0; j < horizon / ratio; ++j) roll.latents[j] = ep.latents[latent_idx[j]];
    roll.semantic = semantic;
    roll.cond_latent = ep.latents[s];
    return roll;
}

ReplayResult replay_segment(const Episode& ep, const TaskSpec& spec, const EnvParams& params, int start,
                            const std::vector<Action>& segment) {
    if (start + static_cast<int>(segment.size()) > ep.length())
        throw std::invalid_argument("replay_segment: segment extends past the recorded episode");
    Env env(spec, params);
    for (int t = 0; t < start; ++t) env.step(ep.actions[t]);
    ReplayResult res;
    for (size_t i = 0; i < segment.size(); ++i) {
        env.step(segment[i]);
        const EnvState& got = env.state();
        const EnvState& ref = ep.states[start + i + 1];
        const double dev = std::max(std::max(std::abs(got.agent_x - ref.agent_x), std::abs(got.agent_y - ref.agent_y)),
                                    std::max(std::abs(got.object_x - ref.object_x), std::abs(got.object_y - ref.object_y)));
        res.max_position_dev = std::max(res.max_position_dev, dev);
        if (got.holding != ref.holding) res.holding_mismatch = true;
    }
    return res;
}

VerifierDataset build_dataset(const std::vector<Episode>& demos, const Wam& wam, const EnvParams& env_params,
                              const VerdataConfig& cfg, uint64_t seed, const std::string& config_hash) {
    if (cfg.k < 4) throw std::invalid_argument("verdata: k must be >= 4 for the swap corruption");
    const WamConfig& wcfg = wam.config();
    const int H = wcfg.horizon;
    const int r = wcfg.ratio;
    if (cfg.k % r != 0 || cfg.k > H) throw std::invalid_argument("verdata: k must be an r-multiple within the horizon");
    LatentEncoder enc(wcfg.latent_dim);

    std::vector<const Episode*> demo_ok[2];
    for (const auto& ep : demos)
        if (ep.success) demo_ok[ep.task == TaskId::transport_easy ? 0 : 1].push_back(&ep);
    if (demo_ok[0].empty() && demo_ok[1].empty())
        throw std::invalid_argument("verdata: no successful demonstrations supplied");

    VerifierDataset ds;
    auto& manifest = ds.manifest;
    manifest.config_hash = config_hash;

    const int n_pos_target = cfg.target_size / 2;
    const int n_neg_target = cfg.target_size - n_pos_target;
    const int demo_pos_target = static_cast<int>(std::lround(n_pos_target * cfg.demo_rollout_pos_ratio));
    const int rollout_pos_target = n_pos_target - demo_pos_target;
    const int rollout_neg_target = static_cast<int>(std::lround(n_neg_target * cfg.rollout_neg_corrupt_ratio));
    const int corrupt_target = n_neg_target - rollout_neg_target;

    const auto sample_demo_window = [&](Rng& rng, const Episode*& ep_out, int& s_out, int& t_off_out) {
        // Windows fully inside the recorded span so the oracle has references.
        for (int attempt = 0; attempt < 256; ++attempt) {
            const auto& pool = demo_ok[rng.uniform01() < 0.5 && !demo_ok[0].empty() ? 0 : 1];
            const auto& pool2 = pool.empty() ? demo_ok[pool.empty() && !demo_ok[0].empty() ? 0 : 1] : pool;
            if (pool2.empty()) continue;
            const Episode* ep = pool2[rng.uniform_int(0, static_cast<int>(pool2.size()) - 1)];
            const int T = ep->length();
            const int max_start = T - cfg.k;  // s + t_off <= T - k
            if (max_start < 1) continue;
            const int max_off_slots = std::min((H - cfg.k) / r, (max_start - 1) / r);
            const int t_off = r * static_cast<int>(rng.uniform_int(0, std::max(0, max_off_slots)));
            const int s = static_cast<int>(rng.uniform_int(1, max_start - t_off));
            ep_out = ep;
            s_out = s;
            t_off_out = t_off;
            return true;
        }
        return false;
    };

    // Demo positives.
    {
        Rng rng = Rng::stream(seed, "verdata-demo-pos");
        int made = 0, attempts = 0;
        while (made < demo_pos_target && attempts < demo_pos_target * 64) {
            ++attempts;
            const Episode* ep;
            int s, t_off;
            if (!sample_demo_window(rng, ep, s, t_off)) break;
            PredictedRollout roll = make_pseudo_rollout(*ep, s, H, r, wam.semantic_tokens(ep->task));
            VerifierSample vs;
            vs.bundle = assemble_input(roll, ep->latents[s + t_off], t_off, cfg.k);
            vs.label = 1;
            vs.prov = Provenance::demo_pos;
            vs.task = ep->task;
            vs.episode_seed = ep->seed;
            vs.s = s;
            vs.offset = t_off;
            vs.k = cfg.k;
            ds.samples.push_back(std::move(vs));
            ++made;
        }
        if (made < demo_pos_target)
            manifest.warnings.push_back("demo positives short: " + std::to_string(made) + "/" +
                                        std::to_string(demo_pos_target));
    }

    // Rollout windows (positives from successful episodes that track the
    // prediction, negatives from failed episodes that deviate).
    std::vector<VerifierSample> rollout_pos, rollout_neg;
    {
        Rng rng = Rng::stream(seed, "verdata-rollouts");
        for (int t = 0; t < 2; ++t) {
            const TaskId task = t == 0 ? TaskId::transport_easy : TaskId::insert_hard;
            for (int e = 0; e < cfg.rollout_episodes_per_task; ++e) {
                const uint64_t ep_seed = Rng::stream(seed, "verdata-rollout-seed", t * 1000003ULL + e).next_u64();
                TaskSpec spec = TaskSpec::make(task, ep_seed, cfg.hard_noise_sigma, cfg.success_radius);
                RolloutRun run = collect_rollout(wam, spec, env_params, enc, cfg.rollout_chunk);
                for (const auto& chunk : run.chunks) {
                    for (int t_off = 0; t_off + cfg.k <= chunk.executed; t_off += r) {
                        double dev = 0.0;
                        for (int j = 1; j <= cfg.k / r; ++j) {
                            const int m = t_off + j * r;
                            dev = std::max(dev, latent_linf(chunk.realized[m], chunk.roll.latents[m / r - 1]));
                        }
                        const bool tracked = dev <= cfg.latent_track_tol;
                        if (run.success != tracked) continue;  // ambiguous window, drop
                        VerifierSample vs;
                        vs.bundle = assemble_input(chunk.roll, chunk.realized[t_off], t_off, cfg.k);
                        vs.label = run.success ? 1 : 0;
                        vs.prov = run.success ? Provenance::rollout_pos : Provenance::rollout_neg;
                        vs.task = task;
                        vs.episode_seed = ep_seed;
                        vs.s = chunk.roll.origin_step;
                        vs.offset = t_off;
                        vs.k = cfg.k;
                        (run.success ? rollout_pos : rollout_neg).push_back(std::move(vs));
                    }
                }
            }
        }
        // Deterministic thinning to the targets.
        const auto thin = [&](std::vector<VerifierSample>& v, int target, const char* what) {
            if (static_cast<int>(v.size()) > target) {
                // Spread selection across episodes instead of truncating.
                std::vector<VerifierSample> keep;
                const double stride = static_cast<double>(v.size()) / target;
                for (int i = 0; i < target; ++i) keep.push_back(v[static_cast<size_t>(i * stride)]);
                v = std::move(keep);
            } else if (static_cast<int>(v.size()) < target) {
                manifest.warnings.push_back(std::string(what) + " short: " + std::to_string(v.size()) + "/" +
                                            std::to_string(target));
            }
        };
        thin(rollout_pos, rollout_pos_target, "rollout positives");
        thin(rollout_neg, rollout_neg_target, "rollout negatives");
    }
    for (auto& vs : rollout_pos) ds.samples.push_back(std::move(vs));
    int corrupt_quota = corrupt_target;
    {
        // Any rollout-negative shortfall is absorbed by extra corruptions to
        // preserve the 50/50 class balance.
        const int have = static_cast<int>(rollout_neg.size());
        corrupt_quota += std::max(0, rollout_neg_target - have);
    }
    for (auto& vs : rollout_neg) ds.samples.push_back(std::move(vs));

    // Corrupted negatives, label-validated by the replay oracle.
    {
        Rng rng = Rng::stream(seed, "verdata-corrupt");
        int made = 0, attempts = 0;
        const int max_attempts = corrupt_quota * 32 + 256;
        while (made < corrupt_quota && attempts < max_attempts) {
            ++attempts;
            const Episode* ep;
            int s, t_off;
            if (!sample_demo_window(rng, ep, s, t_off)) break;
            PredictedRollout roll = make_pseudo_rollout(*ep, s, H, r, wam.semantic_tokens(ep->task));

            std::vector<Action> segment(roll.actions.begin() + t_off, roll.actions.begin() + t_off + cfg.k);
            const int op = static_cast<int>(rng.uniform_int(0, 3));
            Provenance prov;
            std::vector<Action> corrupted;
            switch (op) {
                case 0:
                    corrupted = temporal_swap(segment, rng);
                    prov = Provenance::corrupt_swap;
                    break;
                case 1:
                    corrupted = gripper_flip(segment, {cfg.gripper_dim});
                    prov = Provenance::corrupt_flip;
                    break;
                case 2:
                    corrupted = late_noise(segment, cfg.late_noise_sigma, rng);
                    prov = Provenance::corrupt_noise;
                    break;
                default:
                    corrupted = tail_scale(segment, cfg.tail_scale_min, cfg.tail_scale_max, cfg.gripper_dim, rng);
                    prov = Provenance::corrupt_tail;
                    break;
            }

            TaskSpec spec = TaskSpec::make(ep->task, ep->seed, cfg.hard_noise_sigma, cfg.success_radius);
            const ReplayResult replay = replay_segment(*ep, spec, env_params, s + t_off, corrupted);
            if (!replay.fails(cfg.track_tol)) continue;  // harmless corruption, discard instead of mislabel

            for (int i = 0; i < cfg.k; ++i) roll.actions[t_off + i] = corrupted[i];
            VerifierSample vs;
            vs.bundle = assemble_input(roll, ep->latents[s + t_off], t_off, cfg.k);
            vs.label = 0;
            vs.prov = prov;
            vs.task = ep->task;
            vs.episode_seed = ep->seed;
            vs.s = s;
            vs.offset = t_off;
            vs.k = cfg.k;
            ds.samples.push_back(std::move(vs));
            ++made;
        }
        if (made < corrupt_quota)
            manifest.warnings.push_back("corrupted negatives short: " + std::to_string(made) + "/" +
                                        std::to_string(corrupt_quota));
    }

    // Enforce the class balance by trimming the larger side.
    {
        std::vector<VerifierSample> pos, neg;
        for (auto& vs : ds.samples) (vs.label == 1 ? pos : neg).push_back(std::move(vs));
        const int keep = static_cast<int>(std::min(pos.size(), neg.size()));
        const auto trim = [&](std::vector<VerifierSample>& v) {
            if (static_cast<int>(v.size()) > keep) {
                std::vector<VerifierSample> kept;
                const double stride = static_cast<double>(v.size()) / keep;
                for (int i = 0; i < keep; ++i) kept.push_back(std::move(v[static_cast<size_t>(i * stride)]));
                v = std::move(kept);
            }
        };
        trim(pos);
        trim(neg);
        ds.samples.clear();
        for (auto& vs : pos) ds.samples.push_back(std::move(vs));
        for (auto& vs : neg) ds.samples.push_back(std::move(vs));
    }

    std::sort(ds.samples.begin(), ds.samples.end(), [](const VerifierSample& a, const VerifierSample& b) {
        if (a.episode_seed != b.episode_seed) return a.episode_seed < b.episode_seed;
        if (a.s != b.s) return a.s < b.s;
        if (a.offset != b.offset) return a.offset < b.offset;
        return provenance_name(a.prov) < provenance_name(b.prov);
    });

    for (const auto& vs : ds.samples) {
        manifest.provenance_counts[provenance_name(vs.prov)] += 1;
        (vs.label == 1 ? manifest.n_pos : manifest.n_neg) += 1;
    }
    manifest.positive_fraction =
        ds.samples.empty() ? 0.0 : static_cast<double>(manifest.n_pos) / ds.samples.size();
    return ds;
}

CorruptionAudit audit_grasp_corruptions(const std::vector<Episode>& demos, const Wam& wam,
                                        const EnvParams& env_params, const VerdataConfig& cfg, uint64_t seed,
                                        int trials) {
    CorruptionAudit audit;
    Rng rng = Rng::stream(seed, "grasp-audit");
    std::vector<const Episode*> pool;
    for (const auto& ep : demos)
        if (ep.success && ep.task == TaskId::insert_hard && grasp_arrival_step(ep) > 0) pool.push_back(&ep);
    if (pool.empty()) return audit;
    const int H = wam.config().horizon;
    const int r = wam.config().ratio;

    int attempts = 0;
    while (audit.tried < trials && attempts < trials * 64) {
        ++attempts;
        const Episode* ep = pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
        const int T = ep->length();
        const int grasp_apply = grasp_arrival_step(*ep) - 1;  // 0-based action index causing the grasp
        // Choose (s, t_off) so the grasp action falls inside the k-window.
        const int lo = std::max(1, grasp_apply - cfg.k + 1);
        const int hi = std::min(grasp_apply, T - cfg.k);
        if (hi < lo) continue;
        const int start = static_cast<int>(rng.uniform_int(lo, hi));  // absolute window start = s + t_off
        const int max_off_slots = std::min((H - cfg.k) / r, (start - 1) / r);
        const int t_off = max_off_slots > 0 ? r * static_cast<int>(rng.uniform_int(0, max_off_slots)) : 0;
        const int s = start - t_off;
        if (s < 1) continue;

        std::vector<Action> segment;
        for (int i = 0; i < cfg.k; ++i) segment.push_back(ep->actions[std::min(start + i, T - 1)]);
        const int op = static_cast<int>(rng.uniform_int(0, 3));
        std::vector<Action> corrupted;
        switch (op) {
            case 0: corrupted = temporal_swap(segment, rng); break;
            case 1: corrupted = gripper_flip(segment, {cfg.gripper_dim}); break;
            case 2: corrupted = late_noise(segment, cfg.late_noise_sigma, rng); break;
            default: corrupted = tail_scale(segment, cfg.tail_scale_min, cfg.tail_scale_max, cfg.gripper_dim, rng); break;
        }
        TaskSpec spec = TaskSpec::make(ep->task, ep->seed, cfg.hard_noise_sigma, cfg.success_radius);
        const ReplayResult replay = replay_segment(*ep, spec, env_params, start, corrupted);
        ++audit.tried;
        if (replay.fails(cfg.track_tol)) ++audit.failed;
    }
    return audit;
}

void save_dataset_jsonl(const std::string& path, const VerifierDataset& ds) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    nlohmann::json m;
    m["kind"] = "verdata_manifest";
    m["provenance_counts"] = ds.manifest.provenance_counts;
    m["n_pos"] = ds.manifest.n_pos;
    m["n_neg"] = ds.manifest.n_neg;
    m["positive_fraction"] = ds.manifest.positive_fraction;
    m["config_hash"] = ds.manifest.config_hash;
    m["warnings"] = ds.manifest.warnings;
    os << m.dump() << "\n";
    for (const auto& vs : ds.samples) {
        nlohmann::json j;
        j["k"] = vs.bundle.k;
        j["r"] = vs.bundle.r;
        j["sem"] = tensor_to_json(vs.bundle.sem);
        j["past"] = tensor_to_json(vs.bundle.past);
        j["past_pad"] = vs.bundle.past_pad;
        j["real"] = tensor_to_json(vs.bundle.real);
        j["fut"] = tensor_to_json(vs.bundle.fut);
        j["act"] = tensor_to_json(vs.bundle.act);
        j["label"] = vs.label;
        j["prov"] = provenance_name(vs.prov);
        j["task_id"] = task_name(vs.task);
        j["episode_seed"] = vs.episode_seed;
        j["s"] = vs.s;
        j["offset"] = vs.offset;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

VerifierDataset load_dataset_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("dataset " + path + " is empty");
    nlohmann::json m = nlohmann::json::parse(line);
    if (m.value("kind", "") != "verdata_manifest")
        throw std::runtime_error("dataset " + path + " is missing its manifest line");
    VerifierDataset ds;
    ds.manifest.provenance_counts = m["provenance_counts"].get<std::map<std::string, int>>();
    ds.manifest.n_pos = m["n_pos"];
    ds.manifest.n_neg = m["n_neg"];
    ds.manifest.positive_fraction = m["positive_fraction"];
    ds.manifest.config_hash = m["config_hash"];
    ds.manifest.warnings = m["warnings"].get<std::vector<std::string>>();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        VerifierSample vs;
        vs.bundle.k = j["k"];
        vs.bundle.r = j["r"];
        vs.bundle.sem = tensor_from_json(j["sem"]);
        vs.bundle.past = tensor_from_json(j["past"]);
        vs.bundle.past_pad = j["past_pad"].get<std::vector<uint8_t>>();
        vs.bundle.real = tensor_from_json(j["real"]);
        vs.bundle.fut = tensor_from_json(j["fut"]);
        vs.bundle.act = tensor_from_json(j["act"]);
        vs.label = j["label"];
        vs.prov = parse_provenance(j["prov"]);
        vs.task = parse_task(j["task_id"]);
        vs.episode_seed = j["episode_seed"];
        vs.s = j["s"];
        vs.offset = j["offset"];
        vs.k = vs.bundle.k;
        ds.samples.push_back(std::move(vs));
    }
    return ds;
}

std::vector<LabeledBundle> to_labeled_bundles(const std::vector<VerifierSample>& samples) {
    std::vector<LabeledBundle> out;
    out.reserve(samples.size());
    for (const auto& vs : samples) out.push_back(LabeledBundle{vs.bundle, vs.label});
    return out;
}

void split_dataset(const VerifierDataset& ds, double holdout_fraction, std::vector<VerifierSample>& train,
                   std::vector<VerifierSample>& holdout) {
    train.clear();
    holdout.clear();
    for (const auto& vs : ds.samples) {
        const uint64_t h = Rng::stream(vs.episode_seed, "verdata-split").next_u64();
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        (u < holdout_fraction ? holdout : train).push_back(vs);
    }
}

}  // namespace ffdc
