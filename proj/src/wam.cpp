#include "ffdc/wam.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "ffdc/graph.hpp"

namespace ffdc {

namespace {
constexpr int kNumTasks = 2;
int task_index(TaskId id) { return id == TaskId::transport_easy ? 0 : 1; }
}  // namespace

void WamConfig::validate() const {
    if (horizon <= 0 || ratio <= 0 || horizon % ratio != 0)
        throw std::invalid_argument("wam config: horizon must be a positive multiple of ratio");
    if (latent_dim <= 0 || action_dim <= 0 || n_sem <= 0 || sem_dim <= 0 || width <= 0)
        throw std::invalid_argument("wam config: dimensions must be positive");
}

int timestep_to_latent_slot(int timestep, int r) {
    if (r <= 0 || timestep < r || timestep % r != 0)
        throw std::invalid_argument("timestep_to_latent_slot: timestep must be a positive multiple of r");
    return timestep / r - 1;
}

std::pair<std::vector<int>, std::vector<int>> window_indices(int episode_len, int s, int horizon, int ratio) {
    if (episode_len < 1) throw std::invalid_argument("window_indices: episode length must be >= 1");
    if (horizon % ratio != 0) throw std::invalid_argument("window_indices: horizon not divisible by ratio");
    if (s < 1 || s > episode_len) throw std::invalid_argument("window_indices: s out of range");
    std::vector<int> action_idx(horizon);
    for (int i = 0; i < horizon; ++i) action_idx[i] = std::min(s + i, episode_len);
    std::vector<int> latent_idx(horizon / ratio);
    for (int j = 0; j < horizon / ratio; ++j) latent_idx[j] = std::min(s + (j + 1) * ratio, episode_len);
    return {std::move(action_idx), std::move(latent_idx)};
}

TrainWindow make_training_window(const Episode& ep, int s, int horizon, int ratio) {
    const int T = ep.length();
    auto [action_idx, latent_idx] = window_indices(T, s, horizon, ratio);
    TrainWindow w;
    w.episode_seed = ep.seed;
    w.task = ep.task;
    w.s = s;
    w.conditioning = ep.latents[s];
    const int adim = static_cast<int>(ep.actions[0].size());
    const int ldim = static_cast<int>(ep.latents[0].size());
    w.action_targets = Tensor(horizon, adim);
    for (int i = 0; i < horizon; ++i) {
        // Formula index T refers past the final action; repeat the last valid one.
        const Action& a = ep.actions[std::min(action_idx[i], T - 1)];
        for (int d = 0; d < adim; ++d) w.action_targets.at(i, d) = a[d];
    }
    w.latent_targets = Tensor(horizon / ratio, ldim);
    for (int j = 0; j < horizon / ratio; ++j) {
        const Latent& l = ep.latents[latent_idx[j]];
        for (int d = 0; d < ldim; ++d) w.latent_targets.at(j, d) = l[d];
    }
    w.action_indices = std::move(action_idx);
    w.latent_indices = std::move(latent_idx);
    return w;
}

TrainWindow sample_training_window(const Episode& ep, int horizon, int ratio, Rng& rng) {
    const int T = ep.length();
    const int s = static_cast<int>(rng.uniform_int(1, T));
    return make_training_window(ep, s, horizon, ratio);
}

Wam::Wam(const WamConfig& cfg, uint64_t seed) : cfg_(cfg), store_(seed) {
    cfg_.validate();
    store_.add("task_emb", kNumTasks * cfg_.n_sem, cfg_.sem_dim);
    store_.add("trunk1_obs_w", cfg_.latent_dim, cfg_.width);
    store_.add("trunk1_sem_w", cfg_.n_sem * cfg_.sem_dim, cfg_.width);
    store_.add("trunk1_b", 1, cfg_.width, ParamInit::zeros);
    for (int l = 2; l <= cfg_.depth; ++l) {
        store_.add("trunk" + std::to_string(l) + "_w", cfg_.width, cfg_.width);
        store_.add("trunk" + std::to_string(l) + "_b", 1, cfg_.width, ParamInit::zeros);
    }
    store_.add("act_head_w", cfg_.width, cfg_.horizon * cfg_.action_dim);
    store_.add("act_head_b", 1, cfg_.horizon * cfg_.action_dim, ParamInit::zeros);
    store_.add("lat_head_w", cfg_.width, cfg_.latent_slots() * cfg_.latent_dim);
    store_.add("lat_head_b", 1, cfg_.latent_slots() * cfg_.latent_dim, ParamInit::zeros);

    nlohmann::json meta;
    meta["kind"] = "wam";
    meta["horizon"] = cfg_.horizon;
    meta["ratio"] = cfg_.ratio;
    meta["latent_dim"] = cfg_.latent_dim;
    meta["action_dim"] = cfg_.action_dim;
    meta["n_sem"] = cfg_.n_sem;
    meta["sem_dim"] = cfg_.sem_dim;
    meta["width"] = cfg_.width;
    meta["depth"] = cfg_.depth;
    meta["vid_loss_weight"] = cfg_.vid_loss_weight;
    store_.meta_json = meta.dump();
}

Tensor Wam::trunk_input(const Latent& obs, TaskId task) const {
    if (static_cast<int>(obs.size()) != cfg_.latent_dim)
        throw std::invalid_argument("wam predict: observation latent has wrong dimension");
    const Tensor& emb = store_.value("task_emb");
    Tensor x(1, cfg_.n_sem * cfg_.sem_dim);
    const int base = task_index(task) * cfg_.n_sem;
    for (int t = 0; t < cfg_.n_sem; ++t)
        for (int d = 0; d < cfg_.sem_dim; ++d) x.v[t * cfg_.sem_dim + d] = emb.at(base + t, d);
    return x;
}

Tensor Wam::semantic_tokens(TaskId task) const {
    const Tensor& emb = store_.value("task_emb");
    Tensor out(cfg_.n_sem, cfg_.sem_dim);
    const int base = task_index(task) * cfg_.n_sem;
    for (int t = 0; t < cfg_.n_sem; ++t)
        for (int d = 0; d < cfg_.sem_dim; ++d) out.at(t, d) = emb.at(base + t, d);
    return out;
}

PredictedRollout Wam::predict(const Latent& obs, TaskId task, int origin_step) const {
    // Kept bit-compatible with the training graph: same op order, same
    // floating-point association.
    const Tensor emb_flat = trunk_input(obs, task);
    Tensor h = matmul(Tensor(1, cfg_.latent_dim, std::vector<double>(obs)), store_.value("trunk1_obs_w"));
    const Tensor hs = matmul(emb_flat, store_.value("trunk1_sem_w"));
    for (int j = 0; j < h.cols; ++j) h.v[j] += hs.v[j];
    const Tensor& b1 = store_.value("trunk1_b");
    for (int j = 0; j < h.cols; ++j) h.v[j] += b1.v[j];
    for (double& x : h.v) x = std::tanh(x);
    for (int l = 2; l <= cfg_.depth; ++l) {
        h = linear_rows(h, store_.value("trunk" + std::to_string(l) + "_w"),
                        store_.value("trunk" + std::to_string(l) + "_b"));
        for (double& x : h.v) x = std::tanh(x);
    }
    const Tensor acts = linear_rows(h, store_.value("act_head_w"), store_.value("act_head_b"));
    const Tensor lats = linear_rows(h, store_.value("lat_head_w"), store_.value("lat_head_b"));
    if (!acts.all_finite() || !lats.all_finite()) throw std::runtime_error("wam predict: non-finite output");

    PredictedRollout roll;
    roll.task = task;
    roll.origin_step = origin_step;
    roll.actions.resize(cfg_.horizon);
    for (int i = 0; i < cfg_.horizon; ++i)
        for (int d = 0; d < cfg_.action_dim; ++d) roll.actions[i][d] = acts.v[i * cfg_.action_dim + d];
    roll.latents.assign(cfg_.latent_slots(), Latent(cfg_.latent_dim, 0.0));
    for (int j = 0; j < cfg_.latent_slots(); ++j)
        for (int d = 0; d < cfg_.latent_dim; ++d) roll.latents[j][d] = lats.v[j * cfg_.latent_dim + d];
    const Tensor& emb = store_.value("task_emb");
    roll.semantic = Tensor(cfg_.n_sem, cfg_.sem_dim);
    const int base = task_index(task) * cfg_.n_sem;
    for (int t = 0; t < cfg_.n_sem; ++t)
        for (int d = 0; d < cfg_.sem_dim; ++d) roll.semantic.at(t, d) = emb.at(base + t, d);
    roll.cond_latent = obs;
    return roll;
}

std::pair<double, double> Wam::train_step(const std::vector<TrainWindow>& batch, const AdamConfig& adam) {
    if (batch.empty()) throw std::invalid_argument("wam train_step: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double sum_act = 0.0, sum_vid = 0.0;
    for (const auto& w : batch) {
        Graph g(&store_);
        const int obs = g.input(Tensor(1, cfg_.latent_dim, std::vector<double>(w.conditioning)));
        const int emb = g.slice_rows(g.param("task_emb"), task_index(w.task) * cfg_.n_sem, cfg_.n_sem);
        const int emb_flat = g.reshape(emb, 1, cfg_.n_sem * cfg_.sem_dim);
        int h = g.add(g.matmul(obs, g.param("trunk1_obs_w")), g.matmul(emb_flat, g.param("trunk1_sem_w")));
        h = g.add_row(h, g.param("trunk1_b"));
        h = g.tanh_op(h);
        for (int l = 2; l <= cfg_.depth; ++l) {
            h = g.add_row(g.matmul(h, g.param("trunk" + std::to_string(l) + "_w")),
                          g.param("trunk" + std::to_string(l) + "_b"));
            h = g.tanh_op(h);
        }
        const int act_out = g.reshape(g.add_row(g.matmul(h, g.param("act_head_w")), g.param("act_head_b")),
                                      cfg_.horizon, cfg_.action_dim);
        const int lat_out = g.reshape(g.add_row(g.matmul(h, g.param("lat_head_w")), g.param("lat_head_b")),
                                      cfg_.latent_slots(), cfg_.latent_dim);
        const int l_act = g.mse_loss(act_out, w.action_targets);
        const int l_vid = g.mse_loss(lat_out, w.latent_targets);
        const int loss = g.weighted_sum(l_act, l_vid, inv_b, cfg_.vid_loss_weight * inv_b);
        const double la = g.value(l_act).at(0, 0);
        const double lv = g.value(l_vid).at(0, 0);
        if (!std::isfinite(la) || !std::isfinite(lv))
            throw std::runtime_error("wam train_step: non-finite loss for window (seed=" +
                                     std::to_string(w.episode_seed) + ", s=" + std::to_string(w.s) + ")");
        sum_act += la;
        sum_vid += lv;
        g.backward(loss);
    }
    store_.adam_step(adam);
    return {sum_act * inv_b, sum_vid * inv_b};
}

void Wam::save(const std::string& path) const { store_.save(path); }

Wam Wam::load(const std::string& path) {
    ParamStore store = ParamStore::load(path);
    nlohmann::json meta = nlohmann::json::parse(store.meta_json);
    if (meta.value("kind", "") != "wam") throw std::runtime_error("checkpoint " + path + " is not a wam model");
    WamConfig cfg;
    cfg.horizon = meta["horizon"];
    cfg.ratio = meta["ratio"];
    cfg.latent_dim = meta["latent_dim"];
    cfg.action_dim = meta["action_dim"];
    cfg.n_sem = meta["n_sem"];
    cfg.sem_dim = meta["sem_dim"];
    cfg.width = meta["width"];
    cfg.depth = meta.value("depth", 2);
    cfg.vid_loss_weight = meta["vid_loss_weight"];
    cfg.validate();
    return Wam(cfg, std::move(store));
}

uint64_t Wam::forward_flops() const {
    const uint64_t in_dim = cfg_.latent_dim + cfg_.n_sem * cfg_.sem_dim;
    uint64_t f = in_dim * cfg_.width;
    f += static_cast<uint64_t>(cfg_.depth - 1) * cfg_.width * cfg_.width;
    f += static_cast<uint64_t>(cfg_.width) * cfg_.horizon * cfg_.action_dim;
    f += static_cast<uint64_t>(cfg_.width) * cfg_.latent_slots() * cfg_.latent_dim;
    return f;
}

}  // namespace ffdc
