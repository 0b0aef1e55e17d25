#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "ffdc/wam.hpp"

using namespace ffdc;

namespace {

std::vector<Episode> easy_demos(int n, const EnvParams& params) {
    const LatentEncoder enc(16);
    std::vector<Episode> out;
    for (int i = 0; i < n; ++i)
        out.push_back(run_expert_episode(TaskSpec::make(TaskId::transport_easy, 40000 + i), params,
                                         ExpertParams{}, enc));
    return out;
}

}  // namespace

TEST_CASE("window indices: clamped tail case T=10, s=9, H=4, r=2") {
    const auto [act, vid] = window_indices(10, 9, 4, 2);
    CHECK(act == std::vector<int>{9, 10, 10, 10});
    CHECK(vid == std::vector<int>{10, 10});
}

TEST_CASE("window indices: unclamped case T=10, s=1, H=4, r=2") {
    const auto [act, vid] = window_indices(10, 1, 4, 2);
    CHECK(act == std::vector<int>{1, 2, 3, 4});
    CHECK(vid == std::vector<int>{3, 5});
}

TEST_CASE("window sampling rejects H not divisible by r") {
    CHECK_THROWS_AS(window_indices(10, 1, 5, 2), std::invalid_argument);
}

TEST_CASE("mixture-of-horizon: clamped-window frequency matches H/T over 10k draws") {
    const int T = 100, H = 32;
    Rng rng(505);
    int clamped = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const int s = static_cast<int>(rng.uniform_int(1, T));
        if (s > T - H) ++clamped;
    }
    const double freq = static_cast<double>(clamped) / n;
    CHECK(std::abs(freq - static_cast<double>(H) / T) < 0.02);
}

TEST_CASE("every conditioning step s in 1..T can be drawn") {
    const int T = 12;
    Rng rng(7);
    std::vector<bool> seen(T + 1, false);
    for (int i = 0; i < 4000; ++i) seen[rng.uniform_int(1, T)] = true;
    for (int s = 1; s <= T; ++s) CHECK(seen[s]);
}

TEST_CASE("padding idempotence: s = T repeats the final action and frame everywhere") {
    const LatentEncoder enc(16);
    const Episode ep = run_expert_episode(TaskSpec::make(TaskId::transport_easy, 123), EnvParams{},
                                          ExpertParams{}, enc);
    const int T = ep.length();
    const TrainWindow w = make_training_window(ep, T, 32, 4);
    for (int i = 0; i < 32; ++i)
        for (int d = 0; d < 3; ++d) CHECK(w.action_targets.at(i, d) == ep.actions[T - 1][d]);
    for (int j = 0; j < 8; ++j)
        for (int d = 0; d < 16; ++d) CHECK(w.latent_targets.at(j, d) == ep.latents[T][d]);
}

TEST_CASE("latent slot index helper round-trips exhaustively for H <= 64") {
    for (int r : {1, 2, 4, 8}) {
        for (int H = r; H <= 64; H += r) {
            for (int slot = 0; slot < H / r; ++slot) {
                const int t = latent_slot_timestep(slot, r);
                CHECK(t == (slot + 1) * r);
                CHECK(timestep_to_latent_slot(t, r) == slot);
            }
        }
    }
    CHECK_THROWS_AS(timestep_to_latent_slot(3, 2), std::invalid_argument);
    CHECK_THROWS_AS(timestep_to_latent_slot(0, 2), std::invalid_argument);
}

TEST_CASE("predict: shape arithmetic and determinism") {
    WamConfig cfg;
    cfg.horizon = 32;
    cfg.ratio = 4;
    Wam wam(cfg, 99);
    const Latent obs(16, 0.1);
    const PredictedRollout a = wam.predict(obs, TaskId::transport_easy, 5);
    CHECK(a.actions.size() == 32);
    CHECK(a.latents.size() == 8);
    CHECK(a.origin_step == 5);
    CHECK(a.semantic.rows == 2);
    CHECK(a.cond_latent == obs);
    const PredictedRollout b = wam.predict(obs, TaskId::transport_easy, 5);
    for (size_t i = 0; i < a.actions.size(); ++i) CHECK(a.actions[i] == b.actions[i]);
    for (size_t j = 0; j < a.latents.size(); ++j) CHECK(a.latents[j] == b.latents[j]);
}

TEST_CASE("predict rejects a wrong-dimension observation") {
    Wam wam(WamConfig{}, 1);
    CHECK_THROWS_AS(wam.predict(Latent(9, 0.0), TaskId::transport_easy), std::invalid_argument);
}

TEST_CASE("train_step: targets equal to current predictions give zero loss and zero update") {
    WamConfig cfg;
    Wam wam(cfg, 7);
    const Latent obs(16, 0.2);
    const PredictedRollout roll = wam.predict(obs, TaskId::insert_hard);
    TrainWindow w;
    w.task = TaskId::insert_hard;
    w.s = 1;
    w.conditioning = obs;
    w.action_targets = Tensor(cfg.horizon, cfg.action_dim);
    for (int i = 0; i < cfg.horizon; ++i)
        for (int d = 0; d < cfg.action_dim; ++d) w.action_targets.at(i, d) = roll.actions[i][d];
    w.latent_targets = Tensor(cfg.latent_slots(), cfg.latent_dim);
    for (int j = 0; j < cfg.latent_slots(); ++j)
        for (int d = 0; d < cfg.latent_dim; ++d) w.latent_targets.at(j, d) = roll.latents[j][d];

    std::vector<std::vector<double>> before;
    for (const auto& p : wam.store().params()) before.push_back(p.value.v);
    const auto [la, lv] = wam.train_step({w}, AdamConfig{});
    CHECK(la == 0.0);
    CHECK(lv == 0.0);
    size_t i = 0;
    for (const auto& p : wam.store().params()) CHECK(p.value.v == before[i++]);
}

TEST_CASE("train_step: loss decreases on a frozen batch (overfit sanity)") {
    const EnvParams params;
    const auto demos = easy_demos(8, params);
    WamConfig cfg;
    Wam wam(cfg, 21);
    Rng rng(3);
    std::vector<TrainWindow> batch;
    for (int i = 0; i < 256; ++i)
        batch.push_back(sample_training_window(demos[rng.uniform_int(0, 7)], cfg.horizon, cfg.ratio, rng));
    AdamConfig adam;
    adam.lr = 3e-3;
    double first = 0.0, prev = 0.0;
    bool monotone = true;
    for (int step = 0; step < 50; ++step) {
        const auto [la, lv] = wam.train_step(batch, adam);
        const double loss = la + lv;
        if (step == 0) first = loss;
        else if (loss >= prev) monotone = false;
        prev = loss;
    }
    CHECK(monotone);
    CHECK(prev < first);
}

TEST_CASE("vid_loss_weight = 0 still trains the action head and freezes the latent head") {
    const EnvParams params;
    const auto demos = easy_demos(4, params);
    WamConfig cfg;
    cfg.vid_loss_weight = 0.0;
    Wam wam(cfg, 22);
    Rng rng(4);
    std::vector<TrainWindow> batch;
    for (int i = 0; i < 64; ++i)
        batch.push_back(sample_training_window(demos[rng.uniform_int(0, 3)], cfg.horizon, cfg.ratio, rng));
    const std::vector<double> lat_head_before = wam.store().value("lat_head_w").v;
    AdamConfig adam;
    adam.lr = 3e-3;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 30; ++step) {
        const auto [la, lv] = wam.train_step(batch, adam);
        (void)lv;
        if (step == 0) first = la;
        last = la;
    }
    CHECK(last < first);
    CHECK(wam.store().value("lat_head_w").v == lat_head_before);
}

TEST_CASE("train_step aborts on a poisoned parameter") {
    WamConfig cfg;
    Wam wam(cfg, 5);
    wam.store().value("trunk2_w").at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const EnvParams params;
    const auto demos = easy_demos(1, params);
    Rng rng(9);
    std::vector<TrainWindow> batch{sample_training_window(demos[0], cfg.horizon, cfg.ratio, rng)};
    CHECK_THROWS(wam.train_step(batch, AdamConfig{}));
}

TEST_CASE("checkpoint round trip preserves predictions and metadata") {
    namespace fs = std::filesystem;
    WamConfig cfg;
    cfg.horizon = 64;
    cfg.ratio = 4;
    Wam wam(cfg, 31);
    const std::string path = (fs::temp_directory_path() / "ffdc_wam_test.ckpt").string();
    wam.save(path);
    Wam back = Wam::load(path);
    CHECK(back.config().horizon == 64);
    const Latent obs(16, -0.3);
    const PredictedRollout a = wam.predict(obs, TaskId::transport_easy);
    const PredictedRollout b = back.predict(obs, TaskId::transport_easy);
    for (size_t i = 0; i < a.actions.size(); ++i) CHECK(a.actions[i] == b.actions[i]);
}

TEST_CASE("trained model reaches the object approach zone open-loop in most seeds") {
    const EnvParams params;
    const LatentEncoder enc(16);
    const auto demos = easy_demos(32, params);
    WamConfig cfg;  // H=32 default
    Wam wam(cfg, 77);
    Rng rng(6);
    AdamConfig adam;
    adam.lr = 3e-3;
    for (int step = 0; step < 400; ++step) {
        std::vector<TrainWindow> batch;
        for (int b = 0; b < 32; ++b)
            batch.push_back(sample_training_window(demos[rng.uniform_int(0, 31)], cfg.horizon, cfg.ratio, rng));
        wam.train_step(batch, adam);
    }
    // Approach zone: within the 0.15 contact radius of the object after the
    // first 16 predicted actions, executed open-loop from reset.
    const double zone = EnvParams{}.contact_radius;
    int reached = 0;
    const int seeds = 25;
    for (int i = 0; i < seeds; ++i) {
        Env env(TaskSpec::make(TaskId::transport_easy, 90000 + i), params);
        const PredictedRollout roll = wam.predict(enc.encode(env.state(), params.t_max), TaskId::transport_easy);
        for (int t = 0; t < 16; ++t) env.step(roll.actions[t]);
        const double d = std::hypot(env.state().agent_x - env.state().object_x,
                                    env.state().agent_y - env.state().object_y);
        if (d <= zone) ++reached;
    }
    MESSAGE("open-loop 16-step approach reached zone in ", reached, "/", seeds);
    CHECK(reached >= static_cast<int>(0.8 * seeds));
}
