#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "ffdc/episode.hpp"
#include "ffdc/rng.hpp"

using namespace ffdc;

TEST_CASE("reset: same spec twice gives identical initial states") {
    const TaskSpec spec = TaskSpec::make(TaskId::insert_hard, 4242);
    Env a(spec, EnvParams{});
    Env b(spec, EnvParams{});
    CHECK(a.state().agent_x == b.state().agent_x);
    CHECK(a.state().object_y == b.state().object_y);
    CHECK(a.state().goal_x == b.state().goal_x);
    CHECK(a.state().gripper == -1.0);
    CHECK_FALSE(a.state().holding);
}

TEST_CASE("transport-easy spec: transport phase and zero noise by definition") {
    const TaskSpec spec = TaskSpec::make(TaskId::transport_easy, 7);
    CHECK(spec.noise_sigma == 0.0);
    Env env(spec, EnvParams{});
    CHECK(env.state().phase == Phase::transport);
}

TEST_CASE("unknown task names are rejected") {
    CHECK_THROWS_AS(parse_task("grasp-mars"), std::invalid_argument);
    CHECK(parse_task("transport-easy") == TaskId::transport_easy);
    CHECK(parse_task("insert-hard") == TaskId::insert_hard);
}

TEST_CASE("1000 insert-hard resets: goal positions uniform over the goal region (chi^2, 4 bins)") {
    // 2x2 grid over the goal sub-region [0.75,0.90]^2; chi^2_3 at p=0.01 is 11.345.
    int bins[4] = {0, 0, 0, 0};
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        Env env(TaskSpec::make(TaskId::insert_hard, 100000 + i), EnvParams{});
        const double gx = env.state().goal_x, gy = env.state().goal_y;
        CHECK(gx >= 0.75);
        CHECK(gx <= 0.90);
        const int bx = gx < 0.825 ? 0 : 1;
        const int by = gy < 0.825 ? 0 : 1;
        bins[2 * by + bx] += 1;
    }
    const double expected = n / 4.0;
    double chi2 = 0.0;
    for (int b = 0; b < 4; ++b) chi2 += (bins[b] - expected) * (bins[b] - expected) / expected;
    CHECK(chi2 < 11.345);
}

TEST_CASE("zero action in transport phase leaves the position unchanged") {
    Env env(TaskSpec::make(TaskId::transport_easy, 3), EnvParams{});
    const double x = env.state().agent_x, y = env.state().agent_y;
    env.step({0.0, 0.0, -1.0});
    CHECK(env.state().agent_x == x);
    CHECK(env.state().agent_y == y);
}

TEST_CASE("noise_sigma = 0 makes step a pure deterministic function of state and action") {
    const TaskSpec spec = TaskSpec::make(TaskId::transport_easy, 11);
    Env a(spec, EnvParams{}), b(spec, EnvParams{});
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const Action act{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-1.0, 1.0)};
        a.step(act);
        b.step(act);
        CHECK(a.state().agent_x == b.state().agent_x);
        CHECK(a.state().agent_y == b.state().agent_y);
        CHECK(a.state().holding == b.state().holding);
    }
}

TEST_CASE("non-finite actions are rejected") {
    Env env(TaskSpec::make(TaskId::transport_easy, 3), EnvParams{});
    CHECK_THROWS_AS(env.step({std::nan(""), 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("open-loop replay of an expert demonstration succeeds on transport-easy") {
    const TaskSpec spec = TaskSpec::make(TaskId::transport_easy, 1234);
    const EnvParams params;
    const LatentEncoder enc(16);
    const Episode ep = run_expert_episode(spec, params, ExpertParams{}, enc);
    REQUIRE(ep.success);
    Env env(spec, params);
    bool success = false;
    for (const auto& a : ep.actions) success = env.step(a).success || success;
    CHECK(success);
}

TEST_CASE("expert controller: close at the object, release at the goal") {
    EnvState s;
    s.agent_x = s.object_x = 0.5;
    s.agent_y = s.object_y = 0.5;
    s.goal_x = s.goal_y = 0.9;
    s.holding = false;
    CHECK(expert_action(s)[2] > 0.0);  // at the object, not holding: close

    s.holding = true;
    s.agent_x = s.agent_y = 0.9;
    CHECK(expert_action(s)[2] < 0.0);  // holding at the goal center: release
}

TEST_CASE("100 expert episodes on transport-easy all succeed; mean length is the desk baseline") {
    const LatentEncoder enc(16);
    int successes = 0;
    double len = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Episode ep = run_expert_episode(TaskSpec::make(TaskId::transport_easy, 5000 + i), EnvParams{},
                                              ExpertParams{}, enc);
        successes += ep.success ? 1 : 0;
        len += ep.length();
    }
    CHECK(successes == 100);
    len /= 100.0;
    MESSAGE("transport-easy expert mean length: ", len);
    CHECK(len > 30.0);  // chunk sizes 16..64 all remain meaningful
    CHECK(len < 110.0);
}

TEST_CASE("latent encoding: deterministic, bounded, and sensitive to position") {
    const LatentEncoder enc(16);
    EnvState s;
    s.agent_x = 0.3;
    s.agent_y = 0.4;
    s.object_x = 0.5;
    s.object_y = 0.5;
    s.goal_x = 0.8;
    s.goal_y = 0.8;
    const Latent a = enc.encode(s, 120);
    const Latent b = enc.encode(s, 120);
    CHECK(a == b);
    for (double x : a) {
        CHECK(x > -1.0);
        CHECK(x < 1.0);
    }
    EnvState s2 = s;
    s2.agent_x += 0.1;
    const Latent c = enc.encode(s2, 120);
    double l2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) l2 += (a[i] - c[i]) * (a[i] - c[i]);
    CHECK(std::sqrt(l2) > 0.0);
}

TEST_CASE("clipping: any action sequence keeps every position inside the arena") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        Env env(TaskSpec::make(trial % 2 ? TaskId::insert_hard : TaskId::transport_easy, 900 + trial),
                EnvParams{});
        for (int t = 0; t < 120; ++t) {
            const Action a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
            const StepResult res = env.step(a);
            CHECK(env.state().agent_x >= 0.0);
            CHECK(env.state().agent_x <= 1.0);
            CHECK(env.state().agent_y >= 0.0);
            CHECK(env.state().agent_y <= 1.0);
            CHECK(env.state().object_x >= 0.0);
            CHECK(env.state().object_x <= 1.0);
            if (res.done) break;
        }
    }
}

TEST_CASE("per-axis action deltas are clipped to max_delta") {
    Env env(TaskSpec::make(TaskId::transport_easy, 31), EnvParams{});
    const double x = env.state().agent_x, y = env.state().agent_y;
    env.step({5.0, -5.0, -1.0});
    CHECK(env.state().agent_x == doctest::Approx(std::min(1.0, x + 0.05)).epsilon(1e-12));
    CHECK(env.state().agent_y == doctest::Approx(std::max(0.0, y - 0.05)).epsilon(1e-12));
}

TEST_CASE("seed isolation: an episode's outcome is independent of earlier episodes") {
    const LatentEncoder enc(16);
    const TaskSpec spec = TaskSpec::make(TaskId::insert_hard, 31337);
    const Episode fresh = run_expert_episode(spec, EnvParams{}, ExpertParams{}, enc);
    run_expert_episode(TaskSpec::make(TaskId::insert_hard, 1), EnvParams{}, ExpertParams{}, enc);
    run_expert_episode(TaskSpec::make(TaskId::transport_easy, 2), EnvParams{}, ExpertParams{}, enc);
    const Episode again = run_expert_episode(spec, EnvParams{}, ExpertParams{}, enc);
    CHECK(fresh.success == again.success);
    REQUIRE(fresh.length() == again.length());
    for (int t = 0; t < fresh.length(); ++t) CHECK(fresh.actions[t] == again.actions[t]);
}

TEST_CASE("holding implies a closed gripper throughout expert episodes") {
    const LatentEncoder enc(16);
    for (int i = 0; i < 5; ++i) {
        const Episode ep = run_expert_episode(TaskSpec::make(TaskId::insert_hard, 600 + i), EnvParams{},
                                              ExpertParams{}, enc);
        for (const auto& s : ep.states)
            if (s.holding) CHECK(s.gripper > 0.0);
    }
}

TEST_CASE("hardness ordering: delayed-observation expert does strictly worse on insert-hard") {
    // Expert acting on a one-step-stale observation.
    const auto delayed_sr = [](TaskId task) {
        int successes = 0;
        const int n = 60;
        for (int i = 0; i < n; ++i) {
            Env env(TaskSpec::make(task, 7000 + i), EnvParams{});
            EnvState stale = env.state();
            bool success = false;
            while (true) {
                const Action a = expert_action(stale, ExpertParams{});
                stale = env.state();
                const StepResult res = env.step(a);
                success = success || res.success;
                if (res.done) break;
            }
            successes += success ? 1 : 0;
        }
        return static_cast<double>(successes) / n;
    };
    const double easy = delayed_sr(TaskId::transport_easy);
    const double hard = delayed_sr(TaskId::insert_hard);
    MESSAGE("delayed expert SR easy=", easy, " hard=", hard);
    CHECK(hard < easy);
}

TEST_CASE("demo archive round-trips through JSONL") {
    namespace fs = std::filesystem;
    const LatentEncoder enc(16);
    std::vector<Episode> eps;
    eps.push_back(run_expert_episode(TaskSpec::make(TaskId::transport_easy, 1), EnvParams{}, ExpertParams{}, enc));
    eps.push_back(run_expert_episode(TaskSpec::make(TaskId::insert_hard, 2), EnvParams{}, ExpertParams{}, enc));
    const std::string path = (fs::temp_directory_path() / "ffdc_demo_roundtrip.jsonl").string();
    save_episodes_jsonl(path, eps);
    const std::vector<Episode> back = load_episodes_jsonl(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].task == TaskId::transport_easy);
    CHECK(back[0].success == eps[0].success);
    REQUIRE(back[1].length() == eps[1].length());
    for (int t = 0; t < back[1].length(); ++t) {
        CHECK(back[1].actions[t] == eps[1].actions[t]);
        CHECK(back[1].latents[t] == eps[1].latents[t]);
    }
}
