#include "ffdc/episode.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace ffdc {

namespace {

nlohmann::json state_to_json(const EnvState& s) {
    return nlohmann::json::array({s.agent_x, s.agent_y, s.object_x, s.object_y, s.goal_x, s.goal_y,
                                  s.gripper, s.holding ? 1 : 0, s.phase == Phase::contact ? 1 : 0,
                                  s.step_index});
}

EnvState state_from_json(const nlohmann::json& j) {
    EnvState s;
    s.agent_x = j[0];
    s.agent_y = j[1];
    s.object_x = j[2];
    s.object_y = j[3];
    s.goal_x = j[4];
    s.goal_y = j[5];
    s.gripper = j[6];
    s.holding = j[7].get<int>() != 0;
    s.phase = j[8].get<int>() != 0 ? Phase::contact : Phase::transport;
    s.step_index = j[9];
    return s;
}

}  // namespace

Episode run_expert_episode(const TaskSpec& spec, const EnvParams& params, const ExpertParams& expert,
                           const LatentEncoder& enc) {
    Episode ep;
    ep.task = spec.id;
    ep.seed = spec.seed;
    Env env(spec, params);
    ep.states.push_back(env.state());
    ep.latents.push_back(enc.encode(env.state(), params.t_max));
    while (true) {
        const Action a = expert_action(env.state(), expert);
        const StepResult res = env.step(a);
        ep.actions.push_back(a);
        ep.states.push_back(env.state());
        ep.latents.push_back(enc.encode(env.state(), params.t_max));
        if (res.success) ep.success = true;
        if (res.done) break;
    }
    return ep;
}

Episode run_jittered_expert_episode(const TaskSpec& spec, const EnvParams& params, const ExpertParams& expert,
                                    const DemoJitter& jitter, const LatentEncoder& enc) {
    Rng rng = Rng::stream(spec.seed, "demo-jitter");
    ExpertParams ep_params = expert;
    ep_params.close_dist = rng.uniform(jitter.close_lo, jitter.close_hi);
    Episode ep;
    ep.task = spec.id;
    ep.seed = spec.seed;
    Env env(spec, params);
    ep.states.push_back(env.state());
    ep.latents.push_back(enc.encode(env.state(), params.t_max));
    while (true) {
        Action a = expert_action(env.state(), ep_params);
        a[0] += rng.normal(0.0, jitter.motion_noise);
        a[1] += rng.normal(0.0, jitter.motion_noise);
        a[2] += rng.normal(0.0, jitter.gripper_noise);
        const StepResult res = env.step(a);
        ep.actions.push_back(a);
        ep.states.push_back(env.state());
        ep.latents.push_back(enc.encode(env.state(), params.t_max));
        if (res.success) ep.success = true;
        if (res.done) break;
    }
    return ep;
}

void save_episodes_jsonl(const std::string& path, const std::vector<Episode>& episodes) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& ep : episodes) {
        nlohmann::json j;
        j["task_id"] = task_name(ep.task);
        j["seed"] = ep.seed;
        nlohmann::json states = nlohmann::json::array();
        for (const auto& s : ep.states) states.push_back(state_to_json(s));
        j["states"] = states;
        nlohmann::json actions = nlohmann::json::array();
        for (const auto& a : ep.actions) actions.push_back(nlohmann::json::array({a[0], a[1], a[2]}));
        j["actions"] = actions;
        nlohmann::json latents = nlohmann::json::array();
        for (const auto& l : ep.latents) latents.push_back(l);
        j["latents"] = latents;
        j["success"] = ep.success;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<Episode> load_episodes_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<Episode> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Episode ep;
        ep.task = parse_task(j["task_id"]);
        ep.seed = j["seed"];
        for (const auto& s : j["states"]) ep.states.push_back(state_from_json(s));
        for (const auto& a : j["actions"]) ep.actions.push_back(Action{a[0], a[1], a[2]});
        for (const auto& l : j["latents"]) ep.latents.push_back(l.get<Latent>());
        ep.success = j["success"];
        if (ep.states.size() != ep.actions.size() + 1 || ep.latents.size() != ep.states.size())
            throw std::runtime_error("episode archive " + path + ": inconsistent episode lengths");
        out.push_back(std::move(ep));
    }
    return out;
}

}  // namespace ffdc
