#include "ffdc/exec.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace ffdc {

ExecPolicy ExecPolicy::fixed(int n) {
    if (n < 1) throw std::invalid_argument("fixed policy: n must be >= 1");
    ExecPolicy p;
    p.kind = Kind::fixed;
    p.n = n;
    return p;
}

ExecPolicy ExecPolicy::adaptive(double tau, int k, int check_interval) {
    if (tau <= 0.0 || tau >= 1.0) throw std::invalid_argument("adaptive policy: tau must be in (0,1)");
    if (check_interval < 1) throw std::invalid_argument("adaptive policy: check interval must be >= 1");
    ExecPolicy p;
    p.kind = Kind::adaptive;
    p.tau = tau;
    p.k = k;
    p.check_interval = check_interval;
    return p;
}

ExecPolicy ExecPolicy::parse(const std::string& text, double tau, int k, int check_interval) {
    if (text == "adaptive") return adaptive(tau, k, check_interval);
    std::string t = text;
    if (t.rfind("fixed:", 0) == 0) t = t.substr(6);
    else if (t.rfind("fixed", 0) == 0) t = t.substr(5);
    else throw std::invalid_argument("unknown policy '" + text + "' (expected fixedN or adaptive)");
    try {
        return fixed(std::stoi(t));
    } catch (const std::exception&) {
        throw std::invalid_argument("unknown policy '" + text + "' (expected fixedN or adaptive)");
    }
}

std::string ExecPolicy::name() const {
    return kind == Kind::fixed ? "fixed" + std::to_string(n) : "adaptive";
}

void VerifierChunkScorer::prepare(const PredictedRollout& roll) {
    cache_ = verifier_->cache_build(roll);
    origin_ = roll.origin_step;
}

double VerifierChunkScorer::score(const Latent& o_real, int t_off) {
    if (!cache_) throw std::logic_error("verifier scorer: score before prepare");
    if (cache_->origin_step != origin_) throw std::logic_error("verifier scorer: stale cache origin");
    return verifier_->score_cached(*cache_, o_real, t_off);
}

ExecutionTrace run_episode(const ExecPolicy& policy, const TaskSpec& spec, const EnvParams& params,
                           const LatentEncoder& enc, const PlannerFn& planner, uint64_t planner_flops,
                           ChunkScorer* scorer) {
    if (policy.kind == ExecPolicy::Kind::adaptive && scorer == nullptr)
        throw std::invalid_argument("run_episode: adaptive policy requires a scorer");
    ExecutionTrace trace;
    trace.policy = policy.name();
    trace.task = spec.id;
    trace.seed = spec.seed;

    Env env(spec, params);
    Latent obs = enc.encode(env.state(), params.t_max);
    bool done = false;
    while (!done) {
        PredictedRollout roll = planner(obs, spec.id, env.state().step_index);
        trace.wam_calls += 1;
        trace.flops += planner_flops;
        const int horizon = static_cast<int>(roll.actions.size());
        if (policy.kind == ExecPolicy::Kind::fixed && policy.n > horizon)
            throw std::invalid_argument("run_episode: fixed n exceeds the model horizon");
        if (policy.kind == ExecPolicy::Kind::adaptive) scorer->prepare(roll);
        const int limit = policy.kind == ExecPolicy::Kind::fixed ? policy.n : horizon;

        int executed = 0;
        bool replan = false;
        while (!done && executed < limit && !replan) {
            const Action& a = roll.actions[executed];
            const StepResult res = env.step(a);
            obs = enc.encode(env.state(), params.t_max);
            trace.actions.push_back(a);
            executed += 1;
            trace.steps += 1;
            trace.success = trace.success || res.success;
            done = res.done;
            if (!done && policy.kind == ExecPolicy::Kind::adaptive && executed % policy.check_interval == 0 &&
                executed + policy.k <= horizon) {
                const double e = scorer->score(obs, executed);
                trace.verifier_checks += 1;
                CheckRecord rec;
                rec.step = trace.steps;
                rec.e = e;
                rec.replanned = e < policy.tau;  // e == tau executes (inclusive gate)
                trace.checks.push_back(rec);
                replan = rec.replanned;
            }
        }
    }
    return trace;
}

int replay_gate_calls(const std::vector<double>& e_values, double tau, int total_steps, int horizon, int k,
                      int check_interval) {
    if (e_values.empty()) throw std::invalid_argument("replay_gate_calls: empty e trace");
    int calls = 0;
    int steps = 0;
    size_t cursor = 0;
    while (steps < total_steps) {
        calls += 1;
        int executed = 0;
        bool replan = false;
        while (steps < total_steps && executed < horizon && !replan) {
            executed += 1;
            steps += 1;
            if (steps < total_steps && executed % check_interval == 0 && executed + k <= horizon) {
                const double e = e_values[cursor++ % e_values.size()];
                replan = e < tau;
            }
        }
    }
    return calls;
}

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const Wam& wam, const FfdcVerifier* verifier) {
    if (cfg.policies.empty() || cfg.tasks.empty() || cfg.episodes_per_task < 1)
        throw std::invalid_argument("run_benchmark: need at least one policy, one task, one episode");
    for (const auto& p : cfg.policies)
        if (p.kind == ExecPolicy::Kind::adaptive && verifier == nullptr)
            throw std::invalid_argument("run_benchmark: adaptive policy listed but no verifier supplied");

    LatentEncoder enc(wam.config().latent_dim);
    std::atomic<uint64_t> predict_count{0};
    const PlannerFn planner = [&](const Latent& obs, TaskId task, int step) {
        predict_count.fetch_add(1, std::memory_order_relaxed);
        return wam.predict(obs, task, step);
    };

    struct Job {
        const ExecPolicy* policy;
        TaskId task;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& policy : cfg.policies)
        for (size_t ti = 0; ti < cfg.tasks.size(); ++ti)
            for (int e = 0; e < cfg.episodes_per_task; ++e) {
                // Environment seeds depend only on (task, episode): policies
                // face identical worlds.
                const uint64_t seed = Rng::stream(cfg.seed, "bench-episode", ti * 1000003ULL + e).next_u64();
                jobs.push_back(Job{&policy, cfg.tasks[ti], seed});
            }

    BenchmarkResult result;
    result.traces.resize(jobs.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error_message;
    std::mutex error_mutex;
    const auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size() || failed.load()) break;
            const Job& job = jobs[i];
            try {
                const TaskSpec spec = TaskSpec::make(job.task, job.seed, cfg.hard_noise_sigma, cfg.success_radius);
                ChunkScorer* scorer = nullptr;
                std::unique_ptr<VerifierChunkScorer> owned;
                if (job.policy->kind == ExecPolicy::Kind::adaptive) {
                    owned = std::make_unique<VerifierChunkScorer>(*verifier);
                    scorer = owned.get();
                }
                result.traces[i] =
                    run_episode(*job.policy, spec, cfg.env, enc, planner, wam.forward_flops(), scorer);
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lock(error_mutex);
                error_message = ex.what();
                failed.store(true);
            }
        }
    };

    const int threads = std::max(1, cfg.threads);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed.load()) throw std::runtime_error("run_benchmark: episode failed: " + error_message);

    uint64_t recorded = 0;
    for (const auto& t : result.traces) recorded += static_cast<uint64_t>(t.wam_calls);
    if (recorded != predict_count.load())
        throw std::logic_error("run_benchmark: call accounting mismatch between traces and planner wrapper");

    result.cells = aggregate_cells(result.traces);
    return result;
}

std::vector<CellMetrics> aggregate_cells(const std::vector<ExecutionTrace>& traces) {
    std::map<std::pair<std::string, int>, CellMetrics> cells;
    std::vector<std::pair<std::string, int>> order;
    for (const auto& t : traces) {
        const auto key = std::make_pair(t.policy, t.task == TaskId::transport_easy ? 0 : 1);
        if (!cells.count(key)) order.push_back(key);
        CellMetrics& c = cells[key];
        c.policy = t.policy;
        c.task = t.task;
        c.episodes += 1;
        c.sr += t.success ? 1.0 : 0.0;
        c.mean_steps += t.steps;
        c.mean_calls += t.wam_calls;
        c.mean_checks += t.verifier_checks;
        c.mean_flops += static_cast<double>(t.flops);
    }
    std::vector<CellMetrics> out;
    for (const auto& key : order) {
        CellMetrics c = cells[key];
        c.sr /= c.episodes;
        c.mean_steps /= c.episodes;
        c.mean_calls /= c.episodes;
        c.mean_checks /= c.episodes;
        c.mean_flops /= c.episodes;
        out.push_back(c);
    }
    return out;
}

void write_episodes_jsonl(const std::string& path, const std::vector<ExecutionTrace>& traces) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& t : traces) {
        nlohmann::json j;
        j["policy"] = t.policy;
        j["task_id"] = task_name(t.task);
        j["seed"] = t.seed;
        j["success"] = t.success;
        j["steps"] = t.steps;
        j["wam_calls"] = t.wam_calls;
        j["verifier_checks"] = t.verifier_checks;
        j["flops"] = t.flops;
        nlohmann::json actions = nlohmann::json::array();
        for (const auto& a : t.actions) actions.push_back(nlohmann::json::array({a[0], a[1], a[2]}));
        j["actions"] = actions;
        nlohmann::json checks = nlohmann::json::array();
        for (const auto& c : t.checks)
            checks.push_back({{"step", c.step}, {"e", c.e}, {"replanned", c.replanned}});
        j["checks"] = checks;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<ExecutionTrace> load_episodes_traces(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<ExecutionTrace> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ExecutionTrace t;
        t.policy = j["policy"];
        t.task = parse_task(j["task_id"]);
        t.seed = j["seed"];
        t.success = j["success"];
        t.steps = j["steps"];
        t.wam_calls = j["wam_calls"];
        t.verifier_checks = j["verifier_checks"];
        t.flops = j["flops"];
        for (const auto& a : j["actions"]) t.actions.push_back(Action{a[0], a[1], a[2]});
        for (const auto& c : j["checks"]) {
            CheckRecord rec;
            rec.step = c["step"];
            rec.e = c["e"];
            rec.replanned = c["replanned"];
            t.checks.push_back(rec);
        }
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

std::string fmt(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
    return buf;
}

}  // namespace

void write_summary_csv(const std::string& path, const std::vector<CellMetrics>& cells) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "policy,task,episodes,sr,mean_steps,mean_calls,mean_checks,mean_flops\n";
    for (const auto& c : cells)
        os << c.policy << "," << task_name(c.task) << "," << c.episodes << "," << fmt(c.sr, 4) << ","
           << fmt(c.mean_steps, 3) << "," << fmt(c.mean_calls, 3) << "," << fmt(c.mean_checks, 3) << ","
           << fmt(c.mean_flops, 1) << "\n";
    if (!os) throw std::runtime_error("write failed for " + path);
}

std::string render_frontier_svg(const std::vector<CellMetrics>& cells) {
    const int width = 640, height = 440;
    const int ml = 70, mr = 180, mt = 30, mb = 60;
    double max_steps = 1.0;
    for (const auto& c : cells) max_steps = std::max(max_steps, c.mean_steps);
    max_steps *= 1.1;

    static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::map<std::string, int> color_of;
    std::vector<std::string> policy_order;
    for (const auto& c : cells)
        if (!color_of.count(c.policy)) {
            color_of[c.policy] = static_cast<int>(policy_order.size()) % 8;
            policy_order.push_back(c.policy);
        }

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height - 15
       << "\" text-anchor=\"middle\" font-size=\"14\">steps</text>\n";
    os << "<text x=\"18\" y=\"" << (y0 + y1) / 2
       << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 " << (y0 + y1) / 2
       << ")\">SR(%)</text>\n";
    for (int tick = 0; tick <= 100; tick += 25) {
        const double y = y0 - (y0 - y1) * tick / 100.0;
        os << "<text x=\"" << x0 - 8 << "\" y=\"" << fmt(y + 4, 2)
           << "\" text-anchor=\"end\" font-size=\"11\">" << tick << "</text>\n";
    }
    for (const auto& c : cells) {
        const double x = x0 + (x1 - x0) * (c.mean_steps / max_steps);
        const double y = y0 - (y0 - y1) * c.sr;
        const char* color = kColors[color_of[c.policy]];
        // Circles for the easy task, squares for the hard one.
        if (c.task == TaskId::transport_easy) {
            os << "<circle cx=\"" << fmt(x, 2) << "\" cy=\"" << fmt(y, 2) << "\" r=\"6\" fill=\"" << color
               << "\"/>\n";
        } else {
            os << "<rect x=\"" << fmt(x - 5, 2) << "\" y=\"" << fmt(y - 5, 2)
               << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        }
    }
    int ly = mt + 10;
    for (const auto& p : policy_order) {
        const char* color = kColors[color_of[p]];
        os << "<circle cx=\"" << x1 + 20 << "\" cy=\"" << ly - 4 << "\" r=\"6\" fill=\"" << color << "\"/>\n";
        os << "<text x=\"" << x1 + 32 << "\" y=\"" << ly << "\" font-size=\"12\">" << p << "</text>\n";
        ly += 20;
    }
    os << "<text x=\"" << x1 + 20 << "\" y=\"" << ly
       << "\" font-size=\"11\">circle=transport-easy square=insert-hard</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string render_table(const std::vector<CellMetrics>& cells) {
    std::vector<std::string> policies;
    for (const auto& c : cells)
        if (std::find(policies.begin(), policies.end(), c.policy) == policies.end()) policies.push_back(c.policy);
    const auto find_cell = [&](const std::string& p, TaskId t) -> const CellMetrics* {
        for (const auto& c : cells)
            if (c.policy == p && c.task == t) return &c;
        return nullptr;
    };

    std::ostringstream os;
    os << "case            ";
    for (const auto& p : policies) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "| %-22s ", p.c_str());
        os << buf;
    }
    os << "\n                ";
    for (size_t i = 0; i < policies.size(); ++i) os << "| SR(%)   T       Calls  ";
    os << "\n";
    for (TaskId t : {TaskId::transport_easy, TaskId::insert_hard}) {
        char head[32];
        std::snprintf(head, sizeof(head), "%-16s", task_name(t).c_str());
        os << head;
        bool any = false;
        for (const auto& p : policies) {
            const CellMetrics* c = find_cell(p, t);
            if (!c) {
                os << "| -                      ";
                continue;
            }
            any = true;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "| %-7s %-7s %-6s ", fmt(c->sr * 100.0, 2).c_str(),
                          fmt(c->mean_steps, 1).c_str(), fmt(c->mean_calls, 2).c_str());
            os << buf;
        }
        os << "\n";
        if (!any) break;
    }
    return os.str();
}

}  // namespace ffdc
