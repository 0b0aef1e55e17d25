#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ffdc/env.hpp"
#include "ffdc/verifier.hpp"
#include "ffdc/wam.hpp"

namespace ffdc {

struct ExecPolicy {
    enum class Kind { fixed, adaptive };
    Kind kind = Kind::fixed;
    int n = 16;              // fixed: actions executed per inference (n <= H)
    double tau = 0.5;        // adaptive: continue while e >= tau
    int k = 8;               // adaptive: verifier window
    int check_interval = 4;  // adaptive: c, steps between checks

    static ExecPolicy fixed(int n);
    static ExecPolicy adaptive(double tau, int k, int check_interval);
    // "fixed:16" / "fixed16" / "adaptive"
    static ExecPolicy parse(const std::string& text, double tau, int k, int check_interval);
    std::string name() const;
};

struct CheckRecord {
    int step = 0;  // global step at which the check ran
    double e = 0.0;
    bool replanned = false;
};

struct ExecutionTrace {
    std::string policy;
    TaskId task = TaskId::transport_easy;
    uint64_t seed = 0;
    std::vector<Action> actions;
    std::vector<CheckRecord> checks;
    bool success = false;
    int steps = 0;
    int wam_calls = 0;
    int verifier_checks = 0;
    uint64_t flops = 0;  // planner forward cost proxy
};

using PlannerFn = std::function<PredictedRollout(const Latent& obs, TaskId task, int step)>;

// Per-chunk scoring interface so tests can inject oracle verifiers.
class ChunkScorer {
public:
    virtual ~ChunkScorer() = default;
    virtual void prepare(const PredictedRollout& roll) = 0;
    virtual double score(const Latent& o_real, int t_off) = 0;
};

class VerifierChunkScorer : public ChunkScorer {
public:
    explicit VerifierChunkScorer(const FfdcVerifier& verifier) : verifier_(&verifier) {}
    void prepare(const PredictedRollout& roll) override;
    double score(const Latent& o_real, int t_off) override;

private:
    const FfdcVerifier* verifier_;
    std::shared_ptr<KvCache> cache_;
    int origin_ = -1;
};

class ConstChunkScorer : public ChunkScorer {
public:
    explicit ConstChunkScorer(double value) : value_(value) {}
    void prepare(const PredictedRollout&) override {}
    double score(const Latent&, int) override { return value_; }

private:
    double value_;
};

// Executes one episode under the policy. Adaptive policies check every
// check_interval executed steps while at least k actions remain in the chunk
// and replan immediately when e < tau (e == tau continues).
ExecutionTrace run_episode(const ExecPolicy& policy, const TaskSpec& spec, const EnvParams& params,
                           const LatentEncoder& enc, const PlannerFn& planner, uint64_t planner_flops,
                           ChunkScorer* scorer);

// Pure replay of the adaptive gate over a fixed sequence of e values (consumed
// one per check, cycling). Returns planner calls needed to cover total_steps.
int replay_gate_calls(const std::vector<double>& e_values, double tau, int total_steps, int horizon, int k,
                      int check_interval);

struct BenchmarkConfig {
    std::vector<ExecPolicy> policies;
    std::vector<TaskId> tasks;
    int episodes_per_task = 100;
    uint64_t seed = 0;
    int threads = 1;
    EnvParams env;
    double hard_noise_sigma = 0.025;
    double success_radius = 0.04;
};

struct CellMetrics {
    std::string policy;
    TaskId task = TaskId::transport_easy;
    int episodes = 0;
    double sr = 0.0;          // success rate in [0,1]
    double mean_steps = 0.0;  // T, simulator steps
    double mean_calls = 0.0;
    double mean_checks = 0.0;
    double mean_flops = 0.0;
};

struct BenchmarkResult {
    std::vector<ExecutionTrace> traces;
    std::vector<CellMetrics> cells;
};

// Episodes share environment seeds across policies (paired comparison). The
// verifier may be null when no adaptive policy is listed.
BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const Wam& wam, const FfdcVerifier* verifier);

std::vector<CellMetrics> aggregate_cells(const std::vector<ExecutionTrace>& traces);

void write_episodes_jsonl(const std::string& path, const std::vector<ExecutionTrace>& traces);
std::vector<ExecutionTrace> load_episodes_traces(const std::string& path);
void write_summary_csv(const std::string& path, const std::vector<CellMetrics>& cells);

// SR-vs-steps scatter with one marker per (policy, task); byte-deterministic.
std::string render_frontier_svg(const std::vector<CellMetrics>& cells);
// Text table, one row per task with SR / T / Calls per policy.
std::string render_table(const std::vector<CellMetrics>& cells);

}  // namespace ffdc
