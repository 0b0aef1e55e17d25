#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ffdc/graph.hpp"
#include "ffdc/mask.hpp"
#include "ffdc/wam.hpp"

namespace ffdc {

enum class MaskMode { cache_compatible, full_fidelity };
enum class Ablation { full, no_und, no_pred, no_real, no_action };

std::string mask_mode_name(MaskMode m);
std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

// Token order is fixed: [semantic, predicted-past latents, real observation,
// predicted-future latents, future actions, CLS]. Block sizes shrink to zero
// under the corresponding ablation.
struct VerifierLayout {
    int n_sem = 0;
    int n_past = 0;
    int n_real = 0;
    int n_fut = 0;
    int n_act = 0;
    int k = 0;
    int r = 0;

    static VerifierLayout make(int n_sem, int k, int r, Ablation ablation = Ablation::full);

    int total() const { return n_sem + n_past + n_real + n_fut + n_act + 1; }
    int sem_begin() const { return 0; }
    int past_begin() const { return n_sem; }
    int real_begin() const { return n_sem + n_past; }
    int fut_begin() const { return n_sem + n_past + n_real; }
    int act_begin() const { return n_sem + n_past + n_real + n_fut; }
    int cls_index() const { return total() - 1; }

    enum class Block { sem, past, real, fut, act, cls };
    Block block_of(int idx) const;
    // Position within the block, 1-based for past/fut/act per the mask rules.
    int ordinal_of(int idx) const;
    // Timestep offset relative to the check step: past p -> -k + p*r, real -> 0,
    // future latent j -> j*r, action i -> i. Not defined for sem/cls.
    int time_of(int idx) const;
};

struct FfdcMask {
    VerifierLayout layout;
    int window = 0;
    MaskMode mode = MaskMode::cache_compatible;
    BoolMask bits;

    // Plain-text grid with a header naming block boundaries; used by the
    // golden-file tests.
    std::string dump() const;
};

// Structured visibility matrix. Throws when window < r.
FfdcMask build_mask(const VerifierLayout& layout, int window, MaskMode mode);

// Raw (unembedded) verifier input for one check. Always carries the full
// (unablated) block set; scoring drops blocks per the verifier's config.
struct TokenBundle {
    int k = 0;
    int r = 0;
    Tensor sem;                     // n_sem x sem_dim
    Tensor past;                    // k/r x latent_dim
    std::vector<uint8_t> past_pad;  // 1 where the slot repeats the conditioning observation
    Tensor real;                    // 1 x latent_dim
    Tensor fut;                     // k/r x latent_dim
    Tensor act;                     // k x action_dim
};

// Slices the rollout around check offset t_off (chunk-relative, r-aligned).
TokenBundle assemble_input(const PredictedRollout& roll, const Latent& o_real, int t_off, int k);

struct VerifierConfig {
    int layers = 2;
    int heads = 4;
    int width = 64;
    int k = 8;
    int window = 8;
    int ratio = 4;
    MaskMode mode = MaskMode::cache_compatible;
    Ablation ablation = Ablation::full;
    int latent_dim = 16;
    int sem_dim = 8;
    int action_dim = 3;
    int n_sem = 2;
    void validate() const;
};

// Per-chunk cache of key/value arrays for the prediction-side tokens
// [sem, past, fut, act], one entry per r-aligned check offset, all layers.
// Contents never depend on any real observation scored later.
class KvCache {
public:
    struct LayerKV {
        Tensor k;
        Tensor v;
    };
    int origin_step = 0;
    int k = 0;
    int window = 0;
    std::map<int, std::vector<LayerKV>> offsets;  // t_off -> per-layer K/V

    const std::vector<LayerKV>& at_offset(int t_off) const;
    size_t byte_size() const;
};

struct LabeledBundle {
    TokenBundle bundle;
    int label = 0;  // y in {0,1}
};

struct EvalStats {
    double accuracy = 0.0;
    double mean_pos = 0.0;
    double mean_neg = 0.0;
    int n_pos = 0;
    int n_neg = 0;
};

// Masked-attention verifier: embeds the token bundle, runs N pre-norm
// transformer layers under the structured mask, and maps the CLS output
// through a two-layer head to an executability score e in (0,1).
class FfdcVerifier {
public:
    FfdcVerifier(const VerifierConfig& cfg, uint64_t seed);

    double score_full(const TokenBundle& bundle);
    double score_logit(const TokenBundle& bundle);

    std::shared_ptr<KvCache> cache_build(const PredictedRollout& roll) const;
    double score_cached(const KvCache& cache, const Latent& o_real, int t_off) const;

    double train_step(const std::vector<LabeledBundle>& batch, const AdamConfig& adam);
    EvalStats evaluate(const std::vector<LabeledBundle>& data);

    void save(const std::string& path) const;
    static FfdcVerifier load(const std::string& path);

    const VerifierConfig& config() const { return cfg_; }
    const VerifierLayout& layout() const { return layout_; }
    const FfdcMask& mask() const { return mask_; }
    ParamStore& store() { return store_; }

    // Hidden states of every layer for one full forward; used by the causal
    // no-leakage tests.
    std::vector<Tensor> layer_states(const TokenBundle& bundle);

    // Scores with one extra visibility bit cleared; used by the targeted
    // CLS-path perturbation test.
    double score_full_mask_override(const TokenBundle& bundle, int row, int col);

private:
    FfdcVerifier(const VerifierConfig& cfg, ParamStore store);
    void register_params();

    struct Assembled {
        Tensor rows;                 // layout.total() x width, embedded tokens
    };
    // Embeds an (already ablated) bundle into model width, without CLS.
    Tensor embed_tokens(const TokenBundle& b) const;  // (total-1) x width
    TokenBundle ablate(const TokenBundle& full) const;

    int build_score_graph(Graph& g, const TokenBundle& full_bundle, const FfdcMask& mask_override,
                          bool use_override);
    double logit_from_graph(const TokenBundle& bundle);

    VerifierConfig cfg_;
    VerifierLayout layout_;
    FfdcMask mask_;
    ParamStore store_;
};

}  // namespace ffdc
