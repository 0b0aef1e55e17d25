#include "ffdc/verifier.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ffdc {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

std::string mask_mode_name(MaskMode m) {
    return m == MaskMode::cache_compatible ? "cache_compatible" : "full_fidelity";
}

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_und: return "no_und";
        case Ablation::no_pred: return "no_pred";
        case Ablation::no_real: return "no_real";
        case Ablation::no_action: return "no_action";
    }
    return "full";
}

Ablation parse_ablation(const std::string& name) {
    if (name == "full") return Ablation::full;
    if (name == "no_und") return Ablation::no_und;
    if (name == "no_pred") return Ablation::no_pred;
    if (name == "no_real") return Ablation::no_real;
    if (name == "no_action") return Ablation::no_action;
    throw std::invalid_argument("unknown ablation '" + name + "'");
}

VerifierLayout VerifierLayout::make(int n_sem, int k, int r, Ablation ablation) {
    if (k <= 0 || r <= 0 || k % r != 0)
        throw std::invalid_argument("verifier layout: k must be a positive multiple of r");
    VerifierLayout l;
    l.k = k;
    l.r = r;
    l.n_sem = ablation == Ablation::no_und ? 0 : n_sem;
    l.n_past = ablation == Ablation::no_pred ? 0 : k / r;
    l.n_real = ablation == Ablation::no_real ? 0 : 1;
    l.n_fut = ablation == Ablation::no_pred ? 0 : k / r;
    l.n_act = ablation == Ablation::no_action ? 0 : k;
    return l;
}

VerifierLayout::Block VerifierLayout::block_of(int idx) const {
    if (idx < 0 || idx >= total()) throw std::out_of_range("layout: token index out of range");
    if (idx < past_begin()) return Block::sem;
    if (idx < real_begin()) return Block::past;
    if (idx < fut_begin()) return Block::real;
    if (idx < act_begin()) return Block::fut;
    if (idx < cls_index()) return Block::act;
    return Block::cls;
}

int VerifierLayout::ordinal_of(int idx) const {
    switch (block_of(idx)) {
        case Block::sem: return idx - sem_begin() + 1;
        case Block::past: return idx - past_begin() + 1;
        case Block::real: return 1;
        case Block::fut: return idx - fut_begin() + 1;
        case Block::act: return idx - act_begin() + 1;
        case Block::cls: return 1;
    }
    return 0;
}

int VerifierLayout::time_of(int idx) const {
    switch (block_of(idx)) {
        case Block::past: return -k + ordinal_of(idx) * r;
        case Block::real: return 0;
        case Block::fut: return ordinal_of(idx) * r;
        case Block::act: return ordinal_of(idx);
        default: throw std::logic_error("layout: token has no timestep");
    }
}

FfdcMask build_mask(const VerifierLayout& layout, int window, MaskMode mode) {
    if (window < layout.r)
        throw std::invalid_argument("build_mask: window < r would orphan latent/action alignment");
    FfdcMask m;
    m.layout = layout;
    m.window = window;
    m.mode = mode;
    const int n = layout.total();
    m.bits = BoolMask(n);
    using Block = VerifierLayout::Block;

    const auto in_prefix = [&](Block b) { return b == Block::sem || b == Block::past; };

    for (int i = 0; i < n; ++i) {
        const Block bi = layout.block_of(i);
        for (int j = 0; j < n; ++j) {
            const Block bj = layout.block_of(j);
            bool vis = false;
            if (bi == Block::cls) {
                vis = true;  // CLS attends to the full sequence
            } else if (bj == Block::cls) {
                vis = false;  // no other token attends to CLS
            } else if (in_prefix(bi)) {
                vis = in_prefix(bj);  // bidirectional within the prefix block
            } else if (bi == Block::real) {
                vis = in_prefix(bj) || j == i;
            } else if (bi == Block::fut) {
                if (in_prefix(bj)) {
                    vis = true;
                } else if (bj == Block::real) {
                    vis = mode == MaskMode::full_fidelity;
                } else if (bj == Block::fut) {
                    vis = layout.ordinal_of(j) <= layout.ordinal_of(i) &&
                          std::abs(layout.time_of(i) - layout.time_of(j)) <= window;
                } else if (bj == Block::act) {
                    vis = layout.ordinal_of(j) <= layout.ordinal_of(i) * layout.r &&
                          std::abs(layout.time_of(i) - layout.time_of(j)) <= window;
                }
            } else if (bi == Block::act) {
                if (in_prefix(bj)) {
                    vis = true;
                } else if (bj == Block::real) {
                    vis = mode == MaskMode::full_fidelity;
                } else if (bj == Block::fut) {
                    vis = layout.ordinal_of(j) * layout.r <= layout.ordinal_of(i) &&
                          std::abs(layout.time_of(i) - layout.time_of(j)) <= window;
                } else if (bj == Block::act) {
                    vis = layout.ordinal_of(j) <= layout.ordinal_of(i) &&
                          std::abs(layout.time_of(i) - layout.time_of(j)) <= window;
                }
            }
            m.bits.set(i, j, vis);
        }
    }
    return m;
}

std::string FfdcMask::dump() const {
    std::ostringstream os;
    const auto& l = layout;
    os << "# ffdc mask n=" << l.total() << " mode=" << mask_mode_name(mode) << " k=" << l.k << " r=" << l.r
       << " w=" << window << "\n";
    os << "# blocks: sem=[" << l.sem_begin() << "," << l.past_begin() << ") past=[" << l.past_begin() << ","
       << l.real_begin() << ") real=[" << l.real_begin() << "," << l.fut_begin() << ") fut=[" << l.fut_begin()
       << "," << l.act_begin() << ") act=[" << l.act_begin() << "," << l.cls_index() << ") cls=["
       << l.cls_index() << "," << l.total() << ")\n";
    for (int i = 0; i < l.total(); ++i) {
        for (int j = 0; j < l.total(); ++j) os << (bits.get(i, j) ? '1' : '0');
        os << "\n";
    }
    return os.str();
}

TokenBundle assemble_input(const PredictedRollout& roll, const Latent& o_real, int t_off, int k) {
    const int horizon = static_cast<int>(roll.actions.size());
    const int slots = static_cast<int>(roll.latents.size());
    if (slots == 0 || horizon == 0) throw std::invalid_argument("assemble_input: empty rollout");
    const int r = horizon / slots;
    if (horizon % slots != 0 || k % r != 0) throw std::invalid_argument("assemble_input: k must align with r");
    if (t_off < 0 || t_off % r != 0) throw std::invalid_argument("assemble_input: offset must be a multiple of r");
    if (t_off + k > horizon)
        throw std::invalid_argument("assemble_input: offset " + std::to_string(t_off) + " + window " +
                                    std::to_string(k) + " exceeds chunk of " + std::to_string(horizon));
    const int latent_dim = static_cast<int>(roll.cond_latent.size());
    const int action_dim = static_cast<int>(roll.actions[0].size());
    const int kr = k / r;

    TokenBundle b;
    b.k = k;
    b.r = r;
    b.sem = roll.semantic;
    b.past = Tensor(kr, latent_dim);
    b.past_pad.assign(kr, 0);
    for (int p = 1; p <= kr; ++p) {
        const int t = t_off - k + p * r;  // chunk-relative timestep of this past slot
        if (t >= r) {
            const Latent& l = roll.latents[t / r - 1];
            for (int d = 0; d < latent_dim; ++d) b.past.at(p - 1, d) = l[d];
        } else {
            // No predicted frame at or before the chunk start; repeat the
            // conditioning observation and flag the slot as padding.
            for (int d = 0; d < latent_dim; ++d) b.past.at(p - 1, d) = roll.cond_latent[d];
            b.past_pad[p - 1] = 1;
        }
    }
    if (static_cast<int>(o_real.size()) != latent_dim)
        throw std::invalid_argument("assemble_input: real observation has wrong dimension");
    b.real = Tensor(1, latent_dim, std::vector<double>(o_real));
    b.fut = Tensor(kr, latent_dim);
    for (int j = 1; j <= kr; ++j) {
        const Latent& l = roll.latents[(t_off + j * r) / r - 1];
        for (int d = 0; d < latent_dim; ++d) b.fut.at(j - 1, d) = l[d];
    }
    b.act = Tensor(k, action_dim);
    for (int i = 1; i <= k; ++i)
        for (int d = 0; d < action_dim; ++d) b.act.at(i - 1, d) = roll.actions[t_off + i - 1][d];
    return b;
}

void VerifierConfig::validate() const {
    if (layers <= 0 || heads <= 0 || width <= 0 || width % heads != 0)
        throw std::invalid_argument("verifier config: width must be a positive multiple of heads");
    if (k <= 0 || ratio <= 0 || k % ratio != 0)
        throw std::invalid_argument("verifier config: k must be a positive multiple of ratio");
    if (window < ratio) throw std::invalid_argument("verifier config: window must be >= ratio");
    if (latent_dim <= 0 || sem_dim <= 0 || action_dim <= 0 || n_sem <= 0)
        throw std::invalid_argument("verifier config: dimensions must be positive");
}

const std::vector<KvCache::LayerKV>& KvCache::at_offset(int t_off) const {
    auto it = offsets.find(t_off);
    if (it == offsets.end())
        throw std::invalid_argument("score_cached: stale cache, no entry for offset " + std::to_string(t_off));
    return it->second;
}

size_t KvCache::byte_size() const {
    size_t bytes = 0;
    for (const auto& [off, layers] : offsets)
        for (const auto& lkv : layers) bytes += (lkv.k.size() + lkv.v.size()) * sizeof(double);
    return bytes;
}

FfdcVerifier::FfdcVerifier(const VerifierConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      layout_(VerifierLayout::make(cfg.n_sem, cfg.k, cfg.ratio, cfg.ablation)),
      mask_(build_mask(layout_, cfg.window, cfg.mode)),
      store_(seed) {
    cfg_.validate();
    register_params();

    nlohmann::json meta;
    meta["kind"] = "ffdc_verifier";
    meta["layers"] = cfg_.layers;
    meta["heads"] = cfg_.heads;
    meta["width"] = cfg_.width;
    meta["k"] = cfg_.k;
    meta["window"] = cfg_.window;
    meta["ratio"] = cfg_.ratio;
    meta["mode"] = mask_mode_name(cfg_.mode);
    meta["ablation"] = ablation_name(cfg_.ablation);
    meta["latent_dim"] = cfg_.latent_dim;
    meta["sem_dim"] = cfg_.sem_dim;
    meta["action_dim"] = cfg_.action_dim;
    meta["n_sem"] = cfg_.n_sem;
    store_.meta_json = meta.dump();
}

FfdcVerifier::FfdcVerifier(const VerifierConfig& cfg, ParamStore store)
    : cfg_(cfg),
      layout_(VerifierLayout::make(cfg.n_sem, cfg.k, cfg.ratio, cfg.ablation)),
      mask_(build_mask(layout_, cfg.window, cfg.mode)),
      store_(std::move(store)) {
    cfg_.validate();
}

void FfdcVerifier::register_params() {
    const int d = cfg_.width;
    store_.add("emb_sem_w", cfg_.sem_dim, d);
    store_.add("emb_sem_b", 1, d, ParamInit::zeros);
    store_.add("emb_lat_w", cfg_.latent_dim, d);
    store_.add("emb_lat_b", 1, d, ParamInit::zeros);
    store_.add("emb_real_w", cfg_.latent_dim, d);
    store_.add("emb_real_b", 1, d, ParamInit::zeros);
    store_.add("emb_act_w", cfg_.action_dim, d);
    store_.add("emb_act_b", 1, d, ParamInit::zeros);
    store_.add("pos_table", 2 * cfg_.k + 1, d);
    store_.add("pad_vec", 1, d);
    store_.add("cls_vec", 1, d);
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "L" + std::to_string(l) + "_";
        store_.add(p + "ln1_g", 1, d, ParamInit::ones);
        store_.add(p + "ln1_b", 1, d, ParamInit::zeros);
        store_.add(p + "wq", d, d);
        store_.add(p + "bq", 1, d, ParamInit::zeros);
        store_.add(p + "wk", d, d);
        store_.add(p + "bk", 1, d, ParamInit::zeros);
        store_.add(p + "wv", d, d);
        store_.add(p + "bv", 1, d, ParamInit::zeros);
        store_.add(p + "wo", d, d);
        store_.add(p + "bo", 1, d, ParamInit::zeros);
        store_.add(p + "ln2_g", 1, d, ParamInit::ones);
        store_.add(p + "ln2_b", 1, d, ParamInit::zeros);
        store_.add(p + "mlp1_w", d, 2 * d);
        store_.add(p + "mlp1_b", 1, 2 * d, ParamInit::zeros);
        store_.add(p + "mlp2_w", 2 * d, d);
        store_.add(p + "mlp2_b", 1, d, ParamInit::zeros);
    }
    store_.add("final_ln_g", 1, d, ParamInit::ones);
    store_.add("final_ln_b", 1, d, ParamInit::zeros);
    store_.add("head1_w", d, d);
    store_.add("head1_b", 1, d, ParamInit::zeros);
    // Zeroed final layer: a fresh verifier scores exactly 0.5.
    store_.add("head2_w", d, 1, ParamInit::zeros);
    store_.add("head2_b", 1, 1, ParamInit::zeros);
}

TokenBundle FfdcVerifier::ablate(const TokenBundle& full) const {
    if (full.k != cfg_.k)
        throw std::invalid_argument("verifier: bundle window k=" + std::to_string(full.k) +
                                    " does not match config k=" + std::to_string(cfg_.k));
    if (full.r != cfg_.ratio) throw std::invalid_argument("verifier: bundle ratio does not match config");
    TokenBundle b = full;
    switch (cfg_.ablation) {
        case Ablation::full: break;
        case Ablation::no_und: b.sem = Tensor(0, cfg_.sem_dim); break;
        case Ablation::no_pred:
            b.past = Tensor(0, cfg_.latent_dim);
            b.past_pad.clear();
            b.fut = Tensor(0, cfg_.latent_dim);
            break;
        case Ablation::no_real: b.real = Tensor(0, cfg_.latent_dim); break;
        case Ablation::no_action: b.act = Tensor(0, cfg_.action_dim); break;
    }
    return b;
}

int FfdcVerifier::build_score_graph(Graph& g, const TokenBundle& full_bundle, const FfdcMask& mask_override,
                                    bool use_override) {
    const TokenBundle b = ablate(full_bundle);
    const int kk = cfg_.k;
    std::vector<int> parts;

    const auto pos_rows = [&](const std::vector<int>& times) {
        Tensor sel(static_cast<int>(times.size()), 2 * kk + 1);
        for (size_t i = 0; i < times.size(); ++i) sel.at(static_cast<int>(i), times[i] + kk) = 1.0;
        return g.matmul(g.input(std::move(sel)), g.param("pos_table"));
    };

    if (b.sem.rows > 0)
        parts.push_back(g.add_row(g.matmul(g.input(b.sem), g.param("emb_sem_w")), g.param("emb_sem_b")));
    if (b.past.rows > 0) {
        int past = g.add_row(g.matmul(g.input(b.past), g.param("emb_lat_w")), g.param("emb_lat_b"));
        std::vector<int> times(b.past.rows);
        for (int p = 1; p <= b.past.rows; ++p) times[p - 1] = -kk + p * cfg_.ratio;
        past = g.add(past, pos_rows(times));
        Tensor padcol(b.past.rows, 1);
        for (int p = 0; p < b.past.rows; ++p) padcol.at(p, 0) = b.past_pad[p] ? 1.0 : 0.0;
        past = g.add(past, g.matmul(g.input(std::move(padcol)), g.param("pad_vec")));
        parts.push_back(past);
    }
    if (b.real.rows > 0) {
        int real = g.add_row(g.matmul(g.input(b.real), g.param("emb_real_w")), g.param("emb_real_b"));
        real = g.add(real, pos_rows({0}));
        parts.push_back(real);
    }
    if (b.fut.rows > 0) {
        int fut = g.add_row(g.matmul(g.input(b.fut), g.param("emb_lat_w")), g.param("emb_lat_b"));
        std::vector<int> times(b.fut.rows);
        for (int j = 1; j <= b.fut.rows; ++j) times[j - 1] = j * cfg_.ratio;
        fut = g.add(fut, pos_rows(times));
        parts.push_back(fut);
    }
    if (b.act.rows > 0) {
        int act = g.add_row(g.matmul(g.input(b.act), g.param("emb_act_w")), g.param("emb_act_b"));
        std::vector<int> times(b.act.rows);
        for (int i = 1; i <= b.act.rows; ++i) times[i - 1] = i;
        act = g.add(act, pos_rows(times));
        parts.push_back(act);
    }
    parts.push_back(g.param("cls_vec"));
    int x = g.concat_rows(parts);

    const BoolMask* mask_bits = use_override ? &mask_override.bits : &mask_.bits;
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "L" + std::to_string(l) + "_";
        const int n1 = g.layer_norm(x, g.param(p + "ln1_g"), g.param(p + "ln1_b"));
        const int q = g.add_row(g.matmul(n1, g.param(p + "wq")), g.param(p + "bq"));
        const int kx = g.add_row(g.matmul(n1, g.param(p + "wk")), g.param(p + "bk"));
        const int v = g.add_row(g.matmul(n1, g.param(p + "wv")), g.param(p + "bv"));
        const int at = g.attention(q, kx, v, mask_bits, cfg_.heads);
        x = g.add(x, g.add_row(g.matmul(at, g.param(p + "wo")), g.param(p + "bo")));
        const int n2 = g.layer_norm(x, g.param(p + "ln2_g"), g.param(p + "ln2_b"));
        int m = g.tanh_op(g.add_row(g.matmul(n2, g.param(p + "mlp1_w")), g.param(p + "mlp1_b")));
        m = g.add_row(g.matmul(m, g.param(p + "mlp2_w")), g.param(p + "mlp2_b"));
        x = g.add(x, m);
    }
    const int cls = g.slice_rows(x, layout_.cls_index(), 1);
    const int fin = g.layer_norm(cls, g.param("final_ln_g"), g.param("final_ln_b"));
    const int h = g.tanh_op(g.add_row(g.matmul(fin, g.param("head1_w")), g.param("head1_b")));
    return g.add_row(g.matmul(h, g.param("head2_w")), g.param("head2_b"));
}

double FfdcVerifier::score_logit(const TokenBundle& bundle) {
    Graph g(&store_);
    const int z = build_score_graph(g, bundle, mask_, false);
    return g.value(z).at(0, 0);
}

double FfdcVerifier::score_full(const TokenBundle& bundle) { return sigmoid(score_logit(bundle)); }

double FfdcVerifier::score_full_mask_override(const TokenBundle& bundle, int row, int col) {
    FfdcMask m = mask_;
    m.bits.set(row, col, false);
    Graph g(&store_);
    const int z = build_score_graph(g, bundle, m, true);
    return sigmoid(g.value(z).at(0, 0));
}

std::vector<Tensor> FfdcVerifier::layer_states(const TokenBundle& bundle) {
    // Rebuild the forward pass, capturing the residual-stream value after
    // every layer (including the embedded input).
    std::vector<Tensor> states;
    Graph g(&store_);
    const TokenBundle b = ablate(bundle);
    const int kk = cfg_.k;
    std::vector<int> parts;
    const auto pos_rows = [&](const std::vector<int>& times) {
        Tensor sel(static_cast<int>(times.size()), 2 * kk + 1);
        for (size_t i = 0; i < times.size(); ++i) sel.at(static_cast<int>(i), times[i] + kk) = 1.0;
        return g.matmul(g.input(std::move(sel)), g.param("pos_table"));
    };
    if (b.sem.rows > 0)
        parts.push_back(g.add_row(g.matmul(g.input(b.sem), g.param("emb_sem_w")), g.param("emb_sem_b")));
    if (b.past.rows > 0) {
        int past = g.add_row(g.matmul(g.input(b.past), g.param("emb_lat_w")), g.param("emb_lat_b"));
        std::vector<int> times(b.past.rows);
        for (int p = 1; p <= b.past.rows; ++p) times[p - 1] = -kk + p * cfg_.ratio;
        past = g.add(past, pos_rows(times));
        Tensor padcol(b.past.rows, 1);
        for (int p = 0; p < b.past.rows; ++p) padcol.at(p, 0) = b.past_pad[p] ? 1.0 : 0.0;
        past = g.add(past, g.matmul(g.input(std::move(padcol)), g.param("pad_vec")));
        parts.push_back(past);
    }
    if (b.real.rows > 0) {
        int real = g.add_row(g.matmul(g.input(b.real), g.param("emb_real_w")), g.param("emb_real_b"));
        real = g.add(real, pos_rows({0}));
        parts.push_back(real);
    }
    if (b.fut.rows > 0) {
        int fut = g.add_row(g.matmul(g.input(b.fut), g.param("emb_lat_w")), g.param("emb_lat_b"));
        std::vector<int> times(b.fut.rows);
        for (int j = 1; j <= b.fut.rows; ++j) times[j - 1] = j * cfg_.ratio;
        fut = g.add(fut, pos_rows(times));
        parts.push_back(fut);
    }
    if (b.act.rows > 0) {
        int act = g.add_row(g.matmul(g.input(b.act), g.param("emb_act_w")), g.param("emb_act_b"));
        std::vector<int> times(b.act.rows);
        for (int i = 1; i <= b.act.rows; ++i) times[i - 1] = i;
        act = g.add(act, pos_rows(times));
        parts.push_back(act);
    }
    parts.push_back(g.param("cls_vec"));
    int x = g.concat_rows(parts);
    states.push_back(g.value(x));
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "L" + std::to_string(l) + "_";
        const int n1 = g.layer_norm(x, g.param(p + "ln1_g"), g.param(p + "ln1_b"));
        const int q = g.add_row(g.matmul(n1, g.param(p + "wq")), g.param(p + "bq"));
        const int kx = g.add_row(g.matmul(n1, g.param(p + "wk")), g.param(p + "bk"));
        const int v = g.add_row(g.matmul(n1, g.param(p + "wv")), g.param(p + "bv"));
        const int at = g.attention(q, kx, v, &mask_.bits, cfg_.heads);
        x = g.add(x, g.add_row(g.matmul(at, g.param(p + "wo")), g.param(p + "bo")));
        const int n2 = g.layer_norm(x, g.param(p + "ln2_g"), g.param(p + "ln2_b"));
        int m = g.tanh_op(g.add_row(g.matmul(n2, g.param(p + "mlp1_w")), g.param(p + "mlp1_b")));
        m = g.add_row(g.matmul(m, g.param(p + "mlp2_w")), g.param(p + "mlp2_b"));
        x = g.add(x, m);
        states.push_back(g.value(x));
    }
    return states;
}

double FfdcVerifier::train_step(const std::vector<LabeledBundle>& batch, const AdamConfig& adam) {
    if (batch.empty()) throw std::invalid_argument("verifier train_step: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& lb : batch) {
        if (lb.label != 0 && lb.label != 1)
            throw std::invalid_argument("verifier train_step: label must be 0 or 1");
        Graph g(&store_);
        const int z = build_score_graph(g, lb.bundle, mask_, false);
        const int loss = g.bce_with_logit(z, static_cast<double>(lb.label));
        const int scaled = g.scale(loss, inv_b);
        total += g.value(loss).at(0, 0);
        g.backward(scaled);
    }
    store_.adam_step(adam);
    return total * inv_b;
}

EvalStats FfdcVerifier::evaluate(const std::vector<LabeledBundle>& data) {
    EvalStats st;
    double sum_pos = 0.0, sum_neg = 0.0;
    int correct = 0;
    for (const auto& lb : data) {
        const double e = score_full(lb.bundle);
        const int pred = e >= 0.5 ? 1 : 0;
        if (pred == lb.label) ++correct;
        if (lb.label == 1) {
            sum_pos += e;
            ++st.n_pos;
        } else {
            sum_neg += e;
            ++st.n_neg;
        }
    }
    st.accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / data.size();
    st.mean_pos = st.n_pos ? sum_pos / st.n_pos : 0.0;
    st.mean_neg = st.n_neg ? sum_neg / st.n_neg : 0.0;
    return st;
}

Tensor FfdcVerifier::embed_tokens(const TokenBundle& b) const {
    const int d = cfg_.width;
    const int kk = cfg_.k;
    const Tensor& pos = store_.value("pos_table");
    std::vector<Tensor> blocks;

    const auto add_pos = [&](Tensor& t, int row, int time) {
        const double* prow = pos.row(time + kk);
        double* trow = t.row(row);
        for (int c = 0; c < d; ++c) trow[c] += prow[c];
    };

    if (b.sem.rows > 0) blocks.push_back(linear_rows(b.sem, store_.value("emb_sem_w"), store_.value("emb_sem_b")));
    if (b.past.rows > 0) {
        Tensor past = linear_rows(b.past, store_.value("emb_lat_w"), store_.value("emb_lat_b"));
        const Tensor& pad = store_.value("pad_vec");
        for (int p = 1; p <= past.rows; ++p) {
            add_pos(past, p - 1, -kk + p * cfg_.ratio);
            if (b.past_pad[p - 1])
                for (int c = 0; c < d; ++c) past.at(p - 1, c) += pad.v[c];
        }
        blocks.push_back(std::move(past));
    }
    if (b.real.rows > 0) {
        Tensor real = linear_rows(b.real, store_.value("emb_real_w"), store_.value("emb_real_b"));
        add_pos(real, 0, 0);
        blocks.push_back(std::move(real));
    }
    if (b.fut.rows > 0) {
        Tensor fut = linear_rows(b.fut, store_.value("emb_lat_w"), store_.value("emb_lat_b"));
        for (int j = 1; j <= fut.rows; ++j) add_pos(fut, j - 1, j * cfg_.ratio);
        blocks.push_back(std::move(fut));
    }
    if (b.act.rows > 0) {
        Tensor act = linear_rows(b.act, store_.value("emb_act_w"), store_.value("emb_act_b"));
        for (int i = 1; i <= act.rows; ++i) add_pos(act, i - 1, i);
        blocks.push_back(std::move(act));
    }

    int rows = 0;
    for (const auto& t : blocks) rows += t.rows;
    Tensor out(rows, d);
    int r0 = 0;
    for (const auto& t : blocks) {
        for (int i = 0; i < t.rows; ++i, ++r0)
            for (int c = 0; c < d; ++c) out.at(r0, c) = t.at(i, c);
    }
    return out;
}

namespace {

// Dense masked multi-head attention over explicit key/value rows, counted in
// g_attention_dot_count. visible[i] lists key indices for query row i.
Tensor attend_rows(const Tensor& q, const Tensor& kt, const Tensor& vt,
                   const std::vector<std::vector<int>>& visible, int heads) {
    const int hd = q.cols / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor out(q.rows, q.cols);
    std::vector<double> scores;
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * hd;
        for (int i = 0; i < q.rows; ++i) {
            const auto& vis = visible[i];
            if (vis.empty()) throw std::invalid_argument("attention: query row has no visible keys");
            scores.resize(vis.size());
            const double* qi = q.row(i) + c0;
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t jj = 0; jj < vis.size(); ++jj) {
                const double* kj = kt.row(vis[jj]) + c0;
                double s = 0.0;
                for (int t = 0; t < hd; ++t) s += qi[t] * kj[t];
                ++g_attention_dot_count;
                s *= scale;
                scores[jj] = s;
                if (s > mx) mx = s;
            }
            double z = 0.0;
            for (double& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            double* orow = out.row(i) + c0;
            for (size_t jj = 0; jj < vis.size(); ++jj) {
                const double p = scores[jj] / z;
                const double* vj = vt.row(vis[jj]) + c0;
                for (int t = 0; t < hd; ++t) orow[t] += p * vj[t];
            }
        }
    }
    return out;
}

}  // namespace

std::shared_ptr<KvCache> FfdcVerifier::cache_build(const PredictedRollout& roll) const {
    if (cfg_.mode != MaskMode::cache_compatible)
        throw std::logic_error("cache_build: full_fidelity mask is incompatible with caching by construction");
    const int horizon = static_cast<int>(roll.actions.size());
    auto cache = std::make_shared<KvCache>();
    cache->origin_step = roll.origin_step;
    cache->k = cfg_.k;
    cache->window = cfg_.window;

    // Cached token order [sem, past, fut, act]: the full layout minus the real
    // observation and CLS. Map cached rows to full-layout indices once.
    std::vector<int> full_idx;
    for (int i = 0; i < layout_.total(); ++i) {
        const auto blk = layout_.block_of(i);
        if (blk == VerifierLayout::Block::real || blk == VerifierLayout::Block::cls) continue;
        full_idx.push_back(i);
    }
    const int n_pref = static_cast<int>(full_idx.size());
    std::vector<std::vector<int>> visible(n_pref);
    for (int i = 0; i < n_pref; ++i)
        for (int j = 0; j < n_pref; ++j)
            if (mask_.bits.get(full_idx[i], full_idx[j])) visible[i].push_back(j);

    Latent dummy(static_cast<size_t>(cfg_.latent_dim), 0.0);
    for (int t_off = 0; t_off + cfg_.k <= horizon; t_off += cfg_.ratio) {
        TokenBundle full = assemble_input(roll, dummy, t_off, cfg_.k);
        TokenBundle b = ablate(full);
        b.real = Tensor(0, cfg_.latent_dim);  // prefix never includes the real observation
        Tensor x = embed_tokens(b);
        std::vector<KvCache::LayerKV> layers;
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = "L" + std::to_string(l) + "_";
            Tensor n1 = x;
            layer_norm_rows_inplace(n1, store_.value(p + "ln1_g"), store_.value(p + "ln1_b"));
            KvCache::LayerKV kv;
            kv.k = linear_rows(n1, store_.value(p + "wk"), store_.value(p + "bk"));
            kv.v = linear_rows(n1, store_.value(p + "wv"), store_.value(p + "bv"));
            const Tensor q = linear_rows(n1, store_.value(p + "wq"), store_.value(p + "bq"));
            const Tensor at = attend_rows(q, kv.k, kv.v, visible, cfg_.heads);
            const Tensor proj = linear_rows(at, store_.value(p + "wo"), store_.value(p + "bo"));
            for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += proj.v[i];
            Tensor n2 = x;
            layer_norm_rows_inplace(n2, store_.value(p + "ln2_g"), store_.value(p + "ln2_b"));
            Tensor m = linear_rows(n2, store_.value(p + "mlp1_w"), store_.value(p + "mlp1_b"));
            for (double& t : m.v) t = std::tanh(t);
            m = linear_rows(m, store_.value(p + "mlp2_w"), store_.value(p + "mlp2_b"));
            for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += m.v[i];
            layers.push_back(std::move(kv));
        }
        cache->offsets.emplace(t_off, std::move(layers));
    }
    return cache;
}

double FfdcVerifier::score_cached(const KvCache& cache, const Latent& o_real, int t_off) const {
    const auto& layers = cache.at_offset(t_off);
    const int d = cfg_.width;
    const bool has_real = layout_.n_real > 0;

    // Fresh query rows: the real observation (when present) and CLS.
    Tensor fresh(has_real ? 2 : 1, d);
    if (has_real) {
        if (static_cast<int>(o_real.size()) != cfg_.latent_dim)
            throw std::invalid_argument("score_cached: real observation has wrong dimension");
        Tensor real(1, cfg_.latent_dim, std::vector<double>(o_real));
        Tensor emb = linear_rows(real, store_.value("emb_real_w"), store_.value("emb_real_b"));
        const Tensor& pos = store_.value("pos_table");
        for (int c = 0; c < d; ++c) fresh.at(0, c) = emb.v[c] + pos.at(cfg_.k, c);
    }
    const Tensor& cls = store_.value("cls_vec");
    for (int c = 0; c < d; ++c) fresh.at(fresh.rows - 1, c) = cls.v[c];

    const int n_pref = layers.empty() ? 0 : layers[0].k.rows;
    const int real_row = 0;
    const int cls_row = fresh.rows - 1;
    // Visible key index lists over [cached rows..., fresh rows...]:
    // the real observation sees sem+past (the leading cached rows) plus itself;
    // CLS sees everything.
    std::vector<std::vector<int>> visible(fresh.rows);
    if (has_real) {
        for (int j = 0; j < layout_.n_sem + layout_.n_past; ++j) visible[real_row].push_back(j);
        visible[real_row].push_back(n_pref + real_row);
    }
    for (int j = 0; j < n_pref + fresh.rows; ++j) visible[cls_row].push_back(j);

    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "L" + std::to_string(l) + "_";
        Tensor n1 = fresh;
        layer_norm_rows_inplace(n1, store_.value(p + "ln1_g"), store_.value(p + "ln1_b"));
        const Tensor q = linear_rows(n1, store_.value(p + "wq"), store_.value(p + "bq"));
        const Tensor kf = linear_rows(n1, store_.value(p + "wk"), store_.value(p + "bk"));
        const Tensor vf = linear_rows(n1, store_.value(p + "wv"), store_.value(p + "bv"));
        // Assemble key/value banks: cached rows then fresh rows.
        Tensor kb(n_pref + fresh.rows, d), vb(n_pref + fresh.rows, d);
        for (int i = 0; i < n_pref; ++i)
            for (int c = 0; c < d; ++c) {
                kb.at(i, c) = layers[l].k.at(i, c);
                vb.at(i, c) = layers[l].v.at(i, c);
            }
        for (int i = 0; i < fresh.rows; ++i)
            for (int c = 0; c < d; ++c) {
                kb.at(n_pref + i, c) = kf.at(i, c);
                vb.at(n_pref + i, c) = vf.at(i, c);
            }
        const Tensor at = attend_rows(q, kb, vb, visible, cfg_.heads);
        const Tensor proj = linear_rows(at, store_.value(p + "wo"), store_.value(p + "bo"));
        for (size_t i = 0; i < fresh.v.size(); ++i) fresh.v[i] += proj.v[i];
        Tensor n2 = fresh;
        layer_norm_rows_inplace(n2, store_.value(p + "ln2_g"), store_.value(p + "ln2_b"));
        Tensor m = linear_rows(n2, store_.value(p + "mlp1_w"), store_.value(p + "mlp1_b"));
        for (double& t : m.v) t = std::tanh(t);
        m = linear_rows(m, store_.value(p + "mlp2_w"), store_.value(p + "mlp2_b"));
        for (size_t i = 0; i < fresh.v.size(); ++i) fresh.v[i] += m.v[i];
    }

    Tensor out(1, d);
    for (int c = 0; c < d; ++c) out.v[c] = fresh.at(cls_row, c);
    layer_norm_rows_inplace(out, store_.value("final_ln_g"), store_.value("final_ln_b"));
    Tensor h = linear_rows(out, store_.value("head1_w"), store_.value("head1_b"));
    for (double& t : h.v) t = std::tanh(t);
    const Tensor z = linear_rows(h, store_.value("head2_w"), store_.value("head2_b"));
    return sigmoid(z.at(0, 0));
}

void FfdcVerifier::save(const std::string& path) const { store_.save(path); }

FfdcVerifier FfdcVerifier::load(const std::string& path) {
    ParamStore store = ParamStore::load(path);
    nlohmann::json meta = nlohmann::json::parse(store.meta_json);
    if (meta.value("kind", "") != "ffdc_verifier")
        throw std::runtime_error("checkpoint " + path + " is not a verifier model");
    VerifierConfig cfg;
    cfg.layers = meta["layers"];
    cfg.heads = meta["heads"];
    cfg.width = meta["width"];
    cfg.k = meta["k"];
    cfg.window = meta["window"];
    cfg.ratio = meta["ratio"];
    cfg.mode = meta["mode"] == "full_fidelity" ? MaskMode::full_fidelity : MaskMode::cache_compatible;
    cfg.ablation = parse_ablation(meta["ablation"]);
    cfg.latent_dim = meta["latent_dim"];
    cfg.sem_dim = meta["sem_dim"];
    cfg.action_dim = meta["action_dim"];
    cfg.n_sem = meta["n_sem"];
    return FfdcVerifier(cfg, std::move(store));
}

}  // namespace ffdc
