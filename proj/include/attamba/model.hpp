#pragma once

#include <optional>
#include <string>
#include <utility>

#include "attamba/ssm.hpp"

namespace attamba {

enum class ModelMode { Attamba, PseudoChunk, BaselineFull, BaselineKvc, BaselineKvcSwa };

const char* mode_name(ModelMode m);
ModelMode mode_from_name(const std::string& name);

inline bool is_baseline(ModelMode m) {
    return m == ModelMode::BaselineFull || m == ModelMode::BaselineKvc ||
           m == ModelMode::BaselineKvcSwa;
}

struct ModelConfig {
    int vocab = 256;
    int seq_len = 256;
    int model_dim = 64;
    int heads = 2;
    int layers = 2;
    int chunk_size = 4;
    int lead = 4;
    int state_dim = 16;
    ModelMode mode = ModelMode::Attamba;
    ChunkStrategy chunk_strategy = ChunkStrategy::Uniform;
    int baseline_attn_dim = 64;   // F; equals model_dim in baseline_full
    int baseline_heads = 2;
    int swa_window = 0;           // 0: default seq_len / chunk_size at eval
    int ffn_hidden = 0;           // 0: default 4 * model_dim
    int fssm_splits = 0;          // 0: default quarter of the chunks
    uint64_t seed = 1;

    int ffn_dim() const { return ffn_hidden > 0 ? ffn_hidden : 4 * model_dim; }
    int attn_dim() const {
        return mode == ModelMode::BaselineFull ? model_dim
               : is_baseline(mode)             ? baseline_attn_dim
                                               : model_dim;
    }
    int attn_heads() const { return is_baseline(mode) ? baseline_heads : heads; }
    void validate() const;
};

template <typename T>
struct AttambaBlockParams {
    Tensor<T> attn_norm_w, ffn_norm_w;
    Tensor<T> w_q, w_o;        // [e, e]
    SSMParams<T> ssm_k, ssm_v;
    Tensor<T> ffn_w1, ffn_w2;  // [e, f], [f, e]
};

template <typename T>
struct BaselineBlockParams {
    Tensor<T> attn_norm_w, ffn_norm_w;
    Tensor<T> w_q, w_k, w_v;   // [e, a]
    Tensor<T> w_o;             // [a, e]
    Tensor<T> ffn_w1, ffn_w2;
};

template <typename T>
struct ModelParams {
    ModelConfig cfg;
    Tensor<T> tok_embedding;  // [v, e]; also the tied output head
    Tensor<T> final_norm_w;
    std::vector<AttambaBlockParams<T>> attamba_layers;
    std::vector<BaselineBlockParams<T>> baseline_layers;

    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
    std::size_t param_count();
};

// Per-layer key/value rows and terminal states captured during a full
// forward, for handoff to the inference cache.
template <typename T>
struct PrefillCapture {
    struct Layer {
        std::vector<T> k_rows, v_rows;  // n * e
        SSMState<T> k_state, v_state;
    };
    std::vector<Layer> layers;
    ChunkPlan plan;
};

struct ForwardOptions {
    const ChunkPlan* plan = nullptr;  // overrides the plan built from config
    int lead_override = 0;            // > 0 replaces config lead
    int swa_window = 0;               // > 0 applies a sliding window (baselines)
    uint64_t plan_seed = 0;           // extra entropy for random plans
    FlopCounter* counter = nullptr;
    void* capture = nullptr;          // PrefillCapture<T>* when capturing
};

// Boundary schedule for a sequence of the given length. Attention-guided
// strategies start from a uniform layout; their later layers are replaced
// during the forward pass once first-layer attention mass is known.
ChunkPlan build_plan(const ModelConfig& cfg, int n, uint64_t extra_seed = 0);

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed);

template <typename T>
Tensor<T> lm_forward(ModelParams<T>& params, const std::vector<int>& tokens,
                     const ForwardOptions& opt = {});

// Mean next-token negative log likelihood of a window of n+1 tokens.
template <typename T>
Tensor<T> lm_loss(ModelParams<T>& params, const std::vector<int>& window,
                  const ForwardOptions& opt = {});

// ---- implementation ---------------------------------------------------------

inline const char* mode_name(ModelMode m) {
    switch (m) {
        case ModelMode::Attamba: return "attamba";
        case ModelMode::PseudoChunk: return "pseudo_chunk";
        case ModelMode::BaselineFull: return "baseline_full";
        case ModelMode::BaselineKvc: return "baseline_kvc";
        case ModelMode::BaselineKvcSwa: return "baseline_kvc_swa";
    }
    throw ContractError("mode_name: unknown mode");
}

inline ModelMode mode_from_name(const std::string& name) {
    if (name == "attamba") return ModelMode::Attamba;
    if (name == "pseudo_chunk") return ModelMode::PseudoChunk;
    if (name == "baseline_full") return ModelMode::BaselineFull;
    if (name == "baseline_kvc") return ModelMode::BaselineKvc;
    if (name == "baseline_kvc_swa") return ModelMode::BaselineKvcSwa;
    throw ConfigError("unknown model mode: " + name);
}

inline void ModelConfig::validate() const {
    if (vocab < 2) throw ConfigError("config: vocabulary too small");
    if (seq_len < 1) throw ConfigError("config: sequence length must be positive");
    if (model_dim < 1 || layers < 0) throw ConfigError("config: bad dimensions");
    if (heads < 1 || model_dim % heads != 0)
        throw ConfigError("config: heads must divide model_dim");
    if (chunk_size < 1) throw ConfigError("config: chunk_size must be positive");
    if (lead < 1) throw ConfigError("config: lead must be positive");
    if (state_dim < 1) throw ConfigError("config: state_dim must be positive");
    if (is_baseline(mode)) {
        if (attn_dim() < 1 || baseline_heads < 1 || attn_dim() % baseline_heads != 0)
            throw ConfigError("config: baseline heads must divide the attention width");
    }
    if (swa_window < 0) throw ConfigError("config: negative window");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelParams<T>::named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("tok_embedding", &tok_embedding);
    out.emplace_back("final_norm.weight", &final_norm_w);
    auto layer_prefix = [](int i) { return "layers." + std::to_string(i) + "."; };
    for (std::size_t i = 0; i < attamba_layers.size(); ++i) {
        auto& l = attamba_layers[i];
        std::string p = layer_prefix(static_cast<int>(i));
        out.emplace_back(p + "attn_norm.weight", &l.attn_norm_w);
        out.emplace_back(p + "w_q", &l.w_q);
        out.emplace_back(p + "w_o", &l.w_o);
        for (auto* ssm : {&l.ssm_k, &l.ssm_v}) {
            std::string sp = p + (ssm == &l.ssm_k ? "ssm_k." : "ssm_v.");
            out.emplace_back(sp + "a_log", &ssm->a_log);
            out.emplace_back(sp + "w_b", &ssm->w_b);
            out.emplace_back(sp + "w_c", &ssm->w_c);
            out.emplace_back(sp + "w_dt", &ssm->w_dt);
            out.emplace_back(sp + "b_dt", &ssm->b_dt);
            out.emplace_back(sp + "d_skip", &ssm->d_skip);
        }
        out.emplace_back(p + "ffn_norm.weight", &l.ffn_norm_w);
        out.emplace_back(p + "ffn.w1", &l.ffn_w1);
        out.emplace_back(p + "ffn.w2", &l.ffn_w2);
    }
    for (std::size_t i = 0; i < baseline_layers.size(); ++i) {
        auto& l = baseline_layers[i];
        std::string p = layer_prefix(static_cast<int>(i));
        out.emplace_back(p + "attn_norm.weight", &l.attn_norm_w);
        out.emplace_back(p + "w_q", &l.w_q);
        out.emplace_back(p + "w_k", &l.w_k);
        out.emplace_back(p + "w_v", &l.w_v);
        out.emplace_back(p + "w_o", &l.w_o);
        out.emplace_back(p + "ffn_norm.weight", &l.ffn_norm_w);
        out.emplace_back(p + "ffn.w1", &l.ffn_w1);
        out.emplace_back(p + "ffn.w2", &l.ffn_w2);
    }
    return out;
}

template <typename T>
std::size_t ModelParams<T>::param_count() {
    std::size_t total = 0;
    for (auto& [name, t] : named_tensors()) total += t->numel();
    return total;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams<T> mp;
    mp.cfg = cfg;
    Rng rng(seed);
    int e = cfg.model_dim, f = cfg.ffn_dim();
    auto dense = [&rng](std::vector<int> shape) {
        Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
        for (std::size_t i = 0; i < t.numel(); ++i)
            t.at(i) = static_cast<T>(rng.trunc_normal(0.02));
        return t;
    };
    mp.tok_embedding = dense({cfg.vocab, e});
    mp.final_norm_w = Tensor<T>::full({e}, T(1), true);
    if (is_baseline(cfg.mode)) {
        int a = cfg.attn_dim();
        for (int i = 0; i < cfg.layers; ++i) {
            BaselineBlockParams<T> l;
            l.attn_norm_w = Tensor<T>::full({e}, T(1), true);
            l.ffn_norm_w = Tensor<T>::full({e}, T(1), true);
            l.w_q = dense({e, a});
            l.w_k = dense({e, a});
            l.w_v = dense({e, a});
            l.w_o = dense({a, e});
            l.ffn_w1 = dense({e, f});
            l.ffn_w2 = dense({f, e});
            mp.baseline_layers.push_back(std::move(l));
        }
    } else {
        for (int i = 0; i < cfg.layers; ++i) {
            AttambaBlockParams<T> l;
            l.attn_norm_w = Tensor<T>::full({e}, T(1), true);
            l.ffn_norm_w = Tensor<T>::full({e}, T(1), true);
            l.w_q = dense({e, e});
            l.w_o = dense({e, e});
            l.ssm_k = init_ssm<T>(e, cfg.state_dim, rng);
            l.ssm_v = init_ssm<T>(e, cfg.state_dim, rng);
            l.ffn_w1 = dense({e, f});
            l.ffn_w2 = dense({f, e});
            mp.attamba_layers.push_back(std::move(l));
        }
    }
    return mp;
}

inline ChunkPlan build_plan(const ModelConfig& cfg, int n, uint64_t extra_seed) {
    int layers = std::max(1, cfg.layers);
    switch (cfg.chunk_strategy) {
        case ChunkStrategy::Uniform: return uniform_plan(n, cfg.chunk_size, layers);
        case ChunkStrategy::Cyclic: return cyclic_plan(n, cfg.chunk_size, layers);
        case ChunkStrategy::Random:
            return random_plan(n, cfg.chunk_size, layers, Rng::mix(cfg.seed, extra_seed));
        case ChunkStrategy::FAttn:
        case ChunkStrategy::FSSM: {
            // Later layers are rewritten from first-layer attention mass.
            ChunkPlan p = uniform_plan(n, cfg.chunk_size, layers);
            p.strategy = cfg.chunk_strategy;
            return p;
        }
    }
    throw ContractError("build_plan: unknown strategy");
}

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const Tensor<T>& norm_w, const Tensor<T>& w1,
                      const Tensor<T>& w2, FlopCounter* counter) {
    Tensor<T> h = rmsnorm(x, norm_w);
    Tensor<T> a = silu(matmul(h, w1, counter));
    return add(x, matmul(a, w2, counter));
}

template <typename T>
Tensor<T> attamba_block_forward(AttambaBlockParams<T>& blk, const Tensor<T>& x,
                                const ChunkPlan& plan, int layer, int lead, ModelMode mode,
                                int heads, std::vector<T>* probs_out, FlopCounter* counter,
                                typename PrefillCapture<T>::Layer* capture) {
    int n = x.dim(0);
    Tensor<T> xn = rmsnorm(x, blk.attn_norm_w);
    Tensor<T> q = matmul(xn, blk.w_q, counter);
    std::vector<uint8_t> resets = resets_from_plan(plan, layer);
    ScanCapture<T> cap_k, cap_v;
    Tensor<T> k = ssm_scan(blk.ssm_k, xn, resets, capture ? &cap_k : nullptr, counter);
    Tensor<T> v = ssm_scan(blk.ssm_v, xn, resets, capture ? &cap_v : nullptr, counter);
    if (capture) {
        capture->k_rows = *k.data;
        capture->v_rows = *v.data;
        capture->k_state = std::move(cap_k.state);
        capture->v_state = std::move(cap_v.state);
    }
    MaskMatrix mask = (mode == ModelMode::PseudoChunk || lead >= n)
                          ? causal_mask(n)
                          : train_mask(plan, layer, lead);
    Tensor<T> attn = multi_head_attention(q, k, v, mask, heads, probs_out, counter);
    Tensor<T> y = add(x, matmul(attn, blk.w_o, counter));
    return ffn_forward(y, blk.ffn_norm_w, blk.ffn_w1, blk.ffn_w2, counter);
}

template <typename T>
Tensor<T> baseline_block_forward(BaselineBlockParams<T>& blk, const Tensor<T>& x, int heads,
                                 int window, FlopCounter* counter) {
    int n = x.dim(0);
    Tensor<T> xn = rmsnorm(x, blk.attn_norm_w);
    Tensor<T> q = matmul(xn, blk.w_q, counter);
    Tensor<T> k = matmul(xn, blk.w_k, counter);
    Tensor<T> v = matmul(xn, blk.w_v, counter);
    MaskMatrix mask = (window > 0 && window < n) ? band_mask(n, window) : causal_mask(n);
    Tensor<T> attn = multi_head_attention(q, k, v, mask, heads, nullptr, counter);
    Tensor<T> y = add(x, matmul(attn, blk.w_o, counter));
    return ffn_forward(y, blk.ffn_norm_w, blk.ffn_w1, blk.ffn_w2, counter);
}

template <typename T>
Tensor<T> lm_forward(ModelParams<T>& params, const std::vector<int>& tokens,
                     const ForwardOptions& opt) {
    const ModelConfig& cfg = params.cfg;
    int n = static_cast<int>(tokens.size());
    if (n < 1) throw ContractError("lm_forward: empty token sequence");
    auto* capture = static_cast<PrefillCapture<T>*>(opt.capture);

    ChunkPlan plan;
    if (opt.plan) {
        plan = *opt.plan;
        if (plan.n != n) throw ContractError("lm_forward: plan length mismatch");
    } else if (!is_baseline(cfg.mode)) {
        plan = build_plan(cfg, n, opt.plan_seed);
    }
    int lead = cfg.mode == ModelMode::PseudoChunk ? n
               : opt.lead_override > 0            ? opt.lead_override
                                                  : cfg.lead;
    bool guided = !is_baseline(cfg.mode) && cfg.mode != ModelMode::PseudoChunk &&
                  (cfg.chunk_strategy == ChunkStrategy::FAttn ||
                   cfg.chunk_strategy == ChunkStrategy::FSSM);
    if (capture && guided)
        throw ContractError("attention-guided chunking has no incremental decode path");

    Tensor<T> x = embedding_lookup(params.tok_embedding, tokens);
    if (capture) capture->layers.resize(std::max(0, cfg.layers));

    for (int l = 0; l < cfg.layers; ++l) {
        try {
            if (is_baseline(cfg.mode)) {
                int window = opt.swa_window;
                x = baseline_block_forward(params.baseline_layers[l], x, cfg.attn_heads(),
                                           window, opt.counter);
                continue;
            }
            std::vector<T> probs;
            bool want_probs = guided && l == 0 && cfg.layers > 1;
            // The first layer of an attention-guided model runs causal (fattn)
            // or uniform (fssm); its attention map picks later boundaries.
            ModelMode block_mode = cfg.mode;
            if (guided && l == 0 && cfg.chunk_strategy == ChunkStrategy::FAttn)
                block_mode = ModelMode::PseudoChunk;
            x = attamba_block_forward(params.attamba_layers[l], x, plan, l, lead, block_mode,
                                      cfg.heads, want_probs ? &probs : nullptr, opt.counter,
                                      capture ? &capture->layers[l] : nullptr);
            if (want_probs) {
                std::vector<double> pd(probs.size());
                for (std::size_t i = 0; i < probs.size(); ++i)
                    pd[i] = static_cast<double>(probs[i]);
                std::vector<int> refined;
                if (cfg.chunk_strategy == ChunkStrategy::FAttn) {
                    refined = fattn_boundaries(pd.data(), cfg.heads, n, cfg.chunk_size);
                } else {
                    auto base = plan.segment_sizes(0);
                    int chunks = static_cast<int>(base.size());
                    std::vector<double> chunk_mass(chunks, 0.0);
                    for (int h = 0; h < cfg.heads; ++h)
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < n; ++j)
                                chunk_mass[plan.completed_chunks(0, j - 1)] +=
                                    pd[(static_cast<std::size_t>(h) * n + i) * n + j];
                    int k = cfg.fssm_splits > 0 ? cfg.fssm_splits
                                                : std::max(1, chunks / 4);
                    refined = fssm_boundaries(n, cfg.chunk_size, chunk_mass, k);
                }
                for (int ll = 1; ll < cfg.layers; ++ll) plan.boundaries[ll] = refined;
                plan.validate();
            }
        } catch (NumericError& err) {
            throw NumericError(std::string(err.what()) + " (layer " + std::to_string(l) +
                               ")");
        }
    }
    x = rmsnorm(x, params.final_norm_w);
    if (capture) capture->plan = plan;
    return matmul_nt(x, params.tok_embedding, opt.counter);  // tied output head
}

template <typename T>
Tensor<T> lm_loss(ModelParams<T>& params, const std::vector<int>& window,
                  const ForwardOptions& opt) {
    if (window.size() < 2) throw ContractError("lm_loss: need at least two tokens");
    std::vector<int> inputs(window.begin(), window.end() - 1);
    std::vector<int> targets(window.begin() + 1, window.end());
    Tensor<T> logits = lm_forward(params, inputs, opt);
    return cross_entropy(logits, targets);
}

}  // namespace attamba
