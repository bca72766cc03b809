#include "attamba/decode.hpp"

#include <climits>

namespace attamba {
namespace {

int effective_lead(ModelMode mode, int lead) {
    // Pseudo-chunked attention is causal over everything, so nothing ages out.
    return mode == ModelMode::PseudoChunk ? INT_MAX / 4 : lead;
}

bool plan_boundary(const ChunkPlan& plan, int layer, int pos) {
    if (pos < plan.n) return plan.is_boundary(layer, pos);
    int p = plan.chunk_size;
    switch (plan.strategy) {
        case ChunkStrategy::Uniform: return pos % p == p - 1;
        case ChunkStrategy::Cyclic: return (pos + layer) % p == p - 1;
        default:
            throw ContractError(
                "decode ran past the planned length; this boundary schedule does not "
                "extend by formula");
    }
}

ChunkPlan slice_plan(const ChunkPlan& total, int n) {
    ChunkPlan p = total;
    p.n = n;
    for (auto& layer : p.boundaries) {
        auto it = std::lower_bound(layer.begin(), layer.end(), n);
        layer.erase(it, layer.end());
    }
    return p;
}

void check_decodable(const ModelConfig& cfg) {
    if (is_baseline(cfg.mode))
        throw ConfigError("decode cache requires an ssm-compressed model");
    if (cfg.chunk_strategy == ChunkStrategy::FAttn ||
        cfg.chunk_strategy == ChunkStrategy::FSSM)
        throw ConfigError("attention-guided chunking has no incremental decode path");
}

}  // namespace

PrefillResult prefill(ModelParams<float>& model, const std::vector<int>& tokens,
                      int total_len, uint64_t plan_seed) {
    const ModelConfig& cfg = model.cfg;
    cfg.validate();
    check_decodable(cfg);
    int m = static_cast<int>(tokens.size());
    if (m < 1) throw ContractError("prefill: empty prompt");
    if (total_len < m) throw ContractError("prefill: total length below prompt length");

    ChunkPlan total = build_plan(cfg, total_len, plan_seed);
    ChunkPlan prompt_plan = slice_plan(total, m);
    PrefillCapture<float> capture;
    ForwardOptions opt;
    opt.plan = &prompt_plan;
    opt.capture = &capture;
    NoGradGuard no_grad;
    Tensor<float> logits = lm_forward(model, tokens, opt);

    PrefillResult result;
    KVCache& cache = result.cache;
    cache.plan = std::move(total);
    cache.mode = cfg.mode;
    cache.lead = cfg.lead;
    cache.next_pos = m;
    cache.layers.resize(static_cast<std::size_t>(std::max(0, cfg.layers)));

    int e = cfg.model_dim;
    int lead = effective_lead(cfg.mode, cfg.lead);
    for (int l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = cache.layers[l];
        auto& cap = capture.layers[l];
        lc.k_state = std::move(cap.k_state);
        lc.v_state = std::move(cap.v_state);
        lc.seg_start = plan_boundary(cache.plan, l, m - 1)
                           ? m
                           : cache.plan.segment_start(l, m - 1);
        long long cut64 = std::max(0LL, static_cast<long long>(m) - lead + 1);
        int cutoff = static_cast<int>(std::min<long long>(cut64, lc.seg_start));
        for (int b : cache.plan.layer_boundaries(l)) {
            if (b >= cutoff) break;
            lc.boundary_k.insert(lc.boundary_k.end(), cap.k_rows.begin() + 1LL * b * e,
                                 cap.k_rows.begin() + 1LL * (b + 1) * e);
            lc.boundary_v.insert(lc.boundary_v.end(), cap.v_rows.begin() + 1LL * b * e,
                                 cap.v_rows.begin() + 1LL * (b + 1) * e);
            ++lc.boundary_count;
        }
        for (int p = cutoff; p < m; ++p) {
            DecodeEntry entry;
            entry.pos = p;
            entry.k.assign(cap.k_rows.begin() + 1LL * p * e,
                           cap.k_rows.begin() + 1LL * (p + 1) * e);
            entry.v.assign(cap.v_rows.begin() + 1LL * p * e,
                           cap.v_rows.begin() + 1LL * (p + 1) * e);
            lc.window.push_back(std::move(entry));
        }
    }
    result.last_logits.assign(logits.ptr() + 1LL * (m - 1) * cfg.vocab,
                              logits.ptr() + 1LL * m * cfg.vocab);
    return result;
}

std::vector<float> decode_step(ModelParams<float>& model, KVCache& cache, int token) {
    const ModelConfig& cfg = model.cfg;
    check_decodable(cfg);
    if (token < 0 || token >= cfg.vocab)
        throw IndexError("decode_step: token id outside vocabulary");
    if (static_cast<int>(cache.layers.size()) != cfg.layers)
        throw ContractError("decode_step: cache does not match the model");

    int t = cache.next_pos;
    int e = cfg.model_dim, f = cfg.ffn_dim();
    int heads = cfg.heads, d = e / heads;
    int lead = effective_lead(cfg.mode, cfg.lead);
    float scl = 1.0f / std::sqrt(static_cast<float>(d));

    std::vector<float> x(model.tok_embedding.ptr() + 1LL * token * e,
                         model.tok_embedding.ptr() + 1LL * (token + 1) * e);
    std::vector<float> xn(e), q(e), kt(e), vt(e), attn(e), proj(e), yn(e);
    std::vector<float> h1(f);
    std::vector<float> srow;

    for (int l = 0; l < cfg.layers; ++l) {
        AttambaBlockParams<float>& blk = model.attamba_layers[l];
        LayerCache& lc = cache.layers[l];

        detail::rmsnorm_row(x.data(), blk.attn_norm_w.ptr(), e, 1e-5f, xn.data());
        detail::linear_row(xn.data(), blk.w_q.ptr(), e, e, q.data());
        bool reset = lc.seg_start == t;
        ssm_step(blk.ssm_k, lc.k_state, xn.data(), reset, kt.data());
        ssm_step(blk.ssm_v, lc.v_state, xn.data(), reset, vt.data());

        DecodeEntry entry;
        entry.pos = t;
        entry.k = kt;
        entry.v = vt;
        lc.window.push_back(std::move(entry));

        int n_keys = lc.boundary_count + static_cast<int>(lc.window.size());
        auto key_row = [&](int r) {
            return r < lc.boundary_count ? lc.boundary_k.data() + 1LL * r * e
                                         : lc.window[r - lc.boundary_count].k.data();
        };
        auto value_row = [&](int r) {
            return r < lc.boundary_count ? lc.boundary_v.data() + 1LL * r * e
                                         : lc.window[r - lc.boundary_count].v.data();
        };
        std::fill(attn.begin(), attn.end(), 0.0f);
        srow.resize(n_keys);
        for (int h = 0; h < heads; ++h) {
            int hoff = h * d;
            for (int r = 0; r < n_keys; ++r) {
                const float* krow = key_row(r) + hoff;
                float s = 0.0f;
                for (int c = 0; c < d; ++c) s += q[hoff + c] * krow[c];
                srow[r] = s * scl;
            }
            detail::softmax_inplace(srow.data(), n_keys);
            for (int r = 0; r < n_keys; ++r) {
                float pj = srow[r];
                const float* vrow = value_row(r) + hoff;
                for (int c = 0; c < d; ++c) attn[hoff + c] += pj * vrow[c];
            }
        }
        detail::linear_row(attn.data(), blk.w_o.ptr(), e, e, proj.data());
        for (int c = 0; c < e; ++c) x[c] += proj[c];

        detail::rmsnorm_row(x.data(), blk.ffn_norm_w.ptr(), e, 1e-5f, yn.data());
        detail::linear_row(yn.data(), blk.ffn_w1.ptr(), e, f, h1.data());
        for (int c = 0; c < f; ++c) h1[c] = detail::silu_scalar(h1[c]);
        detail::linear_row(h1.data(), blk.ffn_w2.ptr(), f, e, proj.data());
        for (int c = 0; c < e; ++c) x[c] += proj[c];

        int seg_next = plan_boundary(cache.plan, l, t) ? t + 1 : lc.seg_start;
        long long cut64 = std::max(0LL, static_cast<long long>(t) + 2 - lead);
        int cutoff = static_cast<int>(std::min<long long>(cut64, seg_next));
        while (!lc.window.empty() && lc.window.front().pos < cutoff) {
            DecodeEntry& old = lc.window.front();
            if (plan_boundary(cache.plan, l, old.pos)) {
                lc.boundary_k.insert(lc.boundary_k.end(), old.k.begin(), old.k.end());
                lc.boundary_v.insert(lc.boundary_v.end(), old.v.begin(), old.v.end());
                ++lc.boundary_count;
            }
            lc.window.pop_front();
        }
        lc.seg_start = seg_next;
    }

    detail::rmsnorm_row(x.data(), model.final_norm_w.ptr(), e, 1e-5f, yn.data());
    std::vector<float> logits(cfg.vocab);
    detail::linear_nt_row(yn.data(), model.tok_embedding.ptr(), e, cfg.vocab,
                          logits.data());
    for (float v : logits)
        if (!std::isfinite(v)) throw NumericError("decode_step: non-finite logits");
    cache.next_pos = t + 1;
    return logits;
}

CacheReport cache_report(const ModelConfig& cfg, const KVCache& cache) {
    CacheReport r;
    long long e = cfg.model_dim, ds = cfg.state_dim;
    for (const LayerCache& lc : cache.layers) {
        int w = static_cast<int>(lc.window.size());
        r.boundary_entries.push_back(lc.boundary_count);
        r.window_entries.push_back(w);
        long long entries = lc.boundary_count + w;
        r.entries += entries;
        r.bytes += 2 * entries * e * 4 + 2 * e * ds * 4;
    }
    return r;
}

}  // namespace attamba
