#include "attamba/cost_model.hpp"

#include <cmath>

namespace attamba {
namespace {

void require_positive(long long v, const char* what) {
    if (v < 1) throw ContractError(std::string("cost model: ") + what + " must be positive");
}

void check_inputs(long long b, long long l, long long e, long long h, long long ds,
                  long long p) {
    require_positive(b, "batch");
    require_positive(l, "seq_len");
    require_positive(e, "model_dim");
    require_positive(h, "heads");
    require_positive(ds, "state_dim");
    require_positive(p, "chunk_size");
    if (e % h != 0) throw ContractError("cost model: heads must divide model_dim");
}

}  // namespace

CostReport attamba_cost(const CostInputs& in) {
    check_inputs(in.batch, in.seq_len, in.model_dim, in.heads, in.state_dim,
                 in.chunk_size);
    double b = static_cast<double>(in.batch);
    double l = static_cast<double>(in.seq_len);
    double e = static_cast<double>(in.model_dim);
    double h = static_cast<double>(in.heads);
    double ds = static_cast<double>(in.state_dim);
    double p = static_cast<double>(in.chunk_size);

    CostReport r;
    r.proj_flops = 2.0 * b * l * e * e;
    r.ssm_flops = 2.0 * b * l * (e / h * (5.0 * h * ds + ds) + 21.0 * ds);
    r.attn_flops = 4.0 * b * l * l * e / p;
    r.total_flops = r.proj_flops + r.ssm_flops + r.attn_flops;
    r.kv_elements = 2.0 * b * l * e / p + 2.0 * b * ds;
    r.kv_bytes = 4.0 * r.kv_elements;
    r.activation_elements = 2.0 * b * l * e * (1.0 + 1.0 / p) + 2.0 * b * ds +
                            b * l * l * h / p;
    r.activation_bytes = 4.0 * r.activation_elements;
    return r;
}

CostReport transformer_cost(long long batch, long long seq_len, long long attn_dim,
                            long long heads) {
    check_inputs(batch, seq_len, attn_dim, heads, 1, 1);
    double b = static_cast<double>(batch);
    double l = static_cast<double>(seq_len);
    double f = static_cast<double>(attn_dim);
    double h = static_cast<double>(heads);

    CostReport r;
    r.proj_flops = 6.0 * b * l * f * f;
    r.ssm_flops = 0.0;
    r.attn_flops = 4.0 * b * l * l * f;
    r.total_flops = r.proj_flops + r.attn_flops;
    r.kv_elements = 2.0 * b * l * f;
    r.kv_bytes = 4.0 * r.kv_elements;
    r.activation_elements = 4.0 * b * l * f + b * l * l * h;
    r.activation_bytes = 4.0 * r.activation_elements;
    return r;
}

long long solve_iso_kv(long long model_dim, long long chunk_size, long long seq_len,
                       long long state_dim, long long heads) {
    check_inputs(1, seq_len, model_dim, heads, state_dim, chunk_size);
    double f = static_cast<double>(model_dim) / static_cast<double>(chunk_size) +
               static_cast<double>(state_dim) / static_cast<double>(seq_len);
    long long down = static_cast<long long>(std::floor(f / static_cast<double>(heads)));
    return std::max(heads, down * heads);
}

long long solve_iso_flops(long long model_dim, long long chunk_size, long long seq_len,
                          long long state_dim, long long heads) {
    check_inputs(1, seq_len, model_dim, heads, state_dim, chunk_size);
    double l = static_cast<double>(seq_len);
    double e = static_cast<double>(model_dim);
    double h = static_cast<double>(heads);
    double ds = static_cast<double>(state_dim);
    double p = static_cast<double>(chunk_size);
    // Match 3F^2 + 2LF against the per-token budget R of the compressed stack.
    double r = e * e + e / h * (5.0 * h * ds + ds) + 21.0 * ds + 2.0 * l * e / p;
    double f = (-l + std::sqrt(l * l + 3.0 * r)) / 3.0;
    long long nearest = static_cast<long long>(std::floor(f / h + 0.5));
    return std::max(heads, nearest * heads);
}

std::optional<double> solve_iso_activation(long long model_dim, long long chunk_size,
                                           long long seq_len, long long state_dim,
                                           long long heads) {
    check_inputs(1, seq_len, model_dim, heads, state_dim, chunk_size);
    double l = static_cast<double>(seq_len);
    double e = static_cast<double>(model_dim);
    double h = static_cast<double>(heads);
    double ds = static_cast<double>(state_dim);
    double p = static_cast<double>(chunk_size);
    double f = (2.0 * l * e * (1.0 + 1.0 / p) + 2.0 * ds + l * l * h * (1.0 / p - 1.0)) /
               (4.0 * l);
    if (!(f > 0.0)) return std::nullopt;
    return f;
}

std::size_t model_param_count(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t e = static_cast<std::size_t>(cfg.model_dim);
    std::size_t f = static_cast<std::size_t>(cfg.ffn_dim());
    std::size_t total = static_cast<std::size_t>(cfg.vocab) * e + e;  // embedding + norm
    std::size_t per_layer;
    if (is_baseline(cfg.mode)) {
        std::size_t a = static_cast<std::size_t>(cfg.attn_dim());
        per_layer = 2 * e + 4 * e * a + 2 * e * f;
    } else {
        per_layer = 2 * e + 2 * e * e +
                    2 * ssm_param_count(cfg.model_dim, cfg.state_dim) + 2 * e * f;
    }
    return total + static_cast<std::size_t>(cfg.layers) * per_layer;
}

}  // namespace attamba
