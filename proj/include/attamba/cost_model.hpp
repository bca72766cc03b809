#pragma once

#include <optional>

#include "attamba/model.hpp"

namespace attamba {

// Closed-form cost accounting for the attention path of one layer stack,
// counted per forward pass. FLOP figures are multiply-accumulate pairs times
// two operands folded into one "flop" unit; byte figures assume f32.
struct CostInputs {
    long long batch = 1;
    long long seq_len = 4096;
    long long model_dim = 512;
    long long heads = 8;
    long long state_dim = 32;
    long long chunk_size = 4;
};

struct CostReport {
    double proj_flops = 0, ssm_flops = 0, attn_flops = 0, total_flops = 0;
    double kv_elements = 0, kv_bytes = 0;
    double activation_elements = 0, activation_bytes = 0;
};

CostReport attamba_cost(const CostInputs& in);
CostReport transformer_cost(long long batch, long long seq_len, long long attn_dim,
                            long long heads);

// Full-attention baseline widths matched to an ssm-compressed model.
// KV match floors to a multiple of heads; FLOP match rounds to the nearest
// multiple; the activation match is exact and absent when no positive width
// satisfies it.
long long solve_iso_kv(long long model_dim, long long chunk_size, long long seq_len,
                       long long state_dim, long long heads);
long long solve_iso_flops(long long model_dim, long long chunk_size, long long seq_len,
                          long long state_dim, long long heads);
std::optional<double> solve_iso_activation(long long model_dim, long long chunk_size,
                                           long long seq_len, long long state_dim,
                                           long long heads);

// Exact parameter count of a model built from this config.
std::size_t model_param_count(const ModelConfig& cfg);

}  // namespace attamba
