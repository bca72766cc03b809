#pragma once

#include <deque>

#include "attamba/model.hpp"

namespace attamba {

// Incremental inference cache. Each layer keeps two classes of key/value
// entries: one compressed entry per completed chunk that has left the recency
// window, plus the uncompressed entries still inside the window. Entries are
// evicted eagerly, so the cache never holds rows the next query cannot see.
struct DecodeEntry {
    int pos;
    std::vector<float> k, v;  // model_dim each
};

struct LayerCache {
    std::vector<float> boundary_k, boundary_v;  // boundary_count * model_dim
    int boundary_count = 0;
    std::deque<DecodeEntry> window;             // ascending positions
    SSMState<float> k_state, v_state;
    int seg_start = 0;  // segment start of the next position to process
};

struct KVCache {
    ChunkPlan plan;   // covers the planned total length; formula strategies extend
    ModelMode mode = ModelMode::Attamba;
    int lead = 1;
    int next_pos = 0;
    std::vector<LayerCache> layers;
};

struct CacheReport {
    long long entries = 0;  // summed over layers
    long long bytes = 0;    // k/v rows plus ssm states, f32
    std::vector<int> boundary_entries, window_entries;  // per layer
};

struct PrefillResult {
    KVCache cache;
    std::vector<float> last_logits;
};

// Runs the full forward over the prompt and extracts the cache state. The
// boundary schedule is laid out for total_len positions up front so decoded
// positions continue the same plan.
PrefillResult prefill(ModelParams<float>& model, const std::vector<int>& tokens,
                      int total_len, uint64_t plan_seed = 0);

// Processes one token and returns next-token logits. Matches the full
// forward bit for bit on any position the prompt plan covers.
std::vector<float> decode_step(ModelParams<float>& model, KVCache& cache, int token);

CacheReport cache_report(const ModelConfig& cfg, const KVCache& cache);

}  // namespace attamba
