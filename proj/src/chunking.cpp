#include "attamba/chunking.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

namespace attamba {

const char* strategy_name(ChunkStrategy s) {
    switch (s) {
        case ChunkStrategy::Uniform: return "uniform";
        case ChunkStrategy::Random: return "random";
        case ChunkStrategy::Cyclic: return "cyclic";
        case ChunkStrategy::FAttn: return "fattn";
        case ChunkStrategy::FSSM: return "fssm";
    }
    throw ContractError("strategy_name: unknown strategy");
}

ChunkStrategy strategy_from_name(const std::string& name) {
    if (name == "uniform") return ChunkStrategy::Uniform;
    if (name == "random") return ChunkStrategy::Random;
    if (name == "cyclic") return ChunkStrategy::Cyclic;
    if (name == "fattn") return ChunkStrategy::FAttn;
    if (name == "fssm") return ChunkStrategy::FSSM;
    throw ConfigError("unknown chunk strategy: " + name);
}

const std::vector<int>& ChunkPlan::layer_boundaries(int layer) const {
    if (layer < 0 || layer >= layers())
        throw IndexError("ChunkPlan: layer out of range");
    return boundaries[layer];
}

bool ChunkPlan::is_boundary(int layer, int pos) const {
    const auto& b = layer_boundaries(layer);
    return std::binary_search(b.begin(), b.end(), pos);
}

int ChunkPlan::segment_start(int layer, int pos) const {
    if (pos < 0 || pos >= n) throw IndexError("ChunkPlan: position out of range");
    const auto& b = layer_boundaries(layer);
    // First boundary strictly below pos ends the previous segment.
    auto it = std::lower_bound(b.begin(), b.end(), pos);
    if (it == b.begin()) return 0;
    return *(it - 1) + 1;
}

int ChunkPlan::segment_end(int layer, int pos) const {
    if (pos < 0 || pos >= n) throw IndexError("ChunkPlan: position out of range");
    const auto& b = layer_boundaries(layer);
    auto it = std::lower_bound(b.begin(), b.end(), pos);
    return it == b.end() ? n - 1 : *it;
}

int ChunkPlan::completed_chunks(int layer, int pos) const {
    const auto& b = layer_boundaries(layer);
    return static_cast<int>(std::upper_bound(b.begin(), b.end(), pos) - b.begin());
}

std::vector<int> ChunkPlan::segment_sizes(int layer) const {
    std::vector<int> sizes;
    int start = 0;
    for (int b : layer_boundaries(layer)) {
        sizes.push_back(b - start + 1);
        start = b + 1;
    }
    if (start < n) sizes.push_back(n - start);
    return sizes;
}

void ChunkPlan::validate() const {
    if (n < 0) throw ContractError("ChunkPlan: negative length");
    if (boundaries.empty()) throw ContractError("ChunkPlan: no layers");
    for (const auto& b : boundaries) {
        int prev = -1;
        for (int pos : b) {
            if (pos <= prev) throw ContractError("ChunkPlan: boundaries not increasing");
            if (pos < 0 || pos >= n) throw ContractError("ChunkPlan: boundary out of range");
            prev = pos;
        }
    }
}

std::vector<int> uniform_boundaries(int n, int chunk_size) {
    if (n < 0) throw ContractError("uniform_boundaries: negative length");
    if (chunk_size < 1) throw ContractError("uniform_boundaries: chunk size must be positive");
    std::vector<int> b;
    for (int j = chunk_size - 1; j < n; j += chunk_size) b.push_back(j);
    return b;
}

std::vector<int> cyclic_boundaries(int n, int chunk_size, int layer) {
    if (n < 0) throw ContractError("cyclic_boundaries: negative length");
    if (chunk_size < 1) throw ContractError("cyclic_boundaries: chunk size must be positive");
    if (layer < 0) throw ContractError("cyclic_boundaries: negative layer");
    std::vector<int> b;
    for (int j = 0; j < n; ++j)
        if ((j + layer) % chunk_size == chunk_size - 1) b.push_back(j);
    return b;
}

std::vector<int> random_boundaries(int n, int chunk_size, uint64_t seed) {
    if (n < 0) throw ContractError("random_boundaries: negative length");
    if (chunk_size < 1) throw ContractError("random_boundaries: chunk size must be positive");
    if (n < 2) return {};
    int chunks = (n + chunk_size - 1) / chunk_size;
    int picks = chunks - 1;
    if (picks <= 0) return {};
    // Partial Fisher-Yates over [0, n-2]; the final segment always ends at n-1.
    std::vector<int> pool(n - 1);
    for (int i = 0; i < n - 1; ++i) pool[i] = i;
    Rng rng(seed);
    for (int i = 0; i < picks; ++i) {
        int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - 1 - i)));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> b(pool.begin(), pool.begin() + picks);
    std::sort(b.begin(), b.end());
    return b;
}

std::vector<int> fattn_boundaries(const double* probs, int heads, int n, int chunk_size) {
    if (n < 2) return {};
    if (chunk_size < 1) throw ContractError("fattn_boundaries: chunk size must be positive");
    int chunks = (n + chunk_size - 1) / chunk_size;
    int picks = chunks - 1;
    if (picks <= 0) return {};
    std::vector<double> mass(n, 0.0);
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                mass[j] += probs[(static_cast<std::size_t>(h) * n + i) * n + j];
    std::vector<int> order(n);
    for (int j = 0; j < n; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return mass[a] > mass[b]; });
    std::vector<int> b(order.begin(), order.begin() + picks);
    std::sort(b.begin(), b.end());
    return b;
}

std::vector<int> fssm_boundaries(int n, int chunk_size,
                                 const std::vector<double>& chunk_mass, int k) {
    std::vector<int> base = uniform_boundaries(n, chunk_size);
    std::vector<int> starts;
    int start = 0;
    std::vector<int> ends;
    for (int b : base) {
        starts.push_back(start);
        ends.push_back(b);
        start = b + 1;
    }
    if (start < n) {
        starts.push_back(start);
        ends.push_back(n - 1);
    }
    int chunks = static_cast<int>(starts.size());
    if (static_cast<int>(chunk_mass.size()) != chunks)
        throw ContractError("fssm_boundaries: chunk_mass size does not match chunk count");
    if (k < 0) throw ContractError("fssm_boundaries: negative k");
    k = std::min(k, chunks);

    std::vector<int> order(chunks);
    for (int c = 0; c < chunks; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return chunk_mass[a] > chunk_mass[b]; });

    std::vector<int> result = base;
    for (int r = 0; r < k; ++r) {
        int c = order[r];
        int size = ends[c] - starts[c] + 1;
        if (size < 2) continue;  // nothing to bisect
        int left = (size + 1) / 2;
        result.push_back(starts[c] + left - 1);
    }
    std::sort(result.begin(), result.end());
    result.erase(std::unique(result.begin(), result.end()), result.end());
    return result;
}

static ChunkPlan make_plan(int n, int chunk_size, int layers, ChunkStrategy strategy,
                           uint64_t seed) {
    if (layers < 1) throw ContractError("ChunkPlan: need at least one layer");
    ChunkPlan plan;
    plan.n = n;
    plan.chunk_size = chunk_size;
    plan.strategy = strategy;
    plan.seed = seed;
    plan.boundaries.resize(layers);
    return plan;
}

ChunkPlan uniform_plan(int n, int chunk_size, int layers) {
    ChunkPlan plan = make_plan(n, chunk_size, layers, ChunkStrategy::Uniform, 0);
    for (auto& b : plan.boundaries) b = uniform_boundaries(n, chunk_size);
    plan.validate();
    return plan;
}

ChunkPlan cyclic_plan(int n, int chunk_size, int layers) {
    ChunkPlan plan = make_plan(n, chunk_size, layers, ChunkStrategy::Cyclic, 0);
    for (int l = 0; l < layers; ++l)
        plan.boundaries[l] = cyclic_boundaries(n, chunk_size, l);
    plan.validate();
    return plan;
}

ChunkPlan random_plan(int n, int chunk_size, int layers, uint64_t seed) {
    ChunkPlan plan = make_plan(n, chunk_size, layers, ChunkStrategy::Random, seed);
    for (int l = 0; l < layers; ++l)
        plan.boundaries[l] =
            random_boundaries(n, chunk_size, Rng::mix(seed, static_cast<uint64_t>(l)));
    plan.validate();
    return plan;
}

std::string plan_to_json(const ChunkPlan& plan) {
    nlohmann::json j;
    j["n"] = plan.n;
    j["chunk_size"] = plan.chunk_size;
    j["strategy"] = strategy_name(plan.strategy);
    j["seed"] = plan.seed;
    j["boundaries"] = plan.boundaries;
    return j.dump();
}

ChunkPlan plan_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError("plan_from_json: malformed JSON");
    ChunkPlan plan;
    plan.n = j.at("n").get<int>();
    plan.chunk_size = j.at("chunk_size").get<int>();
    plan.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    plan.seed = j.at("seed").get<uint64_t>();
    plan.boundaries = j.at("boundaries").get<std::vector<std::vector<int>>>();
    plan.validate();
    return plan;
}

}  // namespace attamba
