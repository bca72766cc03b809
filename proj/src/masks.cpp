#include "attamba/masks.hpp"

#include <algorithm>

namespace attamba {

void MaskMatrix::finalize() {
    rows.assign(n_q, {});
    for (int i = 0; i < n_q; ++i) {
        auto& row = rows[i];
        const uint8_t* base = allowed.data() + static_cast<std::size_t>(i) * n_k;
        for (int j = 0; j < n_k; ++j)
            if (base[j]) row.push_back(j);
        if (row.empty())
            throw MaskError("MaskMatrix: query row " + std::to_string(i) +
                            " has no allowed keys");
    }
}

MaskMatrix causal_mask(int n) {
    if (n < 1) throw ContractError("causal_mask: need at least one position");
    MaskMatrix m;
    m.n_q = m.n_k = n;
    m.allowed.assign(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j)
            m.allowed[static_cast<std::size_t>(i) * n + j] = 1;
    m.finalize();
    return m;
}

MaskMatrix band_mask(int n, int window) {
    if (n < 1) throw ContractError("band_mask: need at least one position");
    if (window < 1) throw ContractError("band_mask: window must be positive");
    MaskMatrix m;
    m.n_q = m.n_k = n;
    m.allowed.assign(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = std::max(0, i - window + 1); j <= i; ++j)
            m.allowed[static_cast<std::size_t>(i) * n + j] = 1;
    m.finalize();
    return m;
}

MaskMatrix train_mask(const ChunkPlan& plan, int layer, int lead) {
    if (lead < 1) throw ContractError("train_mask: lead must be positive");
    int n = plan.n;
    if (n < 1) throw ContractError("train_mask: empty plan");
    MaskMatrix m;
    m.n_q = m.n_k = n;
    m.allowed.assign(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
        int seg_start = plan.segment_start(layer, i);
        uint8_t* row = m.allowed.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j <= i; ++j) {
            bool visible = plan.is_boundary(layer, j) || j >= seg_start || i - j < lead;
            if (visible) row[j] = 1;
        }
    }
    m.finalize();
    return m;
}

VisibleSet test_visible_set(int i, const ChunkPlan& plan, int layer, int lead) {
    if (lead < 1) throw ContractError("test_visible_set: lead must be positive");
    if (i < 0 || i >= plan.n) throw IndexError("test_visible_set: position out of range");
    VisibleSet vs;
    int seg_start = plan.segment_start(layer, i);
    int window_from = std::max(0, std::min(i - lead + 1, seg_start));
    for (int j = window_from; j <= i; ++j) vs.window_positions.push_back(j);
    const auto& bounds = plan.layer_boundaries(layer);
    for (std::size_t c = 0; c < bounds.size(); ++c) {
        int b = bounds[c];
        if (b > i) break;                 // chunk not yet complete
        if (b >= window_from) continue;   // already served by the window
        vs.compressed_chunks.push_back(static_cast<int>(c));
    }
    return vs;
}

bool mask_equivalence_check(const ChunkPlan& plan, int layer, int lead) {
    MaskMatrix m = train_mask(plan, layer, lead);
    const auto& bounds = plan.layer_boundaries(layer);
    for (int i = 0; i < plan.n; ++i) {
        VisibleSet vs = test_visible_set(i, plan, layer, lead);
        std::vector<int> positions;
        for (int c : vs.compressed_chunks) positions.push_back(bounds[c]);
        positions.insert(positions.end(), vs.window_positions.begin(),
                         vs.window_positions.end());
        std::sort(positions.begin(), positions.end());
        if (std::adjacent_find(positions.begin(), positions.end()) != positions.end())
            return false;  // a key would enter the softmax twice
        if (positions != m.rows[i]) return false;
    }
    return true;
}

}  // namespace attamba
