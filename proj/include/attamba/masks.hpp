#pragma once

#include <vector>

#include "attamba/chunking.hpp"

namespace attamba {

// Dense boolean attention mask plus per-row allowed-index lists, which is the
// form the attention kernels iterate over.
struct MaskMatrix {
    int n_q = 0;
    int n_k = 0;
    std::vector<uint8_t> allowed;        // n_q * n_k
    std::vector<std::vector<int>> rows;  // sorted allowed key indices per query

    bool at(int i, int j) const {
        if (i < 0 || i >= n_q || j < 0 || j >= n_k)
            throw IndexError("MaskMatrix::at: index out of range");
        return allowed[static_cast<std::size_t>(i) * n_k + j] != 0;
    }
    void finalize();  // build rows, check every query can see something
};

MaskMatrix causal_mask(int n);
// allowed(i, j) iff 0 <= i - j < window
MaskMatrix band_mask(int n, int window);

// Training-time visibility for one layer: a key j is visible to query i when
// j is at or before i and j closes a chunk, shares i's segment, or lies
// within the last `lead` positions.
MaskMatrix train_mask(const ChunkPlan& plan, int layer, int lead);

// Inference-time view of the same row: which completed chunks are attended in
// compressed form, and which raw positions sit in the local window. A chunk
// whose boundary is inside the window is served by the window entry only.
struct VisibleSet {
    std::vector<int> compressed_chunks;   // chunk indices, ascending
    std::vector<int> window_positions;    // positions, ascending
};
VisibleSet test_visible_set(int i, const ChunkPlan& plan, int layer, int lead);

// True when, for every query, the compressed chunks (via their boundary
// positions) plus the window reproduce exactly the training mask row.
bool mask_equivalence_check(const ChunkPlan& plan, int layer, int lead);

}  // namespace attamba
