#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attamba/common.hpp"

namespace attamba {

enum class ChunkStrategy { Uniform, Random, Cyclic, FAttn, FSSM };

const char* strategy_name(ChunkStrategy s);
ChunkStrategy strategy_from_name(const std::string& name);

// Per-layer chunk boundary positions for one sequence. A boundary at j means
// the segment running up to and including j ends there; position n-1 closes
// the final (possibly partial) segment implicitly when it is not listed.
struct ChunkPlan {
    int n = 0;
    int chunk_size = 0;
    ChunkStrategy strategy = ChunkStrategy::Uniform;
    uint64_t seed = 0;
    std::vector<std::vector<int>> boundaries;  // one sorted list per layer

    int layers() const { return static_cast<int>(boundaries.size()); }
    const std::vector<int>& layer_boundaries(int layer) const;

    bool is_boundary(int layer, int pos) const;
    // First position of the segment containing pos.
    int segment_start(int layer, int pos) const;
    // Last position of the segment containing pos (n-1 for the trailing one).
    int segment_end(int layer, int pos) const;
    bool same_segment(int layer, int i, int j) const {
        return segment_start(layer, i) == segment_start(layer, j);
    }
    // Number of chunks whose boundary has been processed at position pos.
    int completed_chunks(int layer, int pos) const;
    std::vector<int> segment_sizes(int layer) const;

    void validate() const;
};

std::vector<int> uniform_boundaries(int n, int chunk_size);
std::vector<int> cyclic_boundaries(int n, int chunk_size, int layer);
std::vector<int> random_boundaries(int n, int chunk_size, uint64_t seed);

// Boundaries for layers after the first, chosen as the positions receiving
// the most attention mass in a first-layer causal attention map
// (probs: heads x n x n, rows are queries). Ties go to the smaller position.
std::vector<int> fattn_boundaries(const double* probs, int heads, int n, int chunk_size);

// Refine a uniform plan by bisecting the k chunks that receive the most
// attention mass; an odd-sized chunk puts the extra token in the left half.
std::vector<int> fssm_boundaries(int n, int chunk_size,
                                 const std::vector<double>& chunk_mass, int k);

ChunkPlan uniform_plan(int n, int chunk_size, int layers);
ChunkPlan cyclic_plan(int n, int chunk_size, int layers);
ChunkPlan random_plan(int n, int chunk_size, int layers, uint64_t seed);

std::string plan_to_json(const ChunkPlan& plan);
ChunkPlan plan_from_json(const std::string& text);

}  // namespace attamba
