#include <algorithm>

#include "attamba/chunking.hpp"
#include "doctest.h"

using namespace attamba;

TEST_CASE("uniform boundaries close every chunk") {
    CHECK(uniform_boundaries(8, 4) == std::vector<int>{3, 7});
    CHECK(uniform_boundaries(10, 4) == std::vector<int>{3, 7});
    CHECK(uniform_boundaries(12, 4) == std::vector<int>{3, 7, 11});
    CHECK(uniform_boundaries(1, 1) == std::vector<int>{0});
    CHECK(uniform_boundaries(0, 4).empty());
    CHECK(uniform_boundaries(3, 4).empty());
    CHECK_THROWS_AS(uniform_boundaries(4, 0), ContractError);
}

TEST_CASE("cyclic boundaries shift with the layer index") {
    CHECK(cyclic_boundaries(8, 4, 0) == uniform_boundaries(8, 4));
    CHECK(cyclic_boundaries(8, 4, 1) == std::vector<int>{2, 6});
    CHECK(cyclic_boundaries(8, 4, 2) == std::vector<int>{1, 5});
    CHECK(cyclic_boundaries(8, 4, 4) == uniform_boundaries(8, 4));  // period P
    for (int layer = 0; layer < 4; ++layer) {
        auto b = cyclic_boundaries(64, 4, layer);
        for (int pos : b) CHECK((pos + layer) % 4 == 3);
    }
}

TEST_CASE("random boundaries are a sorted sample below the last position") {
    CHECK(random_boundaries(1, 4, 7).empty());
    CHECK(random_boundaries(0, 4, 7).empty());
    CHECK(random_boundaries(2, 1, 7) == std::vector<int>{0});
    CHECK(random_boundaries(4, 4, 7).empty());  // single chunk, nothing to cut

    auto b = random_boundaries(64, 4, 123);
    CHECK(static_cast<int>(b.size()) == 15);  // ceil(64/4) - 1
    CHECK(std::is_sorted(b.begin(), b.end()));
    CHECK(std::adjacent_find(b.begin(), b.end()) == b.end());
    for (int pos : b) {
        CHECK(pos >= 0);
        CHECK(pos <= 62);  // never the final position
    }
    CHECK(random_boundaries(64, 4, 123) == b);       // same seed, same layout
    CHECK(random_boundaries(64, 4, 124) != b);       // fresh seed, fresh layout
}

TEST_CASE("attention-mass boundaries pick the heaviest positions") {
    // Uniform attention over 8 positions: ties resolve toward earlier indices.
    std::vector<double> probs(1 * 8 * 8, 1.0 / 8.0);
    CHECK(fattn_boundaries(probs.data(), 1, 8, 4) == std::vector<int>{0});

    // Brute-force oracle on random mass.
    Rng rng(9);
    int n = 12, heads = 2;
    std::vector<double> p(static_cast<std::size_t>(heads) * n * n);
    for (auto& v : p) v = rng.uniform();
    std::vector<std::pair<double, int>> mass(n);
    for (int j = 0; j < n; ++j) mass[j] = {0.0, j};
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                mass[j].first += p[(static_cast<std::size_t>(h) * n + i) * n + j];
    std::stable_sort(mass.begin(), mass.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
    });
    std::vector<int> expect;
    for (int r = 0; r < 2; ++r) expect.push_back(mass[r].second);  // ceil(12/4)-1 = 2
    std::sort(expect.begin(), expect.end());
    CHECK(fattn_boundaries(p.data(), heads, n, 4) == expect);
}

TEST_CASE("chunk-mass boundaries bisect the heaviest chunks") {
    // Two chunks of four; the first is heavier, so it splits after two tokens.
    CHECK(fssm_boundaries(8, 4, {1.0, 0.5}, 1) == std::vector<int>{1, 3, 7});
    CHECK(fssm_boundaries(8, 4, {0.5, 1.0}, 1) == std::vector<int>{3, 5, 7});
    CHECK(fssm_boundaries(8, 4, {1.0, 0.5}, 99) == std::vector<int>{1, 3, 5, 7});
    // Single-token chunks cannot split further.
    CHECK(fssm_boundaries(4, 1, {1, 1, 1, 1}, 2) == std::vector<int>{0, 1, 2, 3});
    // Odd chunk: five tokens split 3 + 2.
    CHECK(fssm_boundaries(5, 5, {1.0}, 1) == std::vector<int>{2, 4});
    CHECK_THROWS_AS(fssm_boundaries(8, 4, {1.0}, 1), ContractError);
    CHECK_THROWS_AS(fssm_boundaries(8, 4, {1.0, 0.5}, -1), ContractError);
}

TEST_CASE("plan navigation helpers") {
    ChunkPlan plan = cyclic_plan(8, 4, 2);
    CHECK(plan.layers() == 2);
    CHECK(plan.layer_boundaries(1) == std::vector<int>{2, 6});
    CHECK(plan.is_boundary(1, 2));
    CHECK_FALSE(plan.is_boundary(1, 3));
    CHECK(plan.segment_start(1, 5) == 3);
    CHECK(plan.segment_start(1, 2) == 0);
    CHECK(plan.segment_end(1, 5) == 6);
    CHECK(plan.segment_end(1, 7) == 7);  // trailing partial segment
    CHECK(plan.same_segment(1, 3, 5));
    CHECK_FALSE(plan.same_segment(1, 2, 3));
    CHECK(plan.completed_chunks(1, 5) == 1);
    CHECK(plan.completed_chunks(1, 6) == 2);
    CHECK(plan.completed_chunks(1, -1) == 0);
    CHECK(plan.segment_sizes(0) == std::vector<int>{4, 4});
    CHECK(uniform_plan(10, 4, 1).segment_sizes(0) == std::vector<int>{4, 4, 2});
    CHECK_THROWS_AS(plan.layer_boundaries(2), IndexError);
    CHECK_THROWS_AS(plan.segment_start(1, 8), IndexError);
}

TEST_CASE("per-layer random plans differ but stay reproducible") {
    ChunkPlan p1 = random_plan(32, 4, 3, 99);
    ChunkPlan p2 = random_plan(32, 4, 3, 99);
    CHECK(p1.boundaries == p2.boundaries);
    CHECK(p1.boundaries[0] != p1.boundaries[1]);  // layers draw separate layouts
    ChunkPlan p3 = random_plan(32, 4, 3, 100);
    CHECK(p1.boundaries != p3.boundaries);
    p1.validate();
}

TEST_CASE("plan validation rejects malformed layouts") {
    ChunkPlan plan = uniform_plan(8, 4, 1);
    plan.boundaries[0] = {3, 3};
    CHECK_THROWS_AS(plan.validate(), ContractError);
    plan.boundaries[0] = {8};
    CHECK_THROWS_AS(plan.validate(), ContractError);
    plan.boundaries[0] = {-1};
    CHECK_THROWS_AS(plan.validate(), ContractError);
    ChunkPlan empty;
    CHECK_THROWS_AS(empty.validate(), ContractError);
}

TEST_CASE("plan json round trip") {
    ChunkPlan plan = random_plan(16, 4, 3, 42);
    std::string text = plan_to_json(plan);
    ChunkPlan back = plan_from_json(text);
    CHECK(back.n == plan.n);
    CHECK(back.chunk_size == plan.chunk_size);
    CHECK(back.strategy == plan.strategy);
    CHECK(back.seed == plan.seed);
    CHECK(back.boundaries == plan.boundaries);
}

TEST_CASE("strategy names round trip") {
    for (ChunkStrategy s : {ChunkStrategy::Uniform, ChunkStrategy::Random,
                            ChunkStrategy::Cyclic, ChunkStrategy::FAttn,
                            ChunkStrategy::FSSM})
        CHECK(strategy_from_name(strategy_name(s)) == s);
    CHECK_THROWS_AS(strategy_from_name("diagonal"), ConfigError);
}
