#include <cmath>
#include <vector>

#include "attamba/cost_model.hpp"
#include "attamba/model.hpp"
#include "doctest.h"

using namespace attamba;

namespace {

ModelConfig small_config(ModelMode mode = ModelMode::Attamba) {
    ModelConfig cfg;
    cfg.vocab = 61;
    cfg.seq_len = 16;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.chunk_size = 4;
    cfg.lead = 2;
    cfg.state_dim = 3;
    cfg.mode = mode;
    cfg.baseline_attn_dim = 8;
    cfg.baseline_heads = 2;
    return cfg;
}

std::vector<int> random_tokens(int n, int vocab, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> t(n);
    for (int& v : t) v = static_cast<int>(rng.below(static_cast<uint64_t>(vocab)));
    return t;
}

}  // namespace

TEST_CASE("mode names round trip") {
    for (ModelMode m : {ModelMode::Attamba, ModelMode::PseudoChunk, ModelMode::BaselineFull,
                        ModelMode::BaselineKvc, ModelMode::BaselineKvcSwa})
        CHECK(mode_from_name(mode_name(m)) == m);
    CHECK_THROWS_AS(mode_from_name("mamba"), ConfigError);
    CHECK(is_baseline(ModelMode::BaselineKvc));
    CHECK_FALSE(is_baseline(ModelMode::PseudoChunk));
}

TEST_CASE("config defaults and validation") {
    ModelConfig cfg = small_config();
    CHECK(cfg.ffn_dim() == 32);
    cfg.ffn_hidden = 20;
    CHECK(cfg.ffn_dim() == 20);
    cfg.ffn_hidden = 0;
    cfg.heads = 3;  // does not divide model_dim=8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(ModelMode::BaselineKvc);
    cfg.baseline_attn_dim = 6;
    cfg.baseline_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.lead = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    // baseline_full pins the attention width to the model width
    ModelConfig bf = small_config(ModelMode::BaselineFull);
    bf.baseline_attn_dim = 99;
    CHECK(bf.attn_dim() == bf.model_dim);
}

TEST_CASE("parameter count matches the closed form") {
    for (ModelMode mode : {ModelMode::Attamba, ModelMode::BaselineFull,
                           ModelMode::BaselineKvc}) {
        ModelConfig cfg = small_config(mode);
        if (mode == ModelMode::BaselineKvc) cfg.baseline_attn_dim = 4;
        ModelParams<float> mp = init_params<float>(cfg, 5);
        CHECK(mp.param_count() == model_param_count(cfg));
    }
}

TEST_CASE("named tensors are unique and cover every parameter") {
    ModelParams<float> mp = init_params<float>(small_config(), 5);
    auto named = mp.named_tensors();
    CHECK(named.size() == 2 + 2u * 18);  // embedding + final norm + 18 per layer
    for (std::size_t a = 0; a < named.size(); ++a)
        for (std::size_t b = a + 1; b < named.size(); ++b) {
            CHECK(named[a].first != named[b].first);
            CHECK(named[a].second != named[b].second);
        }
}

TEST_CASE("initial loss sits near uniform over the vocabulary") {
    ModelConfig cfg = small_config();
    ModelParams<float> mp = init_params<float>(cfg, 11);
    std::vector<int> window = random_tokens(17, cfg.vocab, 1);
    NoGradGuard ng;
    Tensor<float> loss = lm_loss(mp, window);
    CHECK(loss.at(0) == doctest::Approx(std::log(61.0)).epsilon(0.05));
}

TEST_CASE("compressing with the whole sequence as lead matches plain causal") {
    ModelConfig a = small_config(ModelMode::Attamba);
    ModelConfig b = small_config(ModelMode::PseudoChunk);
    ModelParams<float> pa = init_params<float>(a, 17);
    ModelParams<float> pb = init_params<float>(b, 17);
    std::vector<int> tokens = random_tokens(12, a.vocab, 2);
    NoGradGuard ng;
    ForwardOptions opt;
    opt.lead_override = 12;
    Tensor<float> la = lm_forward(pa, tokens, opt);
    Tensor<float> lb = lm_forward(pb, tokens);
    REQUIRE(la.numel() == lb.numel());
    for (std::size_t i = 0; i < la.numel(); ++i) CHECK(la.at(i) == lb.at(i));
}

TEST_CASE("forward is deterministic for every mode and strategy") {
    for (ModelMode mode : {ModelMode::Attamba, ModelMode::PseudoChunk,
                           ModelMode::BaselineFull, ModelMode::BaselineKvc,
                           ModelMode::BaselineKvcSwa}) {
        ModelConfig cfg = small_config(mode);
        ModelParams<float> mp = init_params<float>(cfg, 23);
        std::vector<int> tokens = random_tokens(16, cfg.vocab, 3);
        NoGradGuard ng;
        ForwardOptions opt;
        if (mode == ModelMode::BaselineKvcSwa) opt.swa_window = 4;
        Tensor<float> l1 = lm_forward(mp, tokens, opt);
        Tensor<float> l2 = lm_forward(mp, tokens, opt);
        CHECK(l1.dim(0) == 16);
        CHECK(l1.dim(1) == cfg.vocab);
        for (std::size_t i = 0; i < l1.numel(); ++i) CHECK(l1.at(i) == l2.at(i));
    }
    for (ChunkStrategy strat : {ChunkStrategy::Random, ChunkStrategy::FAttn,
                                ChunkStrategy::FSSM}) {
        ModelConfig cfg = small_config();
        cfg.chunk_strategy = strat;
        ModelParams<float> mp = init_params<float>(cfg, 29);
        std::vector<int> tokens = random_tokens(16, cfg.vocab, 4);
        NoGradGuard ng;
        Tensor<float> l1 = lm_forward(mp, tokens);
        Tensor<float> l2 = lm_forward(mp, tokens);
        for (std::size_t i = 0; i < l1.numel(); ++i) CHECK(l1.at(i) == l2.at(i));
    }
}

TEST_CASE("a sliding window changes baseline attention") {
    ModelConfig cfg = small_config(ModelMode::BaselineKvcSwa);
    ModelParams<float> mp = init_params<float>(cfg, 31);
    std::vector<int> tokens = random_tokens(16, cfg.vocab, 5);
    NoGradGuard ng;
    ForwardOptions narrow;
    narrow.swa_window = 2;
    ForwardOptions wide;
    wide.swa_window = 16;
    Tensor<float> ln = lm_forward(mp, tokens, narrow);
    Tensor<float> lw = lm_forward(mp, tokens, wide);
    double diff = 0;
    for (std::size_t i = 0; i < ln.numel(); ++i)
        diff = std::max(diff, std::abs(static_cast<double>(ln.at(i)) - lw.at(i)));
    CHECK(diff > 1e-5);
}

TEST_CASE("perturbing a token never changes earlier logits") {
    for (ModelMode mode : {ModelMode::Attamba, ModelMode::BaselineFull}) {
        ModelConfig cfg = small_config(mode);
        cfg.chunk_strategy = ChunkStrategy::Random;
        ModelParams<float> mp = init_params<float>(cfg, 37);
        std::vector<int> tokens = random_tokens(14, cfg.vocab, 6);
        NoGradGuard ng;
        Tensor<float> base = lm_forward(mp, tokens);
        int t = 9;
        std::vector<int> mutated = tokens;
        mutated[t] = (mutated[t] + 1) % cfg.vocab;
        Tensor<float> after = lm_forward(mp, mutated);
        for (int i = 0; i < t; ++i)
            for (int c = 0; c < cfg.vocab; ++c)
                CHECK(base.at(static_cast<std::size_t>(i) * cfg.vocab + c) ==
                      after.at(static_cast<std::size_t>(i) * cfg.vocab + c));
    }
}

TEST_CASE("forward contracts") {
    ModelConfig cfg = small_config();
    ModelParams<float> mp = init_params<float>(cfg, 41);
    NoGradGuard ng;
    CHECK_THROWS_AS(lm_forward(mp, {}), ContractError);
    CHECK_THROWS_AS(lm_forward(mp, {0, 1, 61}), IndexError);  // token out of range

    ChunkPlan plan = uniform_plan(8, 4, 2);
    ForwardOptions opt;
    opt.plan = &plan;
    std::vector<int> tokens = random_tokens(12, cfg.vocab, 7);
    CHECK_THROWS_AS(lm_forward(mp, tokens, opt), ContractError);  // plan length 8 vs 12

    ModelConfig guided = small_config();
    guided.chunk_strategy = ChunkStrategy::FAttn;
    ModelParams<float> gp = init_params<float>(guided, 43);
    PrefillCapture<float> cap;
    ForwardOptions capture_opt;
    capture_opt.capture = &cap;
    CHECK_THROWS_AS(lm_forward(gp, tokens, capture_opt), ContractError);

    CHECK_THROWS_AS(lm_loss(mp, {5}), ContractError);
}

TEST_CASE("training plans with fresh seeds change the loss, fixed seeds do not") {
    ModelConfig cfg = small_config();
    cfg.chunk_strategy = ChunkStrategy::Random;
    ModelParams<float> mp = init_params<float>(cfg, 47);
    std::vector<int> window = random_tokens(17, cfg.vocab, 8);
    NoGradGuard ng;
    ForwardOptions a;
    a.plan_seed = 1;
    ForwardOptions b;
    b.plan_seed = 2;
    float la1 = lm_loss(mp, window, a).at(0);
    float la2 = lm_loss(mp, window, a).at(0);
    float lb = lm_loss(mp, window, b).at(0);
    CHECK(la1 == la2);
    CHECK(la1 != lb);
}

TEST_CASE("whole-model gradient check in double precision") {
    ModelConfig cfg;
    cfg.vocab = 13;
    cfg.seq_len = 8;
    cfg.model_dim = 4;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.chunk_size = 4;
    cfg.lead = 2;
    cfg.state_dim = 2;
    ModelParams<double> mp = init_params<double>(cfg, 56);
    // Gradcheck at generic parameter values: the production init biases the
    // state step size so small that decay gradients sink below the
    // central-difference noise floor. The draw is frozen at a well-conditioned
    // point so the fixed step's truncation term stays far under the tolerance.
    Rng rng(57);
    for (auto& [name, t] : mp.named_tensors()) {
        bool is_gate = name.ends_with("a_log") || name.ends_with("b_dt");
        bool is_norm = name.find("norm") != std::string::npos;
        for (std::size_t i = 0; i < t->numel(); ++i) {
            if (is_gate)
                t->at(i) = rng.normal() * 0.5;
            else if (is_norm)
                t->at(i) = 1.0 + rng.normal() * 0.25;
            else
                t->at(i) = rng.normal() * 0.4;
        }
    }
    std::vector<int> window = random_tokens(9, cfg.vocab, 9);
    auto f = [&] { return lm_loss(mp, window); };
    std::vector<Tensor<double>*> params;
    for (auto& [name, t] : mp.named_tensors()) params.push_back(t);
    CHECK(finite_diff_check<double>(f, params, 1e-5) < 1e-5);
}

TEST_CASE("flop counter sees projections, scans and attention") {
    ModelConfig cfg = small_config();
    ModelParams<float> mp = init_params<float>(cfg, 59);
    std::vector<int> tokens = random_tokens(16, cfg.vocab, 10);
    NoGradGuard ng;
    FlopCounter fc;
    ForwardOptions opt;
    opt.counter = &fc;
    lm_forward(mp, tokens, opt);
    CHECK(fc.matmul_macs > 0);
    CHECK(fc.ssm_macs == 2 * 2 * 16 * 8 * 3 * 5);  // layers * (k,v) * n * e * s * 5
    CHECK(fc.attention_macs() > 0);

    ModelConfig bl = small_config(ModelMode::BaselineFull);
    ModelParams<float> bp = init_params<float>(bl, 59);
    FlopCounter bc;
    ForwardOptions bopt;
    bopt.counter = &bc;
    lm_forward(bp, tokens, bopt);
    CHECK(bc.ssm_macs == 0);
    // causal pairs * width * heads * two sides, both layers
    long long pairs = 16 * 17 / 2;
    CHECK(bc.attention_macs() == 2 * 2 * pairs * 2 * 4);
}
