#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "attamba/checkpoint.hpp"
#include "doctest.h"

using namespace attamba;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("attamba-ckpt-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

ModelConfig odd_config() {
    ModelConfig cfg;
    cfg.vocab = 37;
    cfg.seq_len = 24;
    cfg.model_dim = 6;
    cfg.heads = 3;
    cfg.layers = 2;
    cfg.chunk_size = 3;
    cfg.lead = 5;
    cfg.state_dim = 4;
    cfg.mode = ModelMode::Attamba;
    cfg.chunk_strategy = ChunkStrategy::Cyclic;
    cfg.ffn_hidden = 20;
    cfg.swa_window = 9;
    cfg.fssm_splits = 2;
    cfg.seed = 0x123456789abcdef0ull;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    TempDir tmp;
    ModelConfig cfg = odd_config();
    ModelParams<float> mp = init_params<float>(cfg, cfg.seed);
    // Scribble on the weights so the file cannot pass by re-deriving the init.
    Rng rng(77);
    for (auto& [name, t] : mp.named_tensors())
        for (std::size_t i = 0; i < t->numel(); ++i)
            t->at(i) += static_cast<float>(rng.normal());

    std::string path = tmp.file("model.bin");
    save_checkpoint(path, mp);
    ModelParams<float> back = load_checkpoint(path);

    CHECK(back.cfg.vocab == cfg.vocab);
    CHECK(back.cfg.seq_len == cfg.seq_len);
    CHECK(back.cfg.model_dim == cfg.model_dim);
    CHECK(back.cfg.heads == cfg.heads);
    CHECK(back.cfg.layers == cfg.layers);
    CHECK(back.cfg.chunk_size == cfg.chunk_size);
    CHECK(back.cfg.lead == cfg.lead);
    CHECK(back.cfg.state_dim == cfg.state_dim);
    CHECK(back.cfg.mode == cfg.mode);
    CHECK(back.cfg.chunk_strategy == cfg.chunk_strategy);
    CHECK(back.cfg.ffn_hidden == cfg.ffn_hidden);
    CHECK(back.cfg.swa_window == cfg.swa_window);
    CHECK(back.cfg.fssm_splits == cfg.fssm_splits);
    CHECK(back.cfg.seed == cfg.seed);  // 64-bit seed survives the f32 container

    auto a = mp.named_tensors();
    auto b = back.named_tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        REQUIRE(a[i].second->numel() == b[i].second->numel());
        for (std::size_t j = 0; j < a[i].second->numel(); ++j)
            CHECK(a[i].second->at(j) == b[i].second->at(j));
    }
}

TEST_CASE("baseline checkpoints keep their projection weights") {
    TempDir tmp;
    ModelConfig cfg = odd_config();
    cfg.mode = ModelMode::BaselineKvc;
    cfg.baseline_attn_dim = 4;
    cfg.baseline_heads = 2;
    ModelParams<float> mp = init_params<float>(cfg, 3);
    mp.baseline_layers[1].w_k.at(0) = 42.5f;
    std::string path = tmp.file("baseline.bin");
    save_checkpoint(path, mp);
    ModelParams<float> back = load_checkpoint(path);
    CHECK(back.cfg.mode == ModelMode::BaselineKvc);
    CHECK(back.baseline_layers[1].w_k.at(0) == 42.5f);
}

TEST_CASE("loader rejects damaged files") {
    TempDir tmp;
    CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.bin")), IoError);

    std::string junk = tmp.file("junk.bin");
    {
        std::ofstream out(junk, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(load_checkpoint(junk), IoError);

    ModelConfig cfg = odd_config();
    cfg.layers = 1;
    ModelParams<float> mp = init_params<float>(cfg, 5);
    std::string good = tmp.file("good.bin");
    save_checkpoint(good, mp);

    // Truncation anywhere in the payload must be caught.
    std::string cut = tmp.file("cut.bin");
    {
        std::ifstream in(good, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(cut), IoError);
}

TEST_CASE("saving to an unwritable path reports an io error") {
    ModelConfig cfg = odd_config();
    cfg.layers = 0;
    ModelParams<float> mp = init_params<float>(cfg, 5);
    CHECK_THROWS_AS(save_checkpoint("/nonexistent-dir/x/y.bin", mp), IoError);
}
